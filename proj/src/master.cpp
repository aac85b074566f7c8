#include "rescue/master.hpp"

#include <spdlog/spdlog.h>
#include <unistd.h>

#include <cstring>
#include <set>

namespace rescue {
namespace {

using xmlrpc::Array;
using xmlrpc::Value;

class Args {
 public:
  Args(std::string_view method, const Array& args) : method_(method), args_(args) {}

  void expect(std::size_t count) const {
    if (args_.size() != count) {
      throw ValidationError(std::string(method_) + " takes " + std::to_string(count) + " arguments, got " +
                            std::to_string(args_.size()));
    }
  }
  const std::string& str(std::size_t i) const {
    if (!args_[i].is<std::string>()) {
      throw ValidationError(std::string(method_) + " argument " + std::to_string(i) + " must be a string, got " +
                            args_[i].type_name());
    }
    return args_[i].as<std::string>();
  }
  GraphName name(std::size_t i) const { return GraphName(str(i)); }
  EndpointUri uri(std::size_t i) const { return EndpointUri(str(i)); }
  const Value& raw(std::size_t i) const { return args_[i]; }

 private:
  std::string_view method_;
  const Array& args_;
};

Value uri_list(const std::vector<EndpointUri>& uris) {
  Array out;
  for (const auto& uri : uris) out.emplace_back(uri.str());
  return Value(std::move(out));
}

Value name_list(const NameList& list) {
  Array out;
  for (const auto& [name, members] : list) {
    Array names;
    for (const auto& m : members) names.emplace_back(m);
    out.emplace_back(Array{Value(name), Value(std::move(names))});
  }
  return Value(std::move(out));
}

Value topic_types(const TopicTypes& types) {
  Array out;
  for (const auto& [topic, type] : types) out.emplace_back(Array{Value(topic), Value(type)});
  return Value(std::move(out));
}

[[noreturn]] void crash_now(const char* why) {
  const char prefix[] = "injected crash: ";
  (void)!::write(STDERR_FILENO, prefix, sizeof(prefix) - 1);
  (void)!::write(STDERR_FILENO, why, std::strlen(why));
  (void)!::write(STDERR_FILENO, "\n", 1);
  ::_exit(kCrashExitCode);
}

}  // namespace

void MasterEndpointConfig::validate() const {
  // 0 asks the kernel for a free port.
  if (port < 0 || port > 65535) throw StartupError("port must be in [0, 65535], got " + std::to_string(port));
  if (bind_host.empty()) throw StartupError("bind host must not be empty");
  if (rescue_enabled && checkpoint_path.empty()) throw StartupError("rescue mode needs a checkpoint path");
}

ParamValue param_from_xmlrpc(const Value& value) {
  return std::visit(
      [](const auto& v) -> ParamValue {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, xmlrpc::Struct>) {
          ParamMap map;
          for (const auto& [key, member] : v) map.emplace(key, param_from_xmlrpc(member));
          return ParamValue(std::move(map));
        } else if constexpr (std::is_same_v<T, xmlrpc::Nil> || std::is_same_v<T, Array>) {
          throw ValidationError("parameter values must be scalars or structs");
        } else {
          return ParamValue(v);
        }
      },
      value.data());
}

Value param_to_xmlrpc(const ParamValue& value) {
  return std::visit(
      [](const auto& v) -> Value {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ParamMap>) {
          xmlrpc::Struct out;
          for (const auto& [key, member] : v) out.emplace(key, param_to_xmlrpc(member));
          return Value(std::move(out));
        } else {
          return Value(v);
        }
      },
      value.data);
}

Value system_state_to_xmlrpc(const SystemState& state) {
  return Value(Array{name_list(state.publishers), name_list(state.subscribers), name_list(state.services)});
}

// ---------------------------------------------------------------------------

MasterApi::MasterApi(Registry& registry, EndpointUri self_uri, Hooks hooks)
    : registry_(registry), self_uri_(std::move(self_uri)), hooks_(std::move(hooks)) {}

void MasterApi::publish(std::vector<PublisherUpdate> updates) {
  if (hooks_.publish && !updates.empty()) hooks_.publish(std::move(updates));
}

RpcTriple MasterApi::dispatch(std::string_view method, const Array& args) {
  static const std::set<std::string_view> kMethods{
      "registerPublisher", "unregisterPublisher", "registerSubscriber", "unregisterSubscriber", "registerService",
      "unregisterService", "lookupNode",          "lookupService",      "getSystemState",       "getPublishedTopics",
      "getTopicTypes",     "getUri",              "getPid",             "setParam",             "getParam",
      "deleteParam",       "hasParam",            "getParamNames"};
  if (!kMethods.contains(method) && !(method == "injectCrash" && hooks_.inject_crash)) {
    return RpcTriple::error("unknown method " + std::string(method));
  }
  const Args a(method, args);
  try {
    if (args.empty()) throw ValidationError(std::string(method) + ": missing caller_id");
    a.str(0);

    if (method == "registerPublisher") {
      a.expect(4);
      const auto caller = a.name(0);
      const auto topic = a.name(1);
      auto result = registry_.register_publisher(caller, a.uri(3), topic, a.str(2));
      publish(std::move(result.updates));
      return RpcTriple::success("Registered [" + caller.str() + "] as publisher of [" + topic.str() + "]",
                                uri_list(result.uris));
    }
    if (method == "unregisterPublisher") {
      a.expect(3);
      auto result = registry_.unregister_publisher(a.name(0), a.uri(2), a.name(1));
      publish(std::move(result.updates));
      return RpcTriple::success(result.count ? "Unregistered publisher" : "not a publisher", Value(result.count));
    }
    if (method == "registerSubscriber") {
      a.expect(4);
      const auto caller = a.name(0);
      const auto topic = a.name(1);
      auto result = registry_.register_subscriber(caller, a.uri(3), topic, a.str(2));
      publish(std::move(result.updates));
      return RpcTriple::success("Subscribed [" + caller.str() + "] to [" + topic.str() + "]", uri_list(result.uris));
    }
    if (method == "unregisterSubscriber") {
      a.expect(3);
      auto result = registry_.unregister_subscriber(a.name(0), a.uri(2), a.name(1));
      return RpcTriple::success(result.count ? "Unregistered subscriber" : "not a subscriber", Value(result.count));
    }
    if (method == "registerService") {
      a.expect(4);
      const auto service = a.name(1);
      publish(registry_.register_service(a.name(0), a.uri(3), service, a.uri(2)));
      return RpcTriple::success("Registered [" + a.str(0) + "] as provider of [" + service.str() + "]", Value(1));
    }
    if (method == "unregisterService") {
      a.expect(3);
      const int count = registry_.unregister_service(a.name(0), a.name(1), a.uri(2));
      return RpcTriple::success(count ? "Unregistered service" : "not a provider", Value(count));
    }
    if (method == "lookupNode") {
      a.expect(2);
      const auto name = a.name(1);
      if (auto uri = registry_.lookup_node(name)) return RpcTriple::success("node api", Value(uri->str()));
      return RpcTriple::error("unknown node " + name.str(), Value(""));
    }
    if (method == "lookupService") {
      a.expect(2);
      const auto name = a.name(1);
      if (auto uri = registry_.lookup_service(name)) return RpcTriple::success("rosrpc URI", Value(uri->str()));
      return RpcTriple::error("no provider for service " + name.str(), Value(""));
    }
    if (method == "getSystemState") {
      a.expect(1);
      return RpcTriple::success("current system state", system_state_to_xmlrpc(registry_.get_system_state()));
    }
    if (method == "getPublishedTopics") {
      a.expect(2);
      return RpcTriple::success("current topics", topic_types(registry_.get_published_topics(a.str(1))));
    }
    if (method == "getTopicTypes") {
      a.expect(1);
      return RpcTriple::success("current topic types", topic_types(registry_.get_topic_types()));
    }
    if (method == "getUri") {
      a.expect(1);
      return RpcTriple::success("", Value(self_uri_.str()));
    }
    if (method == "getPid") {
      a.expect(1);
      return RpcTriple::success("", Value(static_cast<std::int64_t>(::getpid())));
    }
    if (method == "setParam") {
      a.expect(3);
      const auto& key = a.str(1);
      registry_.set_param(key, param_from_xmlrpc(a.raw(2)));
      return RpcTriple::success("parameter " + key + " set", Value(0));
    }
    if (method == "getParam") {
      a.expect(2);
      const auto& key = a.str(1);
      if (!ParamTree::is_valid_key(key)) throw ValidationError("invalid parameter key '" + key + "'");
      if (auto value = registry_.get_param(key)) return RpcTriple::success("Parameter [" + key + "]", param_to_xmlrpc(*value));
      return RpcTriple::error("Parameter [" + key + "] is not set", Value(0));
    }
    if (method == "deleteParam") {
      a.expect(2);
      const auto& key = a.str(1);
      if (!registry_.delete_param(key)) return RpcTriple::error("Parameter [" + key + "] is not set", Value(0));
      return RpcTriple::success("parameter " + key + " deleted", Value(0));
    }
    if (method == "hasParam") {
      a.expect(2);
      const auto& key = a.str(1);
      if (!ParamTree::is_valid_key(key)) throw ValidationError("invalid parameter key '" + key + "'");
      return RpcTriple::success(key, Value(registry_.has_param(key)));
    }
    if (method == "getParamNames") {
      a.expect(1);
      Array names;
      for (auto& n : registry_.get_param_names()) names.emplace_back(std::move(n));
      return RpcTriple::success("Parameter names", Value(std::move(names)));
    }
    if (method == "injectCrash" && hooks_.inject_crash) {
      if (args.size() < 2) throw ValidationError("injectCrash takes a mode argument");
      return hooks_.inject_crash(a.str(1), Array(args.begin() + 2, args.end()));
    }
    return RpcTriple::error("unknown method " + std::string(method));
  } catch (const std::exception& e) {
    return RpcTriple::error(e.what());
  }
}

// ---------------------------------------------------------------------------

MasterServer::MasterServer(MasterEndpointConfig config, std::ostream& console) : config_(std::move(config)) {
  config_.validate();

  server_ = std::make_unique<XmlRpcServer>(
      [this](const xmlrpc::MethodCall& call) { return api_->dispatch(call.method, call.params).to_value(); },
      config_.threads);
  if (!server_->bind(config_.bind_host, config_.port)) {
    throw StartupError("cannot bind " + config_.bind_host + ":" + std::to_string(config_.port));
  }

  MasterState initial;
  if (config_.rescue_enabled) {
    std::error_code ec;
    std::filesystem::create_directories(config_.checkpoint_path.parent_path(), ec);
    if (ec) throw StartupError("cannot create " + config_.checkpoint_path.parent_path().string() + ": " + ec.message());

    CheckpointWriter::Options options;
    options.path = config_.checkpoint_path;
    if (config_.test_hooks) {
      options.commit.chunk_size = 128;
      options.commit.probe = [this](CommitStage stage, std::size_t written, std::size_t total) {
        on_commit_progress(stage, written, total);
      };
    }
    writer_ = std::make_unique<CheckpointWriter>(std::move(options));

    RecoveryOptions recovery;
    recovery.checkpoint_path = config_.checkpoint_path;
    recovery.probe = make_liveness_probe();
    recovery.sender = [](const EndpointUri& sub, const GraphName& topic, const std::vector<EndpointUri>& pubs) {
      return notify_publisher_update(sub, topic, pubs);
    };
    recovery.concurrency = config_.probe_concurrency;
    recovery.writer = writer_.get();
    ReconcileResult result;
    try {
      result = recover(recovery);
    } catch (const CheckpointLoadError& e) {
      throw StartupError(std::string(e.what()) + "; inspect or remove the checkpoint file and restart");
    }
    console << describe(result.report, result.state.nodes.size()) << std::endl;
    initial = std::move(result.state);
    report_ = std::move(result.report);
  }

  registry_ = std::make_unique<Registry>(std::move(initial));
  if (writer_) {
    registry_->set_change_listener([writer = writer_.get()](const MasterState& state) { writer->enqueue(state); });
  }
  dispatcher_ = std::make_unique<UpdateDispatcher>(
      [](const EndpointUri& sub, const GraphName& topic, const std::vector<EndpointUri>& pubs) {
        return notify_publisher_update(sub, topic, pubs);
      });

  MasterApi::Hooks hooks;
  hooks.publish = [this](std::vector<PublisherUpdate> updates) { publish(std::move(updates)); };
  if (config_.test_hooks) {
    hooks.inject_crash = [this](const std::string& mode, const xmlrpc::Array& args) { return inject_crash(mode, args); };
  }
  api_ = std::make_unique<MasterApi>(*registry_, server_->uri(), std::move(hooks));

  // Announce before answering so anyone who reaches the endpoint can rely on the banner.
  if (config_.rescue_enabled) console << kRescueBanner << std::endl;
  server_->start();
  console << "master listening at " << server_->uri().str() << std::endl;
}

MasterServer::~MasterServer() {
  if (server_) server_->stop();
}

EndpointUri MasterServer::uri() const { return server_->uri(); }

void MasterServer::publish(std::vector<PublisherUpdate> updates) {
  if (crash_mode_.load() == CrashMode::kBeforeFanout) {
    // The mutation must be durable before the crash, or the scenario would
    // test the async-writer window instead.
    if (writer_) writer_->wait_for(registry_->version(), std::chrono::seconds(5));
    crash_now("after mutation, before publisher-update fan-out");
  }
  dispatcher_->post(updates);
}

RpcTriple MasterServer::inject_crash(const std::string& mode, const xmlrpc::Array& args) {
  if (mode == "immediate") crash_now("immediate");
  if (mode == "during-checkpoint-write") {
    if (!writer_) return RpcTriple::error("checkpointing is disabled (start with --rescue)");
    double fraction = 0.5;
    if (!args.empty()) {
      if (args[0].is<double>()) fraction = args[0].as<double>();
      else if (args[0].is<std::int64_t>()) fraction = static_cast<double>(args[0].as<std::int64_t>());
      else throw ValidationError("crash fraction must be a number");
    }
    crash_fraction_ = std::clamp(fraction, 0.0, 1.0);
    crash_mode_ = CrashMode::kDuringCheckpointWrite;
    return RpcTriple::success("armed: crash during next checkpoint write", Value(1));
  }
  if (mode == "before-fanout") {
    crash_mode_ = CrashMode::kBeforeFanout;
    return RpcTriple::success("armed: crash before next publisher-update fan-out", Value(1));
  }
  return RpcTriple::error("unknown crash mode " + mode);
}

void MasterServer::on_commit_progress(CommitStage stage, std::size_t written, std::size_t total) {
  if (crash_mode_.load() != CrashMode::kDuringCheckpointWrite) return;
  const bool reached = static_cast<double>(written) >= crash_fraction_.load() * static_cast<double>(total);
  if ((stage == CommitStage::kWriting && reached && written < total) || stage == CommitStage::kWritten) {
    crash_now("during checkpoint write, before rename");
  }
}

}  // namespace rescue
