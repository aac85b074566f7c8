#include <fmt/format.h>
#include <unistd.h>

#include <random>
#include <stdexcept>
#include <thread>

#include "rescue/harness/harness.hpp"
#include "rescue/master.hpp"

namespace rescue::harness {
namespace {

using namespace std::chrono_literals;
using xmlrpc::Array;
using xmlrpc::Value;

struct Aborted {};

std::string join(const std::vector<std::string>& items) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out + "]";
}

// Shared plumbing for one scenario run: scratch directory, one master on a
// fixed port that survives restarts, and the step log.
class Run {
 public:
  Run(std::string case_id, const HarnessConfig& config) : config_(config) {
    report_.case_id = std::move(case_id);
    dir_ = config.work_dir / fmt::format("{}-{}", report_.case_id, ::getpid());
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
    options_.binary = config.master_binary;
    options_.port = pick_free_port();
    options_.rescue = true;
    options_.checkpoint_path = dir_ / "latest-chkpt.yaml";
  }

  ~Run() {
    if (master_) master_->kill();
  }

  bool step(std::string description, bool pass, std::string detail = {}) {
    report_.steps.push_back({std::move(description), pass, std::move(detail)});
    return pass;
  }

  // A failed required step makes the rest of the scenario meaningless.
  void require(std::string description, bool pass, std::string detail = {}) {
    if (!step(std::move(description), pass, std::move(detail))) throw Aborted{};
  }

  MasterProcess& start_master(const std::string& what) {
    options_.log_path = dir_ / fmt::format("master-{}.log", starts_++);
    master_ = MasterProcess::start(options_);
    const bool ready = master_->wait_ready(10s);
    require(what, ready && master_->log().find(kRescueBanner) != std::string::npos,
            ready ? "no rescue banner in log: " + master_->log() : "master did not answer getPid; log: " + master_->log());
    report_.recovery_ms = master_->recovery_ms();
    return *master_;
  }

  void crash_master() {
    master_->kill();
    step("master killed with SIGKILL", !master_->running());
  }

  MasterProcess& master() { return *master_; }
  EndpointUri uri() const { return EndpointUri(fmt::format("http://127.0.0.1:{}/", options_.port)); }
  const std::filesystem::path& checkpoint() const { return options_.checkpoint_path; }

  // Waits until the checkpoint holds exactly what the live master reports.
  void converge() {
    const auto live = fetch_system_state(uri());
    const auto params = master_call(uri(), "getParam", {Value("/harness"), Value("/")}).value;
    const bool ok = wait_for_checkpoint(
                        checkpoint(),
                        [&](const MasterState& s) {
                          return get_system_state(s) == live && param_to_xmlrpc(ParamValue(s.params.root())) == params;
                        },
                        2s)
                        .has_value();
    require("checkpoint caught up with the live graph", ok);
  }

  ScenarioReport finish() {
    if (master_) master_->kill();
    if (report_.passed()) std::filesystem::remove_all(dir_);
    return std::move(report_);
  }

 private:
  const HarnessConfig& config_;
  ScenarioReport report_;
  std::filesystem::path dir_;
  MasterProcess::Options options_;
  std::optional<MasterProcess> master_;
  int starts_ = 0;
};

std::string param_bytes(const EndpointUri& master) {
  const auto triple = master_call(master, "getParam", {Value("/harness"), Value("/")});
  return triple.code == RpcTriple::kSuccess ? xmlrpc::encode_value(triple.value) : "<" + triple.status + ">";
}

std::string topic_types_bytes(const EndpointUri& master) {
  return xmlrpc::encode_value(master_call(master, "getTopicTypes", {Value("/harness")}).value);
}

// Talker/listener; crash; restart; the graph and a late subscriber must see
// exactly what they would have seen without the crash.
void case0(Run& run) {
  const auto started = std::chrono::steady_clock::now();
  run.start_master("master starts with rescue enabled");
  const auto uri = run.uri();
  auto talker = SimNode::spawn(SimNodeSpec::publisher("/talker", "/chatter", "std_msgs/String"), uri);
  auto listener = SimNode::spawn(SimNodeSpec::subscriber("/listener", "/chatter", "std_msgs/String"), uri);
  master_call(uri, "setParam", {Value("/case0"), Value("/demo/rate"), Value(10)});
  run.require("listener connected to talker",
              listener->wait_for_publishers("/chatter", {talker->api_uri().str()}, 2s));

  const auto state_before = fetch_system_state_bytes(uri);
  const auto params_before = param_bytes(uri);
  const auto types_before = topic_types_bytes(uri);
  run.converge();

  run.crash_master();
  run.start_master("master restarts and recovers");

  const auto state_after = fetch_system_state_bytes(uri);
  run.step("getSystemState identical to before the crash", state_after == state_before,
           state_after == state_before ? "" : "before " + state_before + "\nafter " + state_after);
  run.step("parameters identical to before the crash", param_bytes(uri) == params_before);
  run.step("topic types identical to before the crash", topic_types_bytes(uri) == types_before);

  auto late = SimNode::spawn(SimNodeSpec::subscriber("/listener_late", "/chatter", "std_msgs/String"), uri);
  const auto known = late->known_publishers("/chatter");
  run.step("new subscriber is told the original talker's URI", known == std::vector{talker->api_uri().str()},
           join(known));

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  run.step("scenario completes within 10 s", wall < 10.0, fmt::format("{:.2f} s", wall));
}

// A node dies while the master is down; the recovered master must forget it
// and otherwise match a fresh registration of the survivors.
void case1(Run& run) {
  run.start_master("master starts with rescue enabled");
  const auto uri = run.uri();
  auto talker = SimNode::spawn(SimNodeSpec::publisher("/talker", "/chatter", "std_msgs/String"), uri);
  auto listener = SimNode::spawn(SimNodeSpec::subscriber("/listener", "/chatter", "std_msgs/String"), uri);
  auto doomed = SimNode::spawn(SimNodeSpec::subscriber("/listener2", "/chatter", "std_msgs/String"), uri);
  auto adder = SimNode::spawn(SimNodeSpec::service("/add_two_ints_server", "/add_two_ints"), uri);
  run.converge();

  run.crash_master();
  doomed->kill();
  run.step("node /listener2 killed while the master is down", doomed->killed());
  run.start_master("master restarts and recovers");

  const auto rebuilt = rebuild_from_specs({talker.get(), listener.get(), adder.get()});
  const auto live = fetch_system_state(uri);
  run.step("recovered state equals a fresh registration of the surviving nodes", live == get_system_state(rebuilt));
  const auto lookup = master_call(uri, "lookupNode", {Value("/harness"), Value("/listener2")});
  run.step("dead node is no longer known", lookup.code == RpcTriple::kError, lookup.status);
  const auto service = master_call(uri, "lookupService", {Value("/harness"), Value("/add_two_ints")});
  run.step("service survives recovery",
           service.code == RpcTriple::kSuccess && service.value.as<std::string>() == adder->service_uri());
  const auto persisted =
      wait_for_checkpoint(run.checkpoint(), [&](const MasterState& s) { return s == rebuilt; }, 2s);
  run.step("recovered state is checkpointed", persisted.has_value());
}

// The master commits an unregistration and dies before telling subscribers;
// after recovery the subscriber must converge on the true publisher set.
void case2(Run& run) {
  run.start_master("master starts with rescue enabled");
  const auto uri = run.uri();
  auto listener = SimNode::spawn(SimNodeSpec::subscriber("/listener", "/chatter", "std_msgs/String"), uri);
  auto talker = SimNode::spawn(SimNodeSpec::publisher("/talker", "/chatter", "std_msgs/String"), uri);
  auto talker2 = SimNode::spawn(SimNodeSpec::publisher("/talker2", "/chatter", "std_msgs/String"), uri);
  const std::vector<std::string> both{talker->api_uri().str(), talker2->api_uri().str()};
  const std::vector<std::string> only{talker->api_uri().str()};
  run.require("listener knows both talkers", listener->wait_for_publishers("/chatter", both, 2s));

  const auto armed = master_call(uri, "injectCrash", {Value("/case2"), Value("before-fanout")});
  run.require("crash armed before fan-out", armed.code == RpcTriple::kSuccess, armed.status);
  try {
    talker2->unregister_publisher("/chatter", 3s);
  } catch (const RpcTransportError&) {
    // The master dies mid-call.
  }
  const auto status = run.master().wait_exit(5s);
  run.require("master crashed before fanning out the unregistration", status == kCrashExitCode,
              status ? fmt::format("exit {}", *status) : "still running");

  const auto on_disk = load_checkpoint_file(run.checkpoint());
  const auto committed = publisher_apis(on_disk, GraphName("/chatter"));
  run.step("unregistration was committed", committed.size() == 1 && committed[0].str() == only[0]);
  run.step("listener still holds the stale publisher list", listener->known_publishers("/chatter") == both,
           join(listener->known_publishers("/chatter")));

  run.start_master("master restarts and recovers");
  const bool converged = listener->wait_for_publishers("/chatter", only, 2s);
  run.step("listener is renotified with the surviving publisher", converged,
           join(listener->known_publishers("/chatter")));
  const auto updates = listener->recorded_updates();
  run.step("renotification came from the master", !updates.empty() && updates.back().caller == "/master");
}

// The master dies halfway through writing a checkpoint; the previous
// checkpoint must survive intact and be what the next master recovers.
void case3(Run& run) {
  run.start_master("master starts with rescue enabled");
  const auto uri = run.uri();
  auto talker = SimNode::spawn(SimNodeSpec::publisher("/talker", "/chatter", "std_msgs/String"), uri);
  auto listener = SimNode::spawn(SimNodeSpec::subscriber("/listener", "/chatter", "std_msgs/String"), uri);
  run.converge();
  const auto before = load_checkpoint_file(run.checkpoint());

  std::mt19937 rng(std::random_device{}());
  const double fraction = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
  const auto armed =
      master_call(uri, "injectCrash", {Value("/case3"), Value("during-checkpoint-write"), Value(fraction)});
  run.require("crash armed during checkpoint write", armed.code == RpcTriple::kSuccess, armed.status);
  try {
    master_call(uri, "setParam", {Value("/case3"), Value("/case3/trigger"), Value(std::string(4096, 'x'))});
  } catch (const RpcTransportError&) {
  }
  const auto status = run.master().wait_exit(5s);
  run.require("master crashed while writing the checkpoint", status == kCrashExitCode,
              fmt::format("fraction {:.2f}, {}", fraction, status ? fmt::format("exit {}", *status) : "still running"));

  std::string error;
  std::optional<MasterState> after;
  try {
    after = load_checkpoint_file(run.checkpoint());
  } catch (const CheckpointLoadError& e) {
    error = e.what();
  }
  run.require("checkpoint still loads", after.has_value(), error);
  run.step("checkpoint is the last complete one", *after == before);

  run.start_master("master restarts and recovers");
  run.step("recovered graph matches the last complete checkpoint",
           fetch_system_state(uri) == get_system_state(before));
  const auto has = master_call(uri, "hasParam", {Value("/harness"), Value("/case3/trigger")});
  run.step("uncommitted parameter is absent", has.code == RpcTriple::kSuccess && !has.value.as<bool>());
}

}  // namespace

ScenarioReport run_scenario(const std::string& case_id, const HarnessConfig& config) {
  void (*body)(Run&) = nullptr;
  if (case_id == "case0") body = case0;
  else if (case_id == "case1") body = case1;
  else if (case_id == "case2") body = case2;
  else if (case_id == "case3") body = case3;
  else throw std::invalid_argument("unknown scenario '" + case_id + "' (expected case0..case3)");

  Run run(case_id, config);
  try {
    body(run);
  } catch (const Aborted&) {
  } catch (const std::exception& e) {
    run.step("scenario ran without errors", false, e.what());
  }
  return run.finish();
}

}  // namespace rescue::harness
