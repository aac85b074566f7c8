#include "rescue/harness/sim_node.hpp"

#include <unistd.h>
#include <yaml-cpp/yaml.h>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rescue::harness {
namespace {

using xmlrpc::Array;
using xmlrpc::Value;

TopicRole::Direction default_direction(SimNodeSpec::Role role) {
  return role == SimNodeSpec::Role::kSubscriber ? TopicRole::Direction::kSubscribe : TopicRole::Direction::kPublish;
}

SimNodeSpec::Role parse_role(const std::string& text) {
  if (text == "publisher") return SimNodeSpec::Role::kPublisher;
  if (text == "subscriber") return SimNodeSpec::Role::kSubscriber;
  if (text == "service") return SimNodeSpec::Role::kService;
  if (text == "mixed") return SimNodeSpec::Role::kMixed;
  throw ValidationError("unknown node role '" + text + "'");
}

void check(const RpcTriple& triple, const std::string& what) {
  if (triple.code != RpcTriple::kSuccess) throw std::runtime_error(what + " failed: " + triple.status);
}

std::vector<std::string> strings_of(const Value& value) {
  std::vector<std::string> out;
  for (const auto& v : value.as<Array>()) out.push_back(v.as<std::string>());
  return out;
}

}  // namespace

void SimNodeSpec::validate() const {
  if (topics.empty() && services.empty()) throw ValidationError("node " + name.str() + " has no registrations");
  for (const auto& t : topics) {
    if (role == Role::kPublisher && t.direction != TopicRole::Direction::kPublish) {
      throw ValidationError("publisher node " + name.str() + " cannot subscribe to " + t.topic.str());
    }
    if (role == Role::kSubscriber && t.direction != TopicRole::Direction::kSubscribe) {
      throw ValidationError("subscriber node " + name.str() + " cannot publish " + t.topic.str());
    }
    if (role == Role::kService) throw ValidationError("service node " + name.str() + " cannot use topics");
  }
  if (!services.empty() && role != Role::kService && role != Role::kMixed) {
    throw ValidationError("node " + name.str() + " provides services but is not a service or mixed node");
  }
}

SimNodeSpec SimNodeSpec::publisher(std::string name, std::string topic, std::string datatype) {
  return {GraphName(std::move(name)), Role::kPublisher,
          {{GraphName(std::move(topic)), std::move(datatype), TopicRole::Direction::kPublish}}, {}};
}

SimNodeSpec SimNodeSpec::subscriber(std::string name, std::string topic, std::string datatype) {
  return {GraphName(std::move(name)), Role::kSubscriber,
          {{GraphName(std::move(topic)), std::move(datatype), TopicRole::Direction::kSubscribe}}, {}};
}

SimNodeSpec SimNodeSpec::service(std::string name, std::string service) {
  return {GraphName(std::move(name)), Role::kService, {}, {GraphName(std::move(service))}};
}

std::vector<SimNodeSpec> parse_sim_specs(const std::string& yaml) {
  std::vector<SimNodeSpec> out;
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("node spec: ") + e.what());
  }
  if (!root.IsSequence()) throw ValidationError("node spec must be a list of nodes");
  try {
    for (const auto& item : root) {
      SimNodeSpec spec;
      spec.name = GraphName(item["name"].as<std::string>());
      spec.role = parse_role(item["role"] ? item["role"].as<std::string>() : "mixed");
      if (const auto topics = item["topics"]) {
        for (const auto& t : topics) {
          TopicRole role{GraphName(t["topic"].as<std::string>()), t["type"].as<std::string>(),
                         default_direction(spec.role)};
          if (const auto dir = t["direction"]) {
            const auto d = dir.as<std::string>();
            if (d == "publish") role.direction = TopicRole::Direction::kPublish;
            else if (d == "subscribe") role.direction = TopicRole::Direction::kSubscribe;
            else throw ValidationError("unknown topic direction '" + d + "'");
          } else if (spec.role == SimNodeSpec::Role::kMixed) {
            throw ValidationError("mixed node " + spec.name.str() + " must give a direction for " + role.topic.str());
          }
          spec.topics.push_back(std::move(role));
        }
      }
      if (const auto services = item["services"]) {
        for (const auto& s : services) spec.services.emplace_back(s.as<std::string>());
      }
      spec.validate();
      out.push_back(std::move(spec));
    }
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("node spec: ") + e.what());
  }
  return out;
}

std::vector<SimNodeSpec> load_sim_specs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_sim_specs(buffer.str());
}

// ---------------------------------------------------------------------------

SimNode::SimNode(SimNodeSpec spec, EndpointUri master_uri) : spec_(std::move(spec)), master_uri_(std::move(master_uri)) {}

std::unique_ptr<SimNode> SimNode::spawn(SimNodeSpec spec, const EndpointUri& master_uri) {
  spec.validate();
  std::unique_ptr<SimNode> node(new SimNode(std::move(spec), master_uri));
  node->server_ = std::make_unique<XmlRpcServer>(
      [raw = node.get()](const xmlrpc::MethodCall& call) { return raw->handle(call); }, 4);
  if (!node->server_->bind("127.0.0.1", 0)) throw std::runtime_error("cannot bind a node endpoint");
  node->server_->start();
  node->register_all();
  return node;
}

SimNode::~SimNode() { kill(); }

std::string SimNode::service_uri() const { return "rosrpc://127.0.0.1:" + std::to_string(server_->port()); }

void SimNode::register_all() {
  const Value caller(spec_.name.str());
  const Value api(api_uri().str());
  for (const auto& t : spec_.topics) {
    if (t.direction == TopicRole::Direction::kPublish) {
      check(call_api(master_uri_, "registerPublisher", {caller, Value(t.topic.str()), Value(t.datatype), api}),
            "registerPublisher " + t.topic.str());
    } else {
      const auto triple =
          call_api(master_uri_, "registerSubscriber", {caller, Value(t.topic.str()), Value(t.datatype), api});
      check(triple, "registerSubscriber " + t.topic.str());
      std::lock_guard lock(mutex_);
      // A publisherUpdate may already have overtaken the registration answer.
      known_publishers_.try_emplace(t.topic.str(), strings_of(triple.value));
    }
  }
  for (const auto& s : spec_.services) {
    check(call_api(master_uri_, "registerService", {caller, Value(s.str()), Value(service_uri()), api}),
          "registerService " + s.str());
  }
}

xmlrpc::Value SimNode::handle(const xmlrpc::MethodCall& call) {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return !paused_ || killed_; });
  if (killed_) return RpcTriple::error("node is shutting down").to_value();

  if (call.method == "getPid") return RpcTriple::success("", Value(static_cast<std::int64_t>(::getpid()))).to_value();
  if (call.method == "publisherUpdate") {
    const auto& p = call.params;
    if (p.size() != 3 || !p[0].is<std::string>() || !p[1].is<std::string>() || !p[2].is<Array>()) {
      return RpcTriple::error("publisherUpdate(caller_id, topic, publishers)").to_value();
    }
    RecordedUpdate update{p[0].as<std::string>(), p[1].as<std::string>(), strings_of(p[2])};
    known_publishers_[update.topic] = update.publishers;
    updates_.push_back(std::move(update));
    cv_.notify_all();
    return RpcTriple::success("", Value(0)).to_value();
  }
  return RpcTriple::error("unknown method " + call.method).to_value();
}

void SimNode::kill() {
  {
    std::lock_guard lock(mutex_);
    if (killed_) return;
    killed_ = true;
  }
  cv_.notify_all();
  if (server_) server_->stop();
}

void SimNode::pause() {
  std::lock_guard lock(mutex_);
  paused_ = true;
}

void SimNode::resume() {
  {
    std::lock_guard lock(mutex_);
    paused_ = false;
  }
  cv_.notify_all();
}

bool SimNode::killed() const {
  std::lock_guard lock(mutex_);
  return killed_;
}

std::vector<SimNode::RecordedUpdate> SimNode::recorded_updates() const {
  std::lock_guard lock(mutex_);
  return updates_;
}

std::vector<std::string> SimNode::known_publishers(const std::string& topic) const {
  std::lock_guard lock(mutex_);
  auto it = known_publishers_.find(topic);
  return it == known_publishers_.end() ? std::vector<std::string>{} : it->second;
}

bool SimNode::wait_for_publishers(const std::string& topic, const std::vector<std::string>& expected,
                                  std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [&] {
    auto it = known_publishers_.find(topic);
    return it != known_publishers_.end() && it->second == expected;
  });
}

RpcTriple SimNode::unregister_publisher(const std::string& topic, std::chrono::milliseconds timeout) {
  return call_api(master_uri_, "unregisterPublisher",
                  {Value(spec_.name.str()), Value(topic), Value(api_uri().str())}, timeout);
}

RpcTriple SimNode::unregister_subscriber(const std::string& topic, std::chrono::milliseconds timeout) {
  return call_api(master_uri_, "unregisterSubscriber",
                  {Value(spec_.name.str()), Value(topic), Value(api_uri().str())}, timeout);
}

}  // namespace rescue::harness
