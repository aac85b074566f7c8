#include "rescue/registry.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

namespace rescue {
namespace {

using TopicSet = std::set<GraphName>;

bool holds_registrations(const MasterState& state, const GraphName& node) {
  for (const auto& [name, topic] : state.topics) {
    if (topic.publishers.contains(node) || topic.subscribers.contains(node)) return true;
  }
  for (const auto& [name, service] : state.services) {
    if (service.provider == node) return true;
  }
  return false;
}

void prune_node_if_orphan(MasterState& state, const GraphName& node) {
  if (!holds_registrations(state, node)) state.nodes.erase(node);
}

void prune_topic_if_empty(MasterState& state, const GraphName& topic) {
  auto it = state.topics.find(topic);
  if (it != state.topics.end() && it->second.publishers.empty() && it->second.subscribers.empty()) {
    state.topics.erase(it);
  }
}

std::vector<PublisherUpdate> updates_for(const MasterState& state, const TopicSet& touched) {
  std::vector<PublisherUpdate> out;
  for (const auto& topic : touched) {
    auto it = state.topics.find(topic);
    if (it == state.topics.end() || it->second.subscribers.empty()) continue;
    out.push_back({topic, subscriber_apis(state, topic), publisher_apis(state, topic)});
  }
  return out;
}

// Removes every registration of `node`; records topics whose publisher set
// shrank. Returns true when anything was removed.
bool drop_node_into(MasterState& state, const GraphName& node, TopicSet& touched) {
  if (!state.nodes.contains(node)) return false;
  std::vector<GraphName> emptied;
  for (auto& [name, topic] : state.topics) {
    if (topic.publishers.erase(node)) touched.insert(name);
    topic.subscribers.erase(node);
    if (topic.publishers.empty() && topic.subscribers.empty()) emptied.push_back(name);
  }
  for (const auto& name : emptied) state.topics.erase(name);
  std::erase_if(state.services, [&](const auto& entry) { return entry.second.provider == node; });
  state.nodes.erase(node);
  return true;
}

// Upserts the node record. A known name with a different URI is treated as a
// restarted node: the stale incarnation and all its registrations are dropped.
bool touch_node(MasterState& state, const GraphName& caller, const EndpointUri& api, TopicSet& touched) {
  auto it = state.nodes.find(caller);
  if (it != state.nodes.end()) {
    if (it->second.api_uri == api) return false;
    spdlog::info("node {} re-registered from {} (was {}); dropping stale registrations", caller.str(), api.str(),
                 it->second.api_uri.str());
    drop_node_into(state, caller, touched);
  }
  state.nodes.emplace(caller, NodeRecord{caller, api});
  return true;
}

TopicRecord& ensure_topic(MasterState& state, const GraphName& topic, const std::string& datatype, bool& changed) {
  auto [it, inserted] = state.topics.try_emplace(topic);
  auto& record = it->second;
  if (inserted) {
    record.name = topic;
    record.datatype = datatype;
    changed = true;
  } else if (datatype != kAnyDatatype) {
    if (record.datatype == kAnyDatatype) {
      record.datatype = datatype;
      changed = true;
    } else if (record.datatype != datatype) {
      spdlog::warn("topic {} registered as {} but already typed {}; keeping {}", topic.str(), datatype,
                   record.datatype, record.datatype);
    }
  }
  return record;
}

void require_datatype(const std::string& datatype, bool allow_any) {
  if (datatype.empty()) throw ValidationError("empty topic datatype");
  if (!allow_any && datatype == kAnyDatatype) throw ValidationError("publishers must declare a concrete datatype");
}

std::vector<EndpointUri> apis_of(const MasterState& state, const std::set<GraphName>& names) {
  std::vector<EndpointUri> out;
  out.reserve(names.size());
  for (const auto& name : names) out.push_back(state.nodes.at(name).api_uri);
  return out;
}

}  // namespace

RegistrationResult register_publisher(MasterState& state, const GraphName& caller, const EndpointUri& caller_api,
                                      const GraphName& topic, const std::string& datatype) {
  require_datatype(datatype, false);
  TopicSet touched{topic};
  bool changed = touch_node(state, caller, caller_api, touched);
  auto& record = ensure_topic(state, topic, datatype, changed);
  changed |= record.publishers.insert(caller).second;
  if (changed) ++state.version;
  return {subscriber_apis(state, topic), updates_for(state, touched)};
}

UnregistrationResult unregister_publisher(MasterState& state, const GraphName& caller, const EndpointUri& caller_api,
                                          const GraphName& topic) {
  auto node = state.nodes.find(caller);
  if (node == state.nodes.end() || node->second.api_uri != caller_api) return {};
  auto it = state.topics.find(topic);
  if (it == state.topics.end() || it->second.publishers.erase(caller) == 0) return {};
  prune_topic_if_empty(state, topic);
  prune_node_if_orphan(state, caller);
  ++state.version;
  return {1, updates_for(state, {topic})};
}

RegistrationResult register_subscriber(MasterState& state, const GraphName& caller, const EndpointUri& caller_api,
                                       const GraphName& topic, const std::string& datatype) {
  require_datatype(datatype, true);
  TopicSet touched;
  bool changed = touch_node(state, caller, caller_api, touched);
  auto& record = ensure_topic(state, topic, datatype, changed);
  changed |= record.subscribers.insert(caller).second;
  if (changed) ++state.version;
  return {publisher_apis(state, topic), updates_for(state, touched)};
}

UnregistrationResult unregister_subscriber(MasterState& state, const GraphName& caller, const EndpointUri& caller_api,
                                           const GraphName& topic) {
  auto node = state.nodes.find(caller);
  if (node == state.nodes.end() || node->second.api_uri != caller_api) return {};
  auto it = state.topics.find(topic);
  if (it == state.topics.end() || it->second.subscribers.erase(caller) == 0) return {};
  prune_topic_if_empty(state, topic);
  prune_node_if_orphan(state, caller);
  ++state.version;
  return {1, {}};
}

std::vector<PublisherUpdate> register_service(MasterState& state, const GraphName& caller,
                                              const EndpointUri& caller_api, const GraphName& service,
                                              const EndpointUri& service_uri) {
  TopicSet touched;
  bool changed = touch_node(state, caller, caller_api, touched);
  ServiceRecord record{service, caller, service_uri, caller_api};
  auto it = state.services.find(service);
  if (it == state.services.end()) {
    state.services.emplace(service, std::move(record));
    changed = true;
  } else if (!(it->second == record)) {
    const GraphName previous = it->second.provider;
    it->second = std::move(record);
    if (previous != caller) prune_node_if_orphan(state, previous);
    changed = true;
  }
  if (changed) ++state.version;
  return updates_for(state, touched);
}

int unregister_service(MasterState& state, const GraphName& caller, const GraphName& service,
                       const EndpointUri& service_uri) {
  auto it = state.services.find(service);
  if (it == state.services.end() || it->second.provider != caller || it->second.service_uri != service_uri) return 0;
  state.services.erase(it);
  prune_node_if_orphan(state, caller);
  ++state.version;
  return 1;
}

std::vector<PublisherUpdate> drop_node(MasterState& state, const GraphName& node) {
  TopicSet touched;
  if (drop_node_into(state, node, touched)) ++state.version;
  return updates_for(state, touched);
}

void set_param(MasterState& state, std::string_view key, ParamValue value) {
  if (state.params.get(key) == value) return;
  state.params.set(key, std::move(value));
  ++state.version;
}

bool delete_param(MasterState& state, std::string_view key) {
  if (!state.params.erase(key)) return false;
  ++state.version;
  return true;
}

std::optional<EndpointUri> lookup_node(const MasterState& state, const GraphName& name) {
  auto it = state.nodes.find(name);
  if (it == state.nodes.end()) return std::nullopt;
  return it->second.api_uri;
}

std::optional<EndpointUri> lookup_service(const MasterState& state, const GraphName& name) {
  auto it = state.services.find(name);
  if (it == state.services.end()) return std::nullopt;
  return it->second.service_uri;
}

SystemState get_system_state(const MasterState& state) {
  SystemState out;
  auto names = [](const std::set<GraphName>& set) {
    std::vector<std::string> v;
    for (const auto& n : set) v.push_back(n.str());
    return v;
  };
  for (const auto& [name, topic] : state.topics) {
    if (!topic.publishers.empty()) out.publishers.emplace_back(name.str(), names(topic.publishers));
    if (!topic.subscribers.empty()) out.subscribers.emplace_back(name.str(), names(topic.subscribers));
  }
  for (const auto& [name, service] : state.services) {
    out.services.emplace_back(name.str(), std::vector<std::string>{service.provider.str()});
  }
  return out;
}

TopicTypes get_topic_types(const MasterState& state) {
  TopicTypes out;
  for (const auto& [name, topic] : state.topics) out.emplace_back(name.str(), topic.datatype);
  return out;
}

TopicTypes get_published_topics(const MasterState& state, std::string_view subgraph) {
  TopicTypes out;
  for (const auto& [name, topic] : state.topics) {
    if (topic.publishers.empty() || !name.str().starts_with(subgraph)) continue;
    out.emplace_back(name.str(), topic.datatype);
  }
  return out;
}

std::vector<EndpointUri> publisher_apis(const MasterState& state, const GraphName& topic) {
  auto it = state.topics.find(topic);
  if (it == state.topics.end()) return {};
  return apis_of(state, it->second.publishers);
}

std::vector<EndpointUri> subscriber_apis(const MasterState& state, const GraphName& topic) {
  auto it = state.topics.find(topic);
  if (it == state.topics.end()) return {};
  return apis_of(state, it->second.subscribers);
}

std::optional<std::string> find_invariant_violation(const MasterState& state) {
  for (const auto& [name, node] : state.nodes) {
    if (node.name != name) return "node entry " + name.str() + " carries name " + node.name.str();
    if (!holds_registrations(state, name)) return "node " + name.str() + " holds no registrations";
  }
  for (const auto& [name, topic] : state.topics) {
    if (topic.name != name) return "topic entry " + name.str() + " carries name " + topic.name.str();
    if (topic.publishers.empty() && topic.subscribers.empty()) return "topic " + name.str() + " has no registrations";
    if (topic.datatype.empty()) return "topic " + name.str() + " has an empty datatype";
    for (const auto* role : {&topic.publishers, &topic.subscribers}) {
      for (const auto& node : *role) {
        if (!state.nodes.contains(node)) return "topic " + name.str() + " references unknown node " + node.str();
      }
    }
  }
  for (const auto& [name, service] : state.services) {
    if (service.name != name) return "service entry " + name.str() + " carries name " + service.name.str();
    auto node = state.nodes.find(service.provider);
    if (node == state.nodes.end()) {
      return "service " + name.str() + " references unknown node " + service.provider.str();
    }
    if (node->second.api_uri != service.provider_api_uri) {
      return "service " + name.str() + " provider URI disagrees with node " + service.provider.str();
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

Registry::Registry(MasterState initial) : state_(std::move(initial)) { state_.version = 0; }

void Registry::set_change_listener(ChangeListener listener) {
  std::lock_guard lock(mutex_);
  listener_ = std::move(listener);
}

template <typename Fn>
auto Registry::mutate(Fn&& fn) {
  std::lock_guard lock(mutex_);
  const auto before = state_.version;
  auto result = fn(state_);
  if (state_.version != before && listener_) listener_(state_);
  return result;
}

RegistrationResult Registry::register_publisher(const GraphName& caller, const EndpointUri& caller_api,
                                                const GraphName& topic, const std::string& datatype) {
  return mutate([&](MasterState& s) { return rescue::register_publisher(s, caller, caller_api, topic, datatype); });
}

UnregistrationResult Registry::unregister_publisher(const GraphName& caller, const EndpointUri& caller_api,
                                                    const GraphName& topic) {
  return mutate([&](MasterState& s) { return rescue::unregister_publisher(s, caller, caller_api, topic); });
}

RegistrationResult Registry::register_subscriber(const GraphName& caller, const EndpointUri& caller_api,
                                                 const GraphName& topic, const std::string& datatype) {
  return mutate([&](MasterState& s) { return rescue::register_subscriber(s, caller, caller_api, topic, datatype); });
}

UnregistrationResult Registry::unregister_subscriber(const GraphName& caller, const EndpointUri& caller_api,
                                                     const GraphName& topic) {
  return mutate([&](MasterState& s) { return rescue::unregister_subscriber(s, caller, caller_api, topic); });
}

std::vector<PublisherUpdate> Registry::register_service(const GraphName& caller, const EndpointUri& caller_api,
                                                        const GraphName& service, const EndpointUri& service_uri) {
  return mutate([&](MasterState& s) { return rescue::register_service(s, caller, caller_api, service, service_uri); });
}

int Registry::unregister_service(const GraphName& caller, const GraphName& service, const EndpointUri& service_uri) {
  return mutate([&](MasterState& s) { return rescue::unregister_service(s, caller, service, service_uri); });
}

void Registry::set_param(std::string_view key, ParamValue value) {
  mutate([&](MasterState& s) {
    rescue::set_param(s, key, std::move(value));
    return 0;
  });
}

std::optional<ParamValue> Registry::get_param(std::string_view key) const {
  std::lock_guard lock(mutex_);
  return state_.params.get(key);
}

bool Registry::delete_param(std::string_view key) {
  return mutate([&](MasterState& s) { return rescue::delete_param(s, key); });
}

bool Registry::has_param(std::string_view key) const {
  std::lock_guard lock(mutex_);
  return state_.params.has(key);
}

std::vector<std::string> Registry::get_param_names() const {
  std::lock_guard lock(mutex_);
  return state_.params.names();
}

std::optional<EndpointUri> Registry::lookup_node(const GraphName& name) const {
  std::lock_guard lock(mutex_);
  return rescue::lookup_node(state_, name);
}

std::optional<EndpointUri> Registry::lookup_service(const GraphName& name) const {
  std::lock_guard lock(mutex_);
  return rescue::lookup_service(state_, name);
}

SystemState Registry::get_system_state() const {
  std::lock_guard lock(mutex_);
  return rescue::get_system_state(state_);
}

TopicTypes Registry::get_topic_types() const {
  std::lock_guard lock(mutex_);
  return rescue::get_topic_types(state_);
}

TopicTypes Registry::get_published_topics(std::string_view subgraph) const {
  std::lock_guard lock(mutex_);
  return rescue::get_published_topics(state_, subgraph);
}

MasterState Registry::snapshot() const {
  std::lock_guard lock(mutex_);
  return state_;
}

std::uint64_t Registry::version() const {
  std::lock_guard lock(mutex_);
  return state_.version;
}

}  // namespace rescue
