#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rescue/names.hpp"
#include "rescue/param_tree.hpp"

namespace rescue {

/// Datatype sentinel used by subscribers that accept any message type.
inline constexpr const char* kAnyDatatype = "*";

struct NodeRecord {
  GraphName name;
  EndpointUri api_uri;

  bool operator==(const NodeRecord&) const = default;
};

struct TopicRecord {
  GraphName name;
  std::string datatype;
  std::set<GraphName> publishers;
  std::set<GraphName> subscribers;

  bool operator==(const TopicRecord&) const = default;
};

struct ServiceRecord {
  GraphName name;
  GraphName provider;
  EndpointUri service_uri;
  EndpointUri provider_api_uri;

  bool operator==(const ServiceRecord&) const = default;
};

/// Complete registry metadata. Equality ignores the in-memory version counter.
struct MasterState {
  std::map<GraphName, NodeRecord> nodes;
  std::map<GraphName, TopicRecord> topics;
  std::map<GraphName, ServiceRecord> services;
  ParamTree params;
  std::uint64_t version = 0;

  friend bool operator==(const MasterState& a, const MasterState& b) {
    return a.nodes == b.nodes && a.topics == b.topics && a.services == b.services && a.params == b.params;
  }
};

/// A master-to-subscriber notification: every listed subscriber endpoint
/// should be told the topic's current publisher endpoints.
struct PublisherUpdate {
  GraphName topic;
  std::vector<EndpointUri> subscriber_apis;
  std::vector<EndpointUri> publisher_apis;

  bool operator==(const PublisherUpdate&) const = default;
};

struct RegistrationResult {
  std::vector<EndpointUri> uris;
  std::vector<PublisherUpdate> updates;
};

struct UnregistrationResult {
  int count = 0;
  std::vector<PublisherUpdate> updates;
};

using NameList = std::vector<std::pair<std::string, std::vector<std::string>>>;

struct SystemState {
  NameList publishers;
  NameList subscribers;
  NameList services;

  bool operator==(const SystemState&) const = default;
};

using TopicTypes = std::vector<std::pair<std::string, std::string>>;

// State-machine operations on a bare MasterState. Not thread-safe; Registry
// serializes them. Mutations bump state.version only when something changed.

RegistrationResult register_publisher(MasterState& state, const GraphName& caller, const EndpointUri& caller_api,
                                      const GraphName& topic, const std::string& datatype);
UnregistrationResult unregister_publisher(MasterState& state, const GraphName& caller, const EndpointUri& caller_api,
                                          const GraphName& topic);
RegistrationResult register_subscriber(MasterState& state, const GraphName& caller, const EndpointUri& caller_api,
                                       const GraphName& topic, const std::string& datatype);
UnregistrationResult unregister_subscriber(MasterState& state, const GraphName& caller, const EndpointUri& caller_api,
                                           const GraphName& topic);
std::vector<PublisherUpdate> register_service(MasterState& state, const GraphName& caller,
                                              const EndpointUri& caller_api, const GraphName& service,
                                              const EndpointUri& service_uri);
int unregister_service(MasterState& state, const GraphName& caller, const GraphName& service,
                       const EndpointUri& service_uri);

/// Removes a node and every registration it holds. Returns the notifications
/// owed to subscribers of topics it published.
std::vector<PublisherUpdate> drop_node(MasterState& state, const GraphName& node);

void set_param(MasterState& state, std::string_view key, ParamValue value);
bool delete_param(MasterState& state, std::string_view key);

std::optional<EndpointUri> lookup_node(const MasterState& state, const GraphName& name);
std::optional<EndpointUri> lookup_service(const MasterState& state, const GraphName& name);
SystemState get_system_state(const MasterState& state);
TopicTypes get_topic_types(const MasterState& state);
/// Topics with at least one publisher whose name starts with `subgraph`.
TopicTypes get_published_topics(const MasterState& state, std::string_view subgraph);
/// Publisher endpoints of a topic, ordered by publisher node name.
std::vector<EndpointUri> publisher_apis(const MasterState& state, const GraphName& topic);
std::vector<EndpointUri> subscriber_apis(const MasterState& state, const GraphName& topic);

/// Describes the first violated structural invariant, or nullopt when the
/// state is consistent.
std::optional<std::string> find_invariant_violation(const MasterState& state);

/// Thread-safe registry: every operation runs inside one exclusive section.
///
/// The change listener is invoked inside that section after each mutation
/// with the new state, so listeners observe versions in strictly increasing
/// order. It must be quick (typically: enqueue a copy).
class Registry {
 public:
  using ChangeListener = std::function<void(const MasterState&)>;

  Registry() = default;
  /// Adopts a recovered state; the version counter restarts at 0.
  explicit Registry(MasterState initial);

  void set_change_listener(ChangeListener listener);

  RegistrationResult register_publisher(const GraphName& caller, const EndpointUri& caller_api,
                                        const GraphName& topic, const std::string& datatype);
  UnregistrationResult unregister_publisher(const GraphName& caller, const EndpointUri& caller_api,
                                            const GraphName& topic);
  RegistrationResult register_subscriber(const GraphName& caller, const EndpointUri& caller_api,
                                         const GraphName& topic, const std::string& datatype);
  UnregistrationResult unregister_subscriber(const GraphName& caller, const EndpointUri& caller_api,
                                             const GraphName& topic);
  std::vector<PublisherUpdate> register_service(const GraphName& caller, const EndpointUri& caller_api,
                                                const GraphName& service, const EndpointUri& service_uri);
  int unregister_service(const GraphName& caller, const GraphName& service, const EndpointUri& service_uri);

  void set_param(std::string_view key, ParamValue value);
  std::optional<ParamValue> get_param(std::string_view key) const;
  bool delete_param(std::string_view key);
  bool has_param(std::string_view key) const;
  std::vector<std::string> get_param_names() const;

  std::optional<EndpointUri> lookup_node(const GraphName& name) const;
  std::optional<EndpointUri> lookup_service(const GraphName& name) const;
  SystemState get_system_state() const;
  TopicTypes get_topic_types() const;
  TopicTypes get_published_topics(std::string_view subgraph) const;

  MasterState snapshot() const;
  std::uint64_t version() const;

 private:
  template <typename Fn>
  auto mutate(Fn&& fn);

  mutable std::mutex mutex_;
  MasterState state_;
  ChangeListener listener_;
};

}  // namespace rescue
