#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rescue/names.hpp"
#include "rescue/rpc.hpp"

namespace rescue::harness {

struct TopicRole {
  enum class Direction { kPublish, kSubscribe };
  GraphName topic;
  std::string datatype;
  Direction direction = Direction::kPublish;

  bool operator==(const TopicRole&) const = default;
};

struct SimNodeSpec {
  enum class Role { kPublisher, kSubscriber, kService, kMixed };

  GraphName name;
  Role role = Role::kMixed;
  std::vector<TopicRole> topics;
  std::vector<GraphName> services;

  /// Throws ValidationError unless the node has at least one registration
  /// and its topic directions agree with its role.
  void validate() const;

  static SimNodeSpec publisher(std::string name, std::string topic, std::string datatype);
  static SimNodeSpec subscriber(std::string name, std::string topic, std::string datatype);
  static SimNodeSpec service(std::string name, std::string service);
};

/// Parses a YAML list of node specs:
///   - name: /talker
///     role: publisher            # publisher | subscriber | service | mixed
///     topics: [{topic: /chatter, type: std_msgs/String}]   # mixed: add direction: publish|subscribe
///     services: [/add_two_ints]
std::vector<SimNodeSpec> load_sim_specs(const std::filesystem::path& path);
std::vector<SimNodeSpec> parse_sim_specs(const std::string& yaml);

/// A simulated node: a slave endpoint answering getPid and publisherUpdate,
/// registered with the master for every role in its spec. It carries no
/// topic data; its "connections" are the publisher lists it was told about.
class SimNode {
 public:
  struct RecordedUpdate {
    std::string caller;
    std::string topic;
    std::vector<std::string> publishers;
  };

  /// Starts the endpoint and registers with the master. Registration
  /// failures throw.
  static std::unique_ptr<SimNode> spawn(SimNodeSpec spec, const EndpointUri& master_uri);
  ~SimNode();

  const SimNodeSpec& spec() const { return spec_; }
  const GraphName& name() const { return spec_.name; }
  EndpointUri api_uri() const { return server_->uri(); }
  std::string service_uri() const;

  /// Stops answering for good (listening socket closed).
  void kill();
  /// Keeps the socket open but stalls every request until resume().
  void pause();
  void resume();
  bool killed() const;

  /// Every publisherUpdate received, once each, in arrival order.
  std::vector<RecordedUpdate> recorded_updates() const;
  /// Current belief about a subscribed topic's publishers: the registration
  /// answer, replaced by each later publisherUpdate.
  std::vector<std::string> known_publishers(const std::string& topic) const;
  bool wait_for_publishers(const std::string& topic, const std::vector<std::string>& expected,
                           std::chrono::milliseconds timeout) const;

  /// Thin master API wrappers acting as this node.
  RpcTriple unregister_publisher(const std::string& topic, std::chrono::milliseconds timeout = kDefaultCallTimeout);
  RpcTriple unregister_subscriber(const std::string& topic, std::chrono::milliseconds timeout = kDefaultCallTimeout);

 private:
  SimNode(SimNodeSpec spec, EndpointUri master_uri);
  xmlrpc::Value handle(const xmlrpc::MethodCall& call);
  void register_all();

  SimNodeSpec spec_;
  EndpointUri master_uri_;
  mutable std::mutex mutex_;
  mutable std::condition_variable cv_;
  bool paused_ = false;
  bool killed_ = false;
  std::vector<RecordedUpdate> updates_;
  std::map<std::string, std::vector<std::string>> known_publishers_;
  std::unique_ptr<XmlRpcServer> server_;
};

}  // namespace rescue::harness
