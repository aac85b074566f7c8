#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rescue/names.hpp"
#include "rescue/registry.hpp"
#include "rescue/xmlrpc.hpp"

namespace httplib {
class Server;
}

namespace rescue {

/// Result convention of every master and slave API method.
struct RpcTriple {
  static constexpr int kError = -1;
  static constexpr int kFailure = 0;
  static constexpr int kSuccess = 1;

  int code = kSuccess;
  std::string status;
  xmlrpc::Value value = xmlrpc::Value(0);

  static RpcTriple success(std::string status, xmlrpc::Value value) { return {kSuccess, std::move(status), std::move(value)}; }
  static RpcTriple error(std::string status, xmlrpc::Value value = xmlrpc::Value(0)) {
    return {kError, std::move(status), std::move(value)};
  }

  xmlrpc::Value to_value() const;
  /// Throws xmlrpc::ParseError unless `value` is a [int, string, any] array.
  static RpcTriple from_value(const xmlrpc::Value& value);

  bool operator==(const RpcTriple&) const = default;
};

/// Transport-level failure talking to a remote endpoint (refused, timeout, HTTP error).
class RpcTransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::chrono::milliseconds kDefaultCallTimeout{500};

/// One synchronous XML-RPC call. Throws RpcTransportError, xmlrpc::Fault or
/// xmlrpc::ParseError.
xmlrpc::Value call_xmlrpc(const EndpointUri& uri, std::string_view method, const xmlrpc::Array& params,
                          std::chrono::milliseconds timeout = kDefaultCallTimeout);

/// Calls a master/slave API method and decodes the result triple.
RpcTriple call_api(const EndpointUri& uri, std::string_view method, const xmlrpc::Array& params,
                   std::chrono::milliseconds timeout = kDefaultCallTimeout);

/// Liveness probe: true iff `getPid` answers with a success triple in time.
bool ping_node(const EndpointUri& api_uri, std::chrono::milliseconds timeout);

/// Sends publisherUpdate("/master", topic, publishers). Best effort: returns
/// false on any failure instead of throwing.
bool notify_publisher_update(const EndpointUri& subscriber_api, const GraphName& topic,
                             const std::vector<EndpointUri>& publisher_apis,
                             std::chrono::milliseconds timeout = kDefaultCallTimeout);

/// Multi-threaded XML-RPC server over HTTP/1.1. Every POST body is decoded as a
/// methodCall and handed to the handler; malformed requests get an error
/// triple.
class XmlRpcServer {
 public:
  using Handler = std::function<xmlrpc::Value(const xmlrpc::MethodCall&)>;

  XmlRpcServer(Handler handler, std::size_t threads);
  ~XmlRpcServer();

  XmlRpcServer(const XmlRpcServer&) = delete;
  XmlRpcServer& operator=(const XmlRpcServer&) = delete;

  /// Binds without accepting yet. Port 0 picks a free port. Returns false on failure.
  bool bind(const std::string& host, int port);
  /// Starts accepting on a background thread; returns once ready.
  void start();
  void stop();

  int port() const noexcept { return port_; }
  const std::string& host() const noexcept { return host_; }
  EndpointUri uri() const;

 private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
};

using UpdateSender = std::function<bool(const EndpointUri& subscriber_api, const GraphName& topic,
                                        const std::vector<EndpointUri>& publisher_apis)>;

/// Asynchronous best-effort publisher-update fan-out.
///
/// Updates are keyed by (subscriber, topic). A key is delivered by at most one
/// worker at a time and a newer list for a key replaces an undelivered older
/// one, so each subscriber sees lists for a topic in mutation order.
class UpdateDispatcher {
 public:
  explicit UpdateDispatcher(UpdateSender sender, std::size_t workers = 4);
  ~UpdateDispatcher();

  UpdateDispatcher(const UpdateDispatcher&) = delete;
  UpdateDispatcher& operator=(const UpdateDispatcher&) = delete;

  void post(const std::vector<PublisherUpdate>& updates);
  bool wait_idle(std::chrono::milliseconds timeout);

  std::size_t delivered() const { return delivered_.load(); }
  std::size_t failed() const { return failed_.load(); }

 private:
  using Key = std::pair<std::string, std::string>;  // subscriber URI, topic
  struct Job {
    EndpointUri subscriber;
    GraphName topic;
    std::vector<EndpointUri> publishers;
  };

  void work();

  UpdateSender sender_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::map<Key, Job> pending_;
  std::set<Key> in_flight_;
  bool stopping_ = false;
  std::atomic<std::size_t> delivered_{0};
  std::atomic<std::size_t> failed_{0};
  std::vector<std::thread> workers_;
};

}  // namespace rescue
