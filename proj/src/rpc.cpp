#include "rescue/rpc.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>
#include <sys/socket.h>

#include <algorithm>

namespace rescue {
namespace {

constexpr const char* kContentType = "text/xml";

void set_timeouts(httplib::Client& client, std::chrono::milliseconds timeout) {
  const auto sec = static_cast<time_t>(timeout.count() / 1000);
  const auto usec = static_cast<time_t>((timeout.count() % 1000) * 1000);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
}

std::string request_path(const EndpointUri& uri) {
  const auto& s = uri.str();
  const auto authority = s.find("://") + 3;
  const auto slash = s.find('/', authority);
  return slash == std::string::npos ? "/" : s.substr(slash);
}

}  // namespace

xmlrpc::Value RpcTriple::to_value() const {
  return xmlrpc::Value(xmlrpc::Array{xmlrpc::Value(code), xmlrpc::Value(status), value});
}

RpcTriple RpcTriple::from_value(const xmlrpc::Value& value) {
  if (!value.is<xmlrpc::Array>()) throw xmlrpc::ParseError("result is not an array");
  const auto& items = value.as<xmlrpc::Array>();
  if (items.size() != 3 || !items[0].is<std::int64_t>() || !items[1].is<std::string>()) {
    throw xmlrpc::ParseError("result is not a (code, status, value) triple");
  }
  return {static_cast<int>(items[0].as<std::int64_t>()), items[1].as<std::string>(), items[2]};
}

xmlrpc::Value call_xmlrpc(const EndpointUri& uri, std::string_view method, const xmlrpc::Array& params,
                          std::chrono::milliseconds timeout) {
  httplib::Client client(uri.host(), uri.port());
  set_timeouts(client, timeout);
  client.set_tcp_nodelay(true);
  auto res = client.Post(request_path(uri), xmlrpc::encode_call(method, params), kContentType);
  if (!res) {
    throw RpcTransportError(std::string(method) + " to " + uri.str() + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw RpcTransportError(std::string(method) + " to " + uri.str() + ": HTTP " + std::to_string(res->status));
  }
  return xmlrpc::parse_response(res->body);
}

RpcTriple call_api(const EndpointUri& uri, std::string_view method, const xmlrpc::Array& params,
                   std::chrono::milliseconds timeout) {
  return RpcTriple::from_value(call_xmlrpc(uri, method, params, timeout));
}

bool ping_node(const EndpointUri& api_uri, std::chrono::milliseconds timeout) {
  try {
    return call_api(api_uri, "getPid", {xmlrpc::Value("/master")}, timeout).code == RpcTriple::kSuccess;
  } catch (const std::exception&) {
    return false;
  }
}

bool notify_publisher_update(const EndpointUri& subscriber_api, const GraphName& topic,
                             const std::vector<EndpointUri>& publisher_apis, std::chrono::milliseconds timeout) {
  xmlrpc::Array uris;
  for (const auto& uri : publisher_apis) uris.emplace_back(uri.str());
  try {
    const auto triple = call_api(subscriber_api, "publisherUpdate",
                                 {xmlrpc::Value("/master"), xmlrpc::Value(topic.str()), xmlrpc::Value(std::move(uris))},
                                 timeout);
    return triple.code == RpcTriple::kSuccess;
  } catch (const std::exception& e) {
    spdlog::debug("publisherUpdate {} -> {} failed: {}", topic.str(), subscriber_api.str(), e.what());
    return false;
  }
}

// ---------------------------------------------------------------------------

XmlRpcServer::XmlRpcServer(Handler handler, std::size_t threads) : server_(std::make_unique<httplib::Server>()) {
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  server_->set_tcp_nodelay(true);
  server_->Post(R"(/.*)", [handler = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
    std::string body;
    try {
      body = xmlrpc::encode_response(handler(xmlrpc::parse_call(req.body)));
    } catch (const xmlrpc::ParseError& e) {
      body = xmlrpc::encode_response(RpcTriple::error(std::string("malformed request: ") + e.what()).to_value());
    } catch (const std::exception& e) {
      body = xmlrpc::encode_response(RpcTriple::error(e.what()).to_value());
    }
    res.set_content(body, kContentType);
  });
}

XmlRpcServer::~XmlRpcServer() { stop(); }

bool XmlRpcServer::bind(const std::string& host, int port) {
  host_ = host;
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    return port_ > 0;
  }
  if (!server_->bind_to_port(host, port)) return false;
  port_ = port;
  return true;
}

void XmlRpcServer::start() {
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void XmlRpcServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

EndpointUri XmlRpcServer::uri() const { return EndpointUri("http://" + host_ + ":" + std::to_string(port_) + "/"); }

// ---------------------------------------------------------------------------

UpdateDispatcher::UpdateDispatcher(UpdateSender sender, std::size_t workers) : sender_(std::move(sender)) {
  for (std::size_t i = 0; i < std::max<std::size_t>(1, workers); ++i) workers_.emplace_back([this] { work(); });
}

UpdateDispatcher::~UpdateDispatcher() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : workers_) t.join();
}

void UpdateDispatcher::post(const std::vector<PublisherUpdate>& updates) {
  {
    std::lock_guard lock(mutex_);
    for (const auto& update : updates) {
      for (const auto& subscriber : update.subscriber_apis) {
        pending_.insert_or_assign(Key{subscriber.str(), update.topic.str()},
                                  Job{subscriber, update.topic, update.publisher_apis});
      }
    }
  }
  cv_.notify_all();
}

bool UpdateDispatcher::wait_idle(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  return idle_cv_.wait_for(lock, timeout, [&] { return pending_.empty() && in_flight_.empty(); });
}

void UpdateDispatcher::work() {
  std::unique_lock lock(mutex_);
  for (;;) {
    auto ready = pending_.end();
    cv_.wait(lock, [&] {
      if (stopping_) return true;
      ready = std::find_if(pending_.begin(), pending_.end(),
                           [&](const auto& entry) { return !in_flight_.contains(entry.first); });
      return ready != pending_.end();
    });
    if (stopping_) return;

    const Key key = ready->first;
    Job job = std::move(ready->second);
    pending_.erase(ready);
    in_flight_.insert(key);
    lock.unlock();

    const bool ok = sender_(job.subscriber, job.topic, job.publishers);
    (ok ? delivered_ : failed_).fetch_add(1);

    lock.lock();
    in_flight_.erase(key);
    if (pending_.empty() && in_flight_.empty()) idle_cv_.notify_all();
    cv_.notify_all();
  }
}

}  // namespace rescue
