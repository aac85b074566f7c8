#include "rescue/recovery.hpp"

#include <fmt/format.h>

#include <atomic>
#include <thread>

namespace rescue {

void parallel_for(std::size_t count, std::size_t concurrency, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(count, std::max<std::size_t>(1, concurrency));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
}

LivenessProbe make_liveness_probe(std::chrono::milliseconds timeout, int retries) {
  return [timeout, retries](const EndpointUri& uri) {
    for (int attempt = 0; attempt <= retries; ++attempt) {
      if (ping_node(uri, timeout)) return true;
    }
    return false;
  };
}

MasterState load_last(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return MasterState{};
  return load_checkpoint_file(path);
}

ReconcileResult reconcile(MasterState state, const LivenessProbe& probe, std::size_t concurrency) {
  ReconcileResult out;
  std::vector<const NodeRecord*> nodes;
  nodes.reserve(state.nodes.size());
  for (const auto& [name, node] : state.nodes) nodes.push_back(&node);

  std::vector<char> alive(nodes.size(), 0);
  parallel_for(nodes.size(), concurrency, [&](std::size_t i) { alive[i] = probe(nodes[i]->api_uri) ? 1 : 0; });
  out.report.probed = nodes.size();

  std::vector<GraphName> dead;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!alive[i]) dead.push_back(nodes[i]->name);
  }

  const MasterState before = state;
  for (const auto& name : dead) drop_node(state, name);
  out.report.dropped_nodes = dead;

  for (const auto& [name, topic] : before.topics) {
    auto it = state.topics.find(name);
    if (it == state.topics.end() ? !topic.publishers.empty() : it->second.publishers != topic.publishers) {
      out.report.changed_topics.push_back(name);
    }
  }
  state.version = before.version;
  out.state = std::move(state);
  return out;
}

std::vector<GraphName> subscribed_topics(const MasterState& state) {
  std::vector<GraphName> out;
  for (const auto& [name, topic] : state.topics) {
    if (!topic.subscribers.empty()) out.push_back(name);
  }
  return out;
}

std::size_t renotify(const std::vector<GraphName>& topics, const MasterState& state, const UpdateSender& sender,
                     std::size_t concurrency) {
  struct Job {
    EndpointUri subscriber;
    GraphName topic;
    std::vector<EndpointUri> publishers;
  };
  std::vector<Job> jobs;
  for (const auto& topic : topics) {
    const auto publishers = publisher_apis(state, topic);
    for (const auto& subscriber : subscriber_apis(state, topic)) jobs.push_back({subscriber, topic, publishers});
  }
  std::atomic<std::size_t> delivered{0};
  parallel_for(jobs.size(), concurrency, [&](std::size_t i) {
    if (sender(jobs[i].subscriber, jobs[i].topic, jobs[i].publishers)) ++delivered;
  });
  return delivered.load();
}

ReconcileResult recover(const RecoveryOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  auto result = reconcile(load_last(options.checkpoint_path), options.probe, options.concurrency);
  result.report.duration_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  if (options.sender) {
    result.report.notified_subscribers =
        renotify(subscribed_topics(result.state), result.state, options.sender, options.concurrency);
  }
  result.state.version = 0;
  if (options.writer != nullptr) options.writer->enqueue(result.state);
  return result;
}

std::string describe(const ReconcileReport& report, std::size_t recovered_nodes) {
  return fmt::format("recovered nodes={} probed={} dropped={} changed_topics={} notified={} duration_ms={:.3f}",
                     recovered_nodes, report.probed, report.dropped_nodes.size(), report.changed_topics.size(),
                     report.notified_subscribers, report.duration_ms);
}

}  // namespace rescue
