#include "rescue/monitor.hpp"

#include <spdlog/spdlog.h>

#include <condition_variable>
#include <mutex>
#include <stdexcept>

#include "rescue/rpc.hpp"

namespace rescue {

void MonitorConfig::validate() const {
  if (poll_interval_ms <= 0) throw std::invalid_argument("poll interval must be positive");
  if (poll_timeout_ms <= 0) throw std::invalid_argument("poll timeout must be positive");
  if (failure_threshold < 1) throw std::invalid_argument("failure threshold must be at least 1");
  if (max_restarts && *max_restarts < 0) throw std::invalid_argument("max restarts must not be negative");
  if (boot_grace_ms < 0) throw std::invalid_argument("boot grace must not be negative");
}

void PollHistory::record(bool ok, std::chrono::steady_clock::time_point at) {
  samples_.push_back({at, ok});
  if (samples_.size() > kCapacity) samples_.pop_front();
  consecutive_failures_ = ok ? 0 : consecutive_failures_ + 1;
}

Decision update_and_decide(PollHistory& history, bool outcome, int threshold) {
  history.record(outcome);
  return history.consecutive_failures() >= threshold ? Decision::kFailed : Decision::kHealthy;
}

bool poll_once(const EndpointUri& master_uri, std::chrono::milliseconds timeout) {
  return ping_node(master_uri, timeout);
}

ChildProcess restart_master(const MonitorConfig& config, PollHistory& history) {
  if (config.restart_command.empty()) throw std::invalid_argument("no restart command configured");
  auto child = ChildProcess::spawn(config.restart_command);
  history.reset_failures();
  return child;
}

std::vector<std::string> default_restart_command(const EndpointUri& master_uri, bool rescue,
                                                 const std::string& checkpoint_path) {
  std::vector<std::string> argv{(executable_dir() / "rescue_master").string(), "--host", master_uri.host(), "--port",
                                std::to_string(master_uri.port())};
  if (rescue) argv.emplace_back("--rescue");
  if (!checkpoint_path.empty()) {
    argv.emplace_back("--checkpoint-path");
    argv.push_back(checkpoint_path);
  }
  return argv;
}

int run_monitor(const MonitorConfig& config, std::stop_token stop, std::ostream& status, const MonitorEvents& events) {
  config.validate();
  using clock = std::chrono::steady_clock;
  const auto interval = std::chrono::milliseconds(config.poll_interval_ms);
  const auto timeout = std::chrono::milliseconds(config.poll_timeout_ms);

  std::mutex mutex;
  std::condition_variable_any cv;
  auto sleep_until = [&](clock::time_point deadline) {
    std::unique_lock lock(mutex);
    cv.wait_until(lock, stop, deadline, [] { return false; });
  };

  PollHistory history;
  Decision current = Decision::kHealthy;
  int restarts = 0;
  std::vector<ChildProcess> children;
  std::optional<clock::time_point> booting_until;

  status << "monitoring " << config.master_uri.str() << " every " << config.poll_interval_ms << " ms (threshold "
         << config.failure_threshold << ")" << std::endl;

  while (!stop.stop_requested()) {
    const auto tick = clock::now();
    const bool ok = poll_once(config.master_uri, timeout);
    std::erase_if(children, [](ChildProcess& c) { return !c.running(); });

    if (booting_until) {
      if (!ok && clock::now() < *booting_until) {
        sleep_until(tick + interval);
        continue;
      }
      booting_until.reset();
    }

    const Decision decision = update_and_decide(history, ok, config.failure_threshold);
    if (decision != current) {
      current = decision;
      if (decision == Decision::kFailed) {
        status << "master " << config.master_uri.str() << " FAILED: " << history.consecutive_failures()
               << " consecutive polls unanswered" << std::endl;
      } else {
        status << "master " << config.master_uri.str() << " healthy" << std::endl;
      }
      if (events.on_transition) events.on_transition(decision);
    }

    if (decision == Decision::kFailed) {
      if (config.max_restarts && restarts >= *config.max_restarts) {
        status << "restart budget of " << *config.max_restarts << " exhausted; giving up" << std::endl;
        for (auto& c : children) c.detach();
        return 2;
      }
      try {
        auto child = restart_master(config, history);
        ++restarts;
        status << "restarted master (pid " << child.pid() << ", restart #" << restarts << ")" << std::endl;
        if (events.on_restart) events.on_restart(child.pid());
        children.push_back(std::move(child));
        booting_until = clock::now() + std::chrono::milliseconds(config.boot_grace_ms);
      } catch (const std::exception& e) {
        spdlog::error("restart failed: {}; retrying next poll", e.what());
      }
    }
    sleep_until(tick + interval);
  }
  for (auto& c : children) c.detach();
  return 0;
}

}  // namespace rescue
