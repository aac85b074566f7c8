#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <ostream>
#include <stop_token>
#include <string>
#include <vector>

#include "rescue/names.hpp"
#include "rescue/process.hpp"

namespace rescue {

struct MonitorConfig {
  EndpointUri master_uri{"http://127.0.0.1:11311/"};
  int poll_interval_ms = 500;
  int poll_timeout_ms = 500;
  int failure_threshold = 3;
  std::vector<std::string> restart_command;
  /// Unset: unbounded.
  std::optional<int> max_restarts;
  /// After a restart, failures are not counted until the new master answers
  /// once or this much time has passed.
  int boot_grace_ms = 5000;

  void validate() const;
};

class PollHistory {
 public:
  struct Sample {
    std::chrono::steady_clock::time_point at;
    bool ok = false;
  };
  static constexpr std::size_t kCapacity = 64;

  void record(bool ok, std::chrono::steady_clock::time_point at = std::chrono::steady_clock::now());
  void reset_failures() { consecutive_failures_ = 0; }

  int consecutive_failures() const noexcept { return consecutive_failures_; }
  const std::deque<Sample>& samples() const noexcept { return samples_; }

 private:
  std::deque<Sample> samples_;
  int consecutive_failures_ = 0;
};

enum class Decision { kHealthy, kFailed };

/// Appends `outcome` and reports kFailed iff the trailing run of failed polls
/// is at least `threshold` long.
Decision update_and_decide(PollHistory& history, bool outcome, int threshold);

/// True iff the master answers getPid with a success triple within `timeout`.
bool poll_once(const EndpointUri& master_uri, std::chrono::milliseconds timeout);

/// Spawns the restart command and clears the failure run.
ChildProcess restart_master(const MonitorConfig& config, PollHistory& history);

/// Default restart command: the sibling master binary with the same port.
std::vector<std::string> default_restart_command(const EndpointUri& master_uri, bool rescue,
                                                 const std::string& checkpoint_path = {});

struct MonitorEvents {
  std::function<void(Decision)> on_transition;
  std::function<void(pid_t)> on_restart;
};

/// Poll loop. Returns 0 when stopped via `stop`, nonzero when the restart
/// budget is exhausted. One status line per healthy/failed transition.
int run_monitor(const MonitorConfig& config, std::stop_token stop, std::ostream& status,
                const MonitorEvents& events = {});

}  // namespace rescue
