#pragma once

#include <sys/types.h>

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rescue {

/// Owning handle to a spawned child process. The destructor kills and reaps a
/// child that is still running unless it was detached.
class ChildProcess {
 public:
  struct Options {
    /// Empty: inherit the parent's stdout/stderr.
    std::filesystem::path output_path;
    /// Variables added to (or overriding) the inherited environment.
    std::map<std::string, std::string> env;
  };

  ChildProcess() = default;
  /// Throws std::system_error when the program cannot be started.
  static ChildProcess spawn(const std::vector<std::string>& argv, const Options& options);
  static ChildProcess spawn(const std::vector<std::string>& argv) { return spawn(argv, Options{}); }

  ~ChildProcess();
  ChildProcess(ChildProcess&& other) noexcept;
  ChildProcess& operator=(ChildProcess&& other) noexcept;
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  pid_t pid() const noexcept { return pid_; }
  bool valid() const noexcept { return pid_ > 0; }
  bool running();
  void signal(int sig);
  /// SIGKILL and reap.
  int kill();
  /// Exit status (or 128 + signal) once the child has exited.
  std::optional<int> wait_for(std::chrono::milliseconds timeout);
  int wait();
  std::optional<int> exit_status() const { return status_; }
  void detach() { pid_ = -1; }

 private:
  explicit ChildProcess(pid_t pid) : pid_(pid) {}
  bool reap(bool block);

  pid_t pid_ = -1;
  std::optional<int> status_;
};

/// Directory holding the running executable.
std::filesystem::path executable_dir();

/// A TCP port on 127.0.0.1 that was free at the time of the call.
int pick_free_port();

}  // namespace rescue
