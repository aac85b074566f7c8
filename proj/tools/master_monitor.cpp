#include <signal.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <thread>

#include "rescue/monitor.hpp"

int main(int argc, char** argv) {
  rescue::MonitorConfig config;
  const char* env_uri = std::getenv("ROS_MASTER_URI");
  std::string master_uri = env_uri ? env_uri : config.master_uri.str();
  bool rescue = false;
  std::string restart_cmd;
  std::string checkpoint_path;
  int max_restarts = -1;

  CLI::App app{"Restarts the master when it stops answering"};
  app.add_flag("--rescue", rescue, "Restart the master with --rescue");
  app.add_option("--master-uri", master_uri, "Master to watch (default $ROS_MASTER_URI)")->capture_default_str();
  app.add_option("--poll-interval-ms", config.poll_interval_ms)->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--timeout-ms", config.poll_timeout_ms, "Per-poll timeout")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--threshold", config.failure_threshold, "Consecutive failed polls before restarting")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--restart-cmd", restart_cmd, "Command line that restarts the master (default: sibling rescue_master)");
  app.add_option("--checkpoint-path", checkpoint_path, "Passed to the default restart command");
  app.add_option("--max-restarts", max_restarts, "Give up after this many restarts (default: never)");
  app.add_option("--boot-grace-ms", config.boot_grace_ms)->capture_default_str()->check(CLI::NonNegativeNumber);
  CLI11_PARSE(app, argc, argv);

  try {
    config.master_uri = rescue::EndpointUri(master_uri);
    if (max_restarts >= 0) config.max_restarts = max_restarts;
    if (restart_cmd.empty()) {
      config.restart_command = rescue::default_restart_command(config.master_uri, rescue, checkpoint_path);
    } else {
      std::istringstream words(restart_cmd);
      for (std::string w; words >> w;) config.restart_command.push_back(w);
    }
    config.validate();
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }

  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  std::stop_source stop;
  int result = 0;
  std::jthread loop([&] { result = rescue::run_monitor(config, stop.get_token(), std::cout); });
  std::jthread waiter([&] {
    int sig = 0;
    sigwait(&stop_signals, &sig);
    stop.request_stop();
  });
  loop.join();
  if (!stop.stop_requested()) {
    // Budget exhausted; wake the signal waiter.
    pthread_kill(waiter.native_handle(), SIGTERM);
  }
  waiter.join();
  return result;
}
