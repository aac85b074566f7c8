#include <signal.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <iostream>

#include "rescue/master.hpp"

int main(int argc, char** argv) {
  rescue::MasterEndpointConfig config;
  std::string checkpoint_path = config.checkpoint_path.string();

  CLI::App app{"Registration master for publish/subscribe nodes"};
  app.add_flag("--rescue", config.rescue_enabled, "Checkpoint state and recover it after a crash");
  app.add_option("--port", config.port, "XML-RPC port")->capture_default_str()->check(CLI::Range(0, 65535));
  app.add_option("--host", config.bind_host, "Address to bind")->capture_default_str();
  app.add_option("--checkpoint-path", checkpoint_path, "Checkpoint file")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  config.checkpoint_path = checkpoint_path;
#ifdef RESCUE_TEST_HOOKS
  config.test_hooks = true;
#endif

  // Block before any thread starts so only sigwait sees these.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
  signal(SIGPIPE, SIG_IGN);

  try {
    config.validate();
    rescue::MasterServer server(config, std::cout);
    int sig = 0;
    sigwait(&stop_signals, &sig);
    std::cout << "shutting down" << std::endl;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
