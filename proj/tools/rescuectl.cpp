#include <signal.h>
#include <spdlog/cfg/env.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "rescue/harness/harness.hpp"

namespace {

using namespace rescue;
using namespace rescue::harness;

int wait_for_stop_signal() {
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
  int sig = 0;
  sigwait(&stop_signals, &sig);
  return sig;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::cfg::load_env_levels();
  signal(SIGPIPE, SIG_IGN);
  auto config = HarnessConfig::defaults();
  std::string master_bin = config.master_binary.string();
  std::string work_dir = config.work_dir.string();

  CLI::App app{"Crash-recovery harness for the registration master"};
  app.require_subcommand(1);
  app.add_option("--master-bin", master_bin, "Master binary with crash hooks")->capture_default_str();
  app.add_option("--work-dir", work_dir, "Scratch directory")->capture_default_str();

  auto* scenario = app.add_subcommand("scenario", "Crash scenarios");
  scenario->require_subcommand(1);
  auto* scenario_run = scenario->add_subcommand("run", "Run one scenario");
  std::string case_id;
  scenario_run->add_option("case", case_id, "case0..case3")->required()->check(CLI::IsMember(kScenarioIds));

  auto* bench = app.add_subcommand("bench", "Measure recovery time against graph size");
  std::vector<int> node_counts{1, 5, 10, 20, 40, 80};
  int trials = 3;
  std::string csv_path;
  bench->add_option("--nodes", node_counts, "Node counts")->capture_default_str()->check(CLI::NonNegativeNumber);
  bench->add_option("--trials", trials)->capture_default_str()->check(CLI::Range(3, 1000));
  bench->add_option("--csv", csv_path, "Write results here as CSV (default stdout)");

  auto* inspect = app.add_subcommand("inspect", "Validate a checkpoint file and summarize it");
  std::string inspect_path;
  inspect->add_option("file", inspect_path)->required();

  auto* sim = app.add_subcommand("sim", "Simulated nodes");
  sim->require_subcommand(1);
  auto* sim_spawn = sim->add_subcommand("spawn", "Register simulated nodes and keep them alive until interrupted");
  std::string spec_path;
  const char* env_uri = std::getenv("ROS_MASTER_URI");
  std::string master_uri = env_uri ? env_uri : "http://127.0.0.1:11311/";
  sim_spawn->add_option("--spec", spec_path, "YAML list of nodes")->required()->check(CLI::ExistingFile);
  sim_spawn->add_option("--master-uri", master_uri, "Master (default $ROS_MASTER_URI)")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  config.master_binary = master_bin;
  config.work_dir = work_dir;

  try {
    if (*scenario_run) {
      const auto report = run_scenario(case_id, config);
      report.print(std::cout);
      return report.passed() ? 0 : 1;
    }
    if (*bench) {
      std::ofstream file;
      if (!csv_path.empty()) {
        file.open(csv_path);
        if (!file) throw std::runtime_error("cannot write " + csv_path);
      }
      std::ostream& out = csv_path.empty() ? std::cout : file;
      out << "# " << hardware_context() << "\n" << bench_csv_header() << "\n";
      for (int n : node_counts) {
        const auto row = bench_recovery(n, trials, config);
        out << bench_csv_row(row) << std::endl;
        if (!csv_path.empty()) std::cerr << bench_csv_row(row) << std::endl;
      }
      return 0;
    }
    if (*inspect) {
      const auto result = inspect_checkpoint(inspect_path);
      (result.valid ? std::cout : std::cerr) << inspect_path << ": " << result.summary << std::endl;
      return result.valid ? 0 : 1;
    }
    if (*sim_spawn) {
      const EndpointUri uri(master_uri);
      std::vector<std::unique_ptr<SimNode>> nodes;
      for (auto& spec : load_sim_specs(spec_path)) {
        nodes.push_back(SimNode::spawn(std::move(spec), uri));
        std::cout << "spawned " << nodes.back()->name().str() << " at " << nodes.back()->api_uri().str() << std::endl;
      }
      wait_for_stop_signal();
      return 0;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
