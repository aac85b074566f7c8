#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rescue/checkpoint.hpp"
#include "rescue/harness/sim_node.hpp"
#include "rescue/process.hpp"
#include "rescue/registry.hpp"

namespace rescue::harness {

struct HarnessConfig {
  /// Master binary built with crash-injection hooks.
  std::filesystem::path master_binary;
  /// Scratch space; each run creates its own subdirectory.
  std::filesystem::path work_dir;

  /// rescue_master_hooks next to the running executable, scratch under /tmp.
  static HarnessConfig defaults();
};

/// A master running as a separate OS process.
class MasterProcess {
 public:
  struct Options {
    std::filesystem::path binary;
    int port = 0;
    bool rescue = true;
    std::filesystem::path checkpoint_path;
    std::filesystem::path log_path;
    std::map<std::string, std::string> env;
  };

  static MasterProcess start(const Options& options);

  /// Polls getPid until the endpoint answers (i.e. recovery has finished).
  bool wait_ready(std::chrono::milliseconds timeout);
  /// SIGKILL and reap.
  void kill();
  std::optional<int> wait_exit(std::chrono::milliseconds timeout);
  bool running() { return child_.running(); }

  EndpointUri uri() const;
  pid_t pid() const { return child_.pid(); }
  std::string log() const;
  /// duration_ms from the recovery summary line, when the master printed one.
  std::optional<double> recovery_ms() const;

 private:
  Options options_;
  ChildProcess child_;
};

// Master API helpers used by scenarios and tests.
SystemState system_state_from_xmlrpc(const xmlrpc::Value& value);
SystemState fetch_system_state(const EndpointUri& master);
/// getSystemState's value exactly as it travels on the wire.
std::string fetch_system_state_bytes(const EndpointUri& master);
RpcTriple master_call(const EndpointUri& master, std::string_view method, xmlrpc::Array args);

/// Waits until the checkpoint at `path` parses and `accept` holds for it.
std::optional<MasterState> wait_for_checkpoint(const std::filesystem::path& path,
                                               const std::function<bool(const MasterState&)>& accept,
                                               std::chrono::milliseconds timeout);

/// Rebuilds, in-process, the state a fresh master would hold if exactly these
/// nodes registered in order.
MasterState rebuild_from_specs(const std::vector<const SimNode*>& nodes);

struct ScenarioStep {
  std::string description;
  bool pass = false;
  std::string detail;
};

struct ScenarioReport {
  std::string case_id;
  std::vector<ScenarioStep> steps;
  std::optional<double> recovery_ms;

  bool passed() const;
  void print(std::ostream& out) const;
};

inline const std::vector<std::string> kScenarioIds{"case0", "case1", "case2", "case3"};

/// Throws std::invalid_argument for unknown case ids.
ScenarioReport run_scenario(const std::string& case_id, const HarnessConfig& config);

struct BenchRow {
  int n_nodes = 0;
  int trials = 0;
  double time_to_recover_s = 0.0;
  double total_start_s = 0.0;
};

BenchRow bench_recovery(int n_nodes, int trials, const HarnessConfig& config);
std::string bench_csv_header();
std::string bench_csv_row(const BenchRow& row);
/// One-line description of the host for the CSV preamble.
std::string hardware_context();

struct InspectResult {
  bool valid = false;
  std::string summary;
};

/// Summary like "2 nodes, 1 topic, 0 services, 0 params", or the load error.
InspectResult inspect_checkpoint(const std::filesystem::path& path);

}  // namespace rescue::harness
