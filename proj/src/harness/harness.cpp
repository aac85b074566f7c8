#include "rescue/harness/harness.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <sys/utsname.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include "rescue/master.hpp"

namespace rescue::harness {
namespace {

using xmlrpc::Array;
using xmlrpc::Value;

std::string plural(std::size_t n, const char* word) {
  return fmt::format("{} {}{}", n, word, n == 1 ? "" : "s");
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const auto mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : (values[mid - 1] + values[mid]) / 2.0;
}

NameList name_list_from(const Value& value) {
  NameList out;
  for (const auto& entry : value.as<Array>()) {
    const auto& pair = entry.as<Array>();
    if (pair.size() != 2) throw xmlrpc::ParseError("system state entries are [name, [nodes]] pairs");
    std::vector<std::string> names;
    for (const auto& n : pair[1].as<Array>()) names.push_back(n.as<std::string>());
    out.emplace_back(pair[0].as<std::string>(), std::move(names));
  }
  return out;
}

}  // namespace

HarnessConfig HarnessConfig::defaults() {
  HarnessConfig config;
  config.master_binary = executable_dir() / "rescue_master_hooks";
  config.work_dir = std::filesystem::temp_directory_path() / "rescue-harness";
  return config;
}

// ---------------------------------------------------------------------------

MasterProcess MasterProcess::start(const Options& options) {
  MasterProcess process;
  process.options_ = options;
  std::vector<std::string> argv{options.binary.string(), "--host", "127.0.0.1", "--port", std::to_string(options.port)};
  if (options.rescue) argv.emplace_back("--rescue");
  if (!options.checkpoint_path.empty()) {
    argv.emplace_back("--checkpoint-path");
    argv.push_back(options.checkpoint_path.string());
  }
  ChildProcess::Options child;
  child.output_path = options.log_path;
  child.env = options.env;
  process.child_ = ChildProcess::spawn(argv, child);
  return process;
}

bool MasterProcess::wait_ready(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (ping_node(uri(), std::chrono::milliseconds(200))) return true;
    if (!child_.running()) return false;
    // Leave the CPU to the starting master; on small machines tight polling
    // shows up in its recovery time.
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  return false;
}

void MasterProcess::kill() { child_.kill(); }

std::optional<int> MasterProcess::wait_exit(std::chrono::milliseconds timeout) { return child_.wait_for(timeout); }

EndpointUri MasterProcess::uri() const {
  return EndpointUri("http://127.0.0.1:" + std::to_string(options_.port) + "/");
}

std::string MasterProcess::log() const {
  std::ifstream in(options_.log_path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::optional<double> MasterProcess::recovery_ms() const {
  const auto text = log();
  constexpr std::string_view key = "duration_ms=";
  const auto at = text.rfind(key);
  if (at == std::string::npos) return std::nullopt;
  try {
    return std::stod(text.substr(at + key.size()));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------

SystemState system_state_from_xmlrpc(const Value& value) {
  const auto& parts = value.as<Array>();
  if (parts.size() != 3) throw xmlrpc::ParseError("system state has three parts");
  return {name_list_from(parts[0]), name_list_from(parts[1]), name_list_from(parts[2])};
}

RpcTriple master_call(const EndpointUri& master, std::string_view method, Array args) {
  return call_api(master, method, args, std::chrono::milliseconds(2000));
}

SystemState fetch_system_state(const EndpointUri& master) {
  const auto triple = master_call(master, "getSystemState", {Value("/harness")});
  if (triple.code != RpcTriple::kSuccess) throw std::runtime_error("getSystemState: " + triple.status);
  return system_state_from_xmlrpc(triple.value);
}

std::string fetch_system_state_bytes(const EndpointUri& master) {
  const auto triple = master_call(master, "getSystemState", {Value("/harness")});
  if (triple.code != RpcTriple::kSuccess) throw std::runtime_error("getSystemState: " + triple.status);
  return xmlrpc::encode_value(triple.value);
}

std::optional<MasterState> wait_for_checkpoint(const std::filesystem::path& path,
                                               const std::function<bool(const MasterState&)>& accept,
                                               std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    try {
      std::error_code ec;
      if (std::filesystem::exists(path, ec)) {
        auto state = load_checkpoint_file(path);
        if (accept(state)) return state;
      }
    } catch (const CheckpointLoadError&) {
      // Atomic rename means this should not happen; keep polling and let the
      // caller's timeout report it.
    }
    if (std::chrono::steady_clock::now() >= deadline) return std::nullopt;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

MasterState rebuild_from_specs(const std::vector<const SimNode*>& nodes) {
  MasterState state;
  for (const auto* node : nodes) {
    const auto api = node->api_uri();
    for (const auto& t : node->spec().topics) {
      if (t.direction == TopicRole::Direction::kPublish) {
        register_publisher(state, node->name(), api, t.topic, t.datatype);
      } else {
        register_subscriber(state, node->name(), api, t.topic, t.datatype);
      }
    }
    for (const auto& s : node->spec().services) {
      register_service(state, node->name(), api, s, EndpointUri(node->service_uri()));
    }
  }
  return state;
}

// ---------------------------------------------------------------------------

bool ScenarioReport::passed() const {
  if (steps.empty()) return false;
  return std::all_of(steps.begin(), steps.end(), [](const ScenarioStep& s) { return s.pass; });
}

void ScenarioReport::print(std::ostream& out) const {
  out << "scenario " << case_id << ": " << (passed() ? "PASS" : "FAIL");
  if (recovery_ms) out << fmt::format(" (recovery {:.3f} ms)", *recovery_ms);
  out << "\n";
  for (const auto& step : steps) {
    out << "  [" << (step.pass ? "ok" : "FAIL") << "] " << step.description;
    if (!step.detail.empty()) out << " -- " << step.detail;
    out << "\n";
  }
}

// ---------------------------------------------------------------------------

InspectResult inspect_checkpoint(const std::filesystem::path& path) {
  try {
    const auto state = load_checkpoint_file(path);
    return {true, fmt::format("{}, {}, {}, {}", plural(state.nodes.size(), "node"), plural(state.topics.size(), "topic"),
                              plural(state.services.size(), "service"), plural(state.params.leaf_count(), "param"))};
  } catch (const CheckpointLoadError& e) {
    return {false, e.what()};
  }
}

std::string hardware_context() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.starts_with("model name")) {
      cpu = line.substr(line.find(':') + 2);
      break;
    }
  }
  utsname uts{};
  ::uname(&uts);
  return fmt::format("{}; {} hardware threads; {} {}", cpu, std::thread::hardware_concurrency(), uts.sysname,
                     uts.release);
}

std::string bench_csv_header() { return "n_nodes,trials,time_to_recover_s,total_start_s"; }

std::string bench_csv_row(const BenchRow& row) {
  return fmt::format("{},{},{:.6f},{:.6f}", row.n_nodes, row.trials, row.time_to_recover_s, row.total_start_s);
}

BenchRow bench_recovery(int n_nodes, int trials, const HarnessConfig& config) {
  if (n_nodes < 0) throw std::invalid_argument("node count must not be negative");
  if (trials < 3) throw std::invalid_argument("at least 3 trials are required");

  std::vector<double> recover_s;
  std::vector<double> start_s;
  for (int trial = 0; trial < trials; ++trial) {
    const auto dir = config.work_dir / fmt::format("bench-{}-{}-{}", ::getpid(), n_nodes, trial);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    MasterProcess::Options options;
    options.binary = config.master_binary;
    options.port = pick_free_port();
    options.rescue = true;
    options.checkpoint_path = dir / "latest-chkpt.yaml";
    options.log_path = dir / "master-0.log";
    auto master = MasterProcess::start(options);
    if (!master.wait_ready(std::chrono::seconds(10))) throw std::runtime_error("benchmark master did not start");

    std::vector<std::unique_ptr<SimNode>> nodes;
    for (int i = 0; i < n_nodes; ++i) {
      SimNodeSpec spec;
      spec.name = GraphName(fmt::format("/bench/node_{}", i));
      spec.role = SimNodeSpec::Role::kMixed;
      spec.topics.push_back({GraphName(fmt::format("/bench/topic_{}", i)), "std_msgs/String",
                             TopicRole::Direction::kPublish});
      spec.topics.push_back({GraphName(fmt::format("/bench/topic_{}", (i + 1) % n_nodes)), "std_msgs/String",
                             TopicRole::Direction::kSubscribe});
      nodes.push_back(SimNode::spawn(std::move(spec), master.uri()));
    }
    const auto live = fetch_system_state(master.uri());
    if (!wait_for_checkpoint(options.checkpoint_path,
                             [&](const MasterState& s) { return get_system_state(s) == live; },
                             std::chrono::seconds(5))) {
      throw std::runtime_error("checkpoint did not converge before the crash");
    }
    // Flush writeback left over from setup so it does not land inside the timed window.
    ::sync();
    master.kill();

    options.log_path = dir / "master-1.log";
    const auto t0 = std::chrono::steady_clock::now();
    master = MasterProcess::start(options);
    if (!master.wait_ready(std::chrono::seconds(30))) throw std::runtime_error("benchmark master did not recover");
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto recovery = master.recovery_ms();
    if (!recovery) throw std::runtime_error("master printed no recovery summary");

    spdlog::debug("bench n={} trial={} recover_ms={:.3f} total_ms={:.3f}", n_nodes, trial, *recovery, total * 1000.0);
    recover_s.push_back(*recovery / 1000.0);
    start_s.push_back(total);
    master.kill();
    nodes.clear();
    std::filesystem::remove_all(dir);
  }
  // Median: single trials on a loaded host can be off by several times.
  return {n_nodes, trials, median(recover_s), median(start_s)};
}

}  // namespace rescue::harness
