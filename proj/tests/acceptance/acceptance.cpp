// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Optional arguments select criteria by number.

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "rescue/checkpoint.hpp"
#include "rescue/harness/harness.hpp"
#include "rescue/master.hpp"
#include "rescue/monitor.hpp"
#include "support/graph_gen.hpp"

namespace {

using namespace rescue;
using namespace rescue::harness;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;
using xmlrpc::Value;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / fmt::format("rescue-acceptance-{}-{}", ::getpid(), name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

HarnessConfig harness_config() {
  HarnessConfig config;
  config.master_binary = RESCUE_MASTER_HOOKS_BIN;
  config.work_dir = scratch("harness");
  return config;
}

std::string failed_steps(const ScenarioReport& report) {
  std::string out;
  for (const auto& s : report.steps) {
    if (!s.pass) out += (out.empty() ? "" : "; ") + s.description + (s.detail.empty() ? "" : " (" + s.detail + ")");
  }
  return out;
}

Verdict scenario(const std::string& id, double budget_s) {
  const auto start = Clock::now();
  const auto report = run_scenario(id, harness_config());
  const double wall = seconds_since(start);
  if (!report.passed()) return {false, failed_steps(report)};
  return {wall < budget_s, fmt::format("{} steps ok, recovery {:.2f} ms, {:.2f} s wall", report.steps.size(),
                                       report.recovery_ms.value_or(-1), wall)};
}

// 1. Crash with live nodes: byte-identical getSystemState, late subscriber
//    finds the original publisher, all within 10 s.
Verdict crash_with_live_nodes() { return scenario("case0", 10.0); }

// 2. A node dies during the outage and is purged; everything else matches a
//    fresh registration of the survivors.
Verdict node_dies_during_outage() { return scenario("case1", 30.0); }

// 3. Crash between commit and fan-out: subscribers still converge.
Verdict crash_before_fanout() { return scenario("case2", 30.0); }

// 4. Crash during checkpoint writes at random points never leaves a corrupt
//    checkpoint: 100 master-process trials plus 100 commit-level trials that
//    include the no-previous-checkpoint case.
Verdict crash_during_write() {
  gen::Rng rng(std::random_device{}());
  const auto dir = scratch("c4");
  int corrupt = 0;
  int mismatched = 0;
  int not_crashed = 0;
  std::string first_problem;
  auto note = [&](const std::string& what) {
    if (first_problem.empty()) first_problem = what;
  };

  // Master processes crashing mid-write.
  for (int trial = 0; trial < 100; ++trial) {
    MasterProcess::Options options;
    options.binary = RESCUE_MASTER_HOOKS_BIN;
    options.port = pick_free_port();
    options.checkpoint_path = dir / fmt::format("m{}.yaml", trial);
    options.log_path = dir / fmt::format("m{}.log", trial);
    auto master = MasterProcess::start(options);
    if (!master.wait_ready(10s)) {
      note(fmt::format("trial {}: master did not start", trial));
      ++not_crashed;
      continue;
    }
    const auto uri = master.uri();
    const auto entries = 1 + gen::pick(rng, 20);
    for (std::size_t i = 0; i < entries; ++i) {
      master_call(uri, "setParam", {Value("/acc"), Value(fmt::format("/p/k{}", i)), Value(gen::random_text(rng))});
    }
    const auto live = master_call(uri, "getParam", {Value("/acc"), Value("/")}).value;
    const auto committed = wait_for_checkpoint(
        options.checkpoint_path, [&](const MasterState& s) { return param_to_xmlrpc(ParamValue(s.params.root())) == live; },
        5s);
    if (!committed) {
      note(fmt::format("trial {}: checkpoint never caught up", trial));
      ++mismatched;
      continue;
    }
    const double fraction = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    master_call(uri, "injectCrash", {Value("/acc"), Value("during-checkpoint-write"), Value(fraction)});
    try {
      master_call(uri, "setParam", {Value("/acc"), Value("/trigger"), Value(std::string(64 + gen::pick(rng, 4096), 'z'))});
    } catch (const std::exception&) {
    }
    if (master.wait_exit(5s) != kCrashExitCode) {
      note(fmt::format("trial {}: master did not crash (fraction {:.3f})", trial, fraction));
      ++not_crashed;
      master.kill();
      continue;
    }
    try {
      if (!(load_checkpoint_file(options.checkpoint_path) == *committed)) {
        ++mismatched;
        note(fmt::format("trial {}: checkpoint is not the last committed state", trial));
      }
    } catch (const CheckpointLoadError& e) {
      ++corrupt;
      note(fmt::format("trial {}: {}", trial, e.what()));
    }
  }

  // Commit-level crashes at every stage, a quarter with no prior checkpoint.
  int fork_corrupt = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto path = dir / fmt::format("f{}.yaml", trial);
    const bool has_previous = trial % 4 != 0;
    const auto previous = gen::random_state(rng);
    if (has_previous) commit_checkpoint(serialize_checkpoint(previous), path);
    const auto next = gen::random_state(rng, 40);
    const auto text = serialize_checkpoint(next);
    const auto stage = static_cast<CommitStage>(gen::pick(rng, 4));
    const auto crash_at = gen::pick(rng, text.size());
    const pid_t pid = ::fork();
    if (pid == 0) {
      CommitOptions options;
      options.chunk_size = 1 + gen::pick(rng, 256);
      options.probe = [&](CommitStage s, std::size_t written, std::size_t) {
        if (s == stage && (s != CommitStage::kWriting || written >= crash_at)) ::_exit(86);
      };
      try {
        commit_checkpoint(text, path, options);
      } catch (...) {
        ::_exit(1);
      }
      ::_exit(0);
    }
    ::waitpid(pid, nullptr, 0);
    try {
      const auto loaded = load_last(path);
      const auto& expected = stage == CommitStage::kRenamed ? next : (has_previous ? previous : MasterState{});
      if (!(loaded == expected)) {
        ++mismatched;
        note(fmt::format("commit trial {}: unexpected state after crash", trial));
      }
    } catch (const CheckpointLoadError& e) {
      ++fork_corrupt;
      note(fmt::format("commit trial {}: {}", trial, e.what()));
    }
  }
  std::filesystem::remove_all(dir);
  const bool pass = corrupt == 0 && fork_corrupt == 0 && mismatched == 0 && not_crashed == 0;
  return {pass, fmt::format("100 process trials: {} corrupt, {} not crashed; 100 commit trials: {} corrupt; {} mismatched{}",
                            corrupt, not_crashed, fork_corrupt, mismatched,
                            first_problem.empty() ? "" : "; first: " + first_problem)};
}

// 5. Recovery time grows with graph size: non-decreasing, linear fit
//    R^2 >= 0.95, n=80 under 1 s.
Verdict recovery_scaling() {
  const std::vector<int> sizes{1, 5, 10, 20, 40, 80};
  const int trials = 5;
  const auto config = harness_config();
  std::vector<double> xs;
  std::vector<double> ys;
  std::ostringstream csv;
  csv << "# " << hardware_context() << "\n" << bench_csv_header() << "\n";
  for (int n : sizes) {
    const auto row = bench_recovery(n, trials, config);
    xs.push_back(n);
    ys.push_back(row.time_to_recover_s);
    csv << bench_csv_row(row) << "\n";
  }
  std::ofstream("bench_recovery.csv") << csv.str();

  bool monotone = true;
  for (std::size_t i = 1; i < ys.size(); ++i) monotone = monotone && ys[i] >= ys[i - 1];
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  const double r2 = syy == 0 ? 0 : (sxy * sxy) / (sxx * syy);
  std::string series;
  for (std::size_t i = 0; i < xs.size(); ++i) series += fmt::format("{}{}:{:.2f}ms", i ? " " : "", xs[i], ys[i] * 1000);
  return {monotone && r2 >= 0.95 && ys.back() < 1.0,
          fmt::format("{}; non-decreasing={} R^2={:.3f} ({} trials each)", series, monotone, r2, trials)};
}

// 6. Checkpoint round trip and determinism on 1000 random states, < 30 s.
Verdict checkpoint_roundtrip() {
  const auto start = Clock::now();
  gen::Rng rng(std::random_device{}());
  int failures = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto state = gen::random_state(rng);
    const auto text = serialize_checkpoint(state);
    try {
      const auto back = deserialize_checkpoint(text);
      if (!(back == state) || serialize_checkpoint(state) != text || serialize_checkpoint(back) != text) ++failures;
    } catch (const CheckpointLoadError&) {
      ++failures;
    }
  }
  const double wall = seconds_since(start);
  return {failures == 0 && wall < 30.0, fmt::format("1000 states, {} failures, {:.2f} s", failures, wall)};
}

// 7. Failure decision equals the brute-force rule on every history up to
//    length 8 for k = 1..3; a real monitor restarts a killed master exactly
//    once within (k+1) * interval + timeout + 5 s.
Verdict monitor() {
  int mismatches = 0;
  for (int k = 1; k <= 3; ++k) {
    for (int len = 0; len <= 8; ++len) {
      for (unsigned bits = 0; bits < (1u << len); ++bits) {
        PollHistory history;
        std::vector<bool> outcomes;
        for (int i = 0; i < len; ++i) {
          outcomes.push_back((bits >> i) & 1u);
          int run = 0;
          for (auto it = outcomes.rbegin(); it != outcomes.rend() && !*it; ++it) ++run;
          const auto expected = run >= k ? Decision::kFailed : Decision::kHealthy;
          if (update_and_decide(history, outcomes.back(), k) != expected) ++mismatches;
        }
      }
    }
  }

  const auto dir = scratch("c7");
  const int port = pick_free_port();
  const int interval_ms = 200;
  const int timeout_ms = 500;
  const int k = 3;
  const auto checkpoint = dir / "c.yaml";
  const std::string restart_cmd = fmt::format("{} --port {} --rescue --checkpoint-path {}", RESCUE_MASTER_BIN, port,
                                              checkpoint.string());

  ChildProcess master = ChildProcess::spawn({RESCUE_MASTER_BIN, "--port", std::to_string(port), "--rescue",
                                             "--checkpoint-path", checkpoint.string()},
                                            {dir / "master.log", {}});
  const EndpointUri uri(fmt::format("http://127.0.0.1:{}/", port));
  bool up = false;
  for (int i = 0; i < 200 && !up; ++i) {
    up = ping_node(uri, 200ms);
    if (!up) std::this_thread::sleep_for(20ms);
  }
  if (!up) return {false, "initial master did not start"};

  const auto monitor_log = dir / "monitor.log";
  ChildProcess mon = ChildProcess::spawn(
      {RESCUE_MONITOR_BIN, "--master-uri", uri.str(), "--poll-interval-ms", std::to_string(interval_ms), "--timeout-ms",
       std::to_string(timeout_ms), "--threshold", std::to_string(k), "--restart-cmd", restart_cmd},
      {monitor_log, {}});
  std::this_thread::sleep_for(std::chrono::milliseconds(3 * interval_ms));

  master.kill();
  const auto killed_at = Clock::now();
  const double bound = (k + 1) * interval_ms / 1000.0 + timeout_ms / 1000.0 + 5.0;
  double restored_after = -1;
  while (seconds_since(killed_at) < bound + 2.0) {
    if (ping_node(uri, 100ms)) {
      restored_after = seconds_since(killed_at);
      break;
    }
    std::this_thread::sleep_for(10ms);
  }
  // Stay around long enough to catch a spurious second restart.
  std::this_thread::sleep_for(std::chrono::milliseconds((k + 2) * interval_ms + 1000));
  const bool still_up = ping_node(uri, 200ms);
  mon.signal(SIGTERM);
  mon.wait_for(5s);

  std::ifstream in(monitor_log);
  std::string line;
  int restarts = 0;
  pid_t restarted_pid = -1;
  const std::regex restarted(R"(restarted master \(pid (\d+))");
  while (std::getline(in, line)) {
    std::smatch m;
    if (std::regex_search(line, m, restarted)) {
      ++restarts;
      restarted_pid = std::stoi(m[1]);
    }
  }
  if (restarted_pid > 0) ::kill(restarted_pid, SIGKILL);
  std::filesystem::remove_all(dir);

  const bool e2e = restarts == 1 && restored_after >= 0 && restored_after <= bound && still_up;
  return {mismatches == 0 && e2e,
          fmt::format("{} decision mismatches over k=1..3, len<=8; {} restart(s), master back after {:.2f} s (bound "
                      "{:.2f} s), stable={}",
                      mismatches, restarts, restored_after, bound, still_up)};
}

// 8. 10,000 random registry events replayed against a naive model, with
//    referential integrity after every event, < 60 s.
Verdict replay() {
  const auto start = Clock::now();
  gen::Rng rng(std::random_device{}());
  gen::Universe u;
  u.nodes = 16;
  u.topics = 10;
  u.services = 6;
  u.uris_per_node = 3;
  MasterState state;
  gen::NaiveRegistry model;
  for (int i = 0; i < 10000; ++i) {
    const auto event = gen::random_event(rng, u);
    const auto got = gen::apply(state, event);
    const auto want = model.apply(event);
    if (!(got == want)) return {false, fmt::format("event {}: results differ", i)};
    if (const auto problem = gen::compare_with_model(state, model); !problem.empty()) {
      return {false, fmt::format("event {}: {}", i, problem)};
    }
  }
  const double wall = seconds_since(start);
  return {wall < 60.0, fmt::format("10000 events, 0 divergences, {} nodes at end, {:.2f} s", state.nodes.size(), wall)};
}

// 9. Without --rescue: no checkpoint, no banner. With --rescue: banner and
//    a checkpoint at the default path with mode 0655.
Verdict rescue_flag() {
  const auto home = scratch("c9");
  const auto expected_path = home / ".ros/log/latest-chkpt.yaml";
  auto run = [&](bool rescue, const std::string& tag) {
    MasterProcess::Options options;
    options.binary = RESCUE_MASTER_BIN;
    options.port = pick_free_port();
    options.rescue = rescue;
    options.log_path = home / (tag + ".log");
    options.env = {{"HOME", home.string()}};
    auto master = MasterProcess::start(options);
    const bool ready = master.wait_ready(10s);
    if (ready) master_call(master.uri(), "setParam", {Value("/acc"), Value("/x"), Value(1)});
    std::this_thread::sleep_for(200ms);
    const auto log = master.log();
    master.kill();
    return std::pair{ready, log};
  };

  const auto [plain_ready, plain_log] = run(false, "plain");
  const bool plain_file = std::filesystem::exists(expected_path);
  const bool plain_banner = plain_log.find(kRescueBanner) != std::string::npos;

  const auto [rescue_ready, rescue_log] = run(true, "rescue");
  const bool rescue_banner = rescue_log.find(kRescueBanner) != std::string::npos;
  struct stat st {};
  const bool rescue_file = ::stat(expected_path.c_str(), &st) == 0;
  const unsigned mode = rescue_file ? (st.st_mode & 07777) : 0;
  std::filesystem::remove_all(home);

  const bool pass = plain_ready && !plain_file && !plain_banner && rescue_ready && rescue_banner && rescue_file &&
                    mode == 0655;
  return {pass, fmt::format("without: file={} banner={}; with: banner={} file={} mode={:04o}", plain_file, plain_banner,
                            rescue_banner, rescue_file, mode)};
}

}  // namespace

int main(int argc, char** argv) {
  signal(SIGPIPE, SIG_IGN);
  // The replay deliberately provokes type conflicts and node restarts.
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"crash with live nodes recovers the exact graph", crash_with_live_nodes},
      {"node lost during the outage is purged", node_dies_during_outage},
      {"crash before fan-out still converges subscribers", crash_before_fanout},
      {"crash during checkpoint write never corrupts", crash_during_write},
      {"recovery time scales linearly", recovery_scaling},
      {"checkpoint round trip is exact and deterministic", checkpoint_roundtrip},
      {"monitor detects and restarts exactly once", monitor},
      {"registry replay matches the reference model", replay},
      {"rescue flag controls checkpointing", rescue_flag},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.contains(number)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << number << " " << criteria[i].first << " -- " << v.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
