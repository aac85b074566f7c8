#include <gtest/gtest.h>

#include <sstream>
#include <thread>

#include "rescue/monitor.hpp"
#include "rescue/rpc.hpp"

using namespace rescue;
using namespace std::chrono_literals;

namespace {

// Reference decision: the trailing run of failures is at least k long.
Decision brute_force(const std::vector<bool>& outcomes, int k) {
  int run = 0;
  for (auto it = outcomes.rbegin(); it != outcomes.rend() && !*it; ++it) ++run;
  return run >= k ? Decision::kFailed : Decision::kHealthy;
}

class FakeMaster {
 public:
  FakeMaster() : server_([](const xmlrpc::MethodCall&) { return RpcTriple::success("", xmlrpc::Value(1)).to_value(); }, 2) {
    EXPECT_TRUE(server_.bind("127.0.0.1", 0));
    server_.start();
  }
  EndpointUri uri() const { return server_.uri(); }
  void stop() { server_.stop(); }

 private:
  XmlRpcServer server_;
};

}  // namespace

TEST(MonitorDecision, MatchesBruteForceOnAllShortHistories) {
  for (int k = 1; k <= 3; ++k) {
    for (int len = 0; len <= 8; ++len) {
      for (unsigned bits = 0; bits < (1u << len); ++bits) {
        PollHistory history;
        std::vector<bool> outcomes;
        for (int i = 0; i < len; ++i) {
          const bool ok = (bits >> i) & 1u;
          outcomes.push_back(ok);
          ASSERT_EQ(update_and_decide(history, ok, k), brute_force(outcomes, k)) << "k=" << k << " bits=" << bits;
        }
      }
    }
  }
}

TEST(MonitorDecision, HistoryIsBounded) {
  PollHistory history;
  for (int i = 0; i < 1000; ++i) history.record(i % 2 == 0);
  EXPECT_EQ(history.samples().size(), PollHistory::kCapacity);
}

TEST(MonitorConfig, Validation) {
  MonitorConfig config;
  EXPECT_NO_THROW(config.validate());
  config.failure_threshold = 0;
  EXPECT_THROW(config.validate(), std::invalid_argument);
  config = {};
  config.poll_interval_ms = 0;
  EXPECT_THROW(config.validate(), std::invalid_argument);
  config = {};
  config.max_restarts = -1;
  EXPECT_THROW(config.validate(), std::invalid_argument);
}

TEST(Monitor, PollOnce) {
  FakeMaster master;
  EXPECT_TRUE(poll_once(master.uri(), 200ms));
  const auto uri = master.uri();
  master.stop();
  EXPECT_FALSE(poll_once(uri, 200ms));
}

TEST(Monitor, RestartRequiresACommand) {
  MonitorConfig config;
  PollHistory history;
  EXPECT_THROW(restart_master(config, history), std::invalid_argument);
}

TEST(Monitor, DefaultRestartCommand) {
  const auto argv = default_restart_command(EndpointUri("http://127.0.0.1:11999/"), true, "/tmp/c.yaml");
  ASSERT_EQ(argv.size(), 8u);
  EXPECT_TRUE(argv[0].ends_with("/rescue_master"));
  EXPECT_EQ(argv[4], "11999");
  EXPECT_EQ(argv[5], "--rescue");
  EXPECT_EQ(argv[7], "/tmp/c.yaml");
}

TEST(Monitor, HealthyMasterIsLeftAlone) {
  FakeMaster master;
  MonitorConfig config;
  config.master_uri = master.uri();
  config.poll_interval_ms = 20;
  config.restart_command = {"/bin/true"};
  int restarts = 0;
  std::ostringstream log;
  std::stop_source stop;
  std::jthread loop([&] { run_monitor(config, stop.get_token(), log, {{}, [&](pid_t) { ++restarts; }}); });
  std::this_thread::sleep_for(300ms);
  stop.request_stop();
  loop.join();
  EXPECT_EQ(restarts, 0);
}

TEST(Monitor, GivesUpWhenTheRestartBudgetIsSpent) {
  MonitorConfig config;
  config.master_uri = EndpointUri("http://127.0.0.1:9/");
  config.poll_interval_ms = 10;
  config.poll_timeout_ms = 50;
  config.failure_threshold = 2;
  config.boot_grace_ms = 0;
  config.max_restarts = 2;
  config.restart_command = {"/bin/true"};
  std::vector<Decision> transitions;
  int restarts = 0;
  std::ostringstream log;
  const int rc = run_monitor(config, std::stop_token{}, log,
                             {[&](Decision d) { transitions.push_back(d); }, [&](pid_t) { ++restarts; }});
  EXPECT_EQ(rc, 2);
  EXPECT_EQ(restarts, 2);
  ASSERT_FALSE(transitions.empty());
  EXPECT_EQ(transitions.front(), Decision::kFailed);
  EXPECT_NE(log.str().find("FAILED"), std::string::npos);
  EXPECT_NE(log.str().find("exhausted"), std::string::npos);
}

TEST(Monitor, StopInterruptsTheSleep) {
  MonitorConfig config;
  config.master_uri = EndpointUri("http://127.0.0.1:9/");
  config.poll_interval_ms = 60000;
  config.restart_command = {"/bin/true"};
  std::ostringstream log;
  std::stop_source stop;
  const auto start = std::chrono::steady_clock::now();
  std::jthread loop([&] { run_monitor(config, stop.get_token(), log); });
  std::this_thread::sleep_for(100ms);
  stop.request_stop();
  loop.join();
  EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
}
