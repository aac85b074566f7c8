#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "rescue/checkpoint.hpp"
#include "rescue/recovery.hpp"
#include "rescue/registry.hpp"
#include "rescue/rpc.hpp"

namespace rescue {

inline constexpr int kDefaultMasterPort = 11311;
inline constexpr std::string_view kRescueBanner = "ROS Rescue enabled. Master is now fault tolerant!!";
/// Exit status of a master terminated by an injected crash.
inline constexpr int kCrashExitCode = 86;

struct MasterEndpointConfig {
  std::string bind_host = "127.0.0.1";
  int port = kDefaultMasterPort;
  bool rescue_enabled = false;
  std::filesystem::path checkpoint_path = default_checkpoint_path();
  /// Exposes the injectCrash method. Only the hooks build of the master sets it.
  bool test_hooks = false;
  std::size_t threads = 64;
  std::size_t probe_concurrency = 16;

  void validate() const;
};

class StartupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ParamValue param_from_xmlrpc(const xmlrpc::Value& value);
xmlrpc::Value param_to_xmlrpc(const ParamValue& value);
xmlrpc::Value system_state_to_xmlrpc(const SystemState& state);

/// Maps the master API method table onto a Registry. Pure adapter: every
/// triple's value is the registry result re-encoded.
class MasterApi {
 public:
  struct Hooks {
    /// Receives the publisher updates owed after a mutation.
    std::function<void(std::vector<PublisherUpdate>)> publish;
    /// Handles injectCrash(mode, args...). Unset: the method does not exist.
    std::function<RpcTriple(const std::string& mode, const xmlrpc::Array& args)> inject_crash;
  };

  MasterApi(Registry& registry, EndpointUri self_uri, Hooks hooks);

  RpcTriple dispatch(std::string_view method, const xmlrpc::Array& args);

 private:
  void publish(std::vector<PublisherUpdate> updates);

  Registry& registry_;
  EndpointUri self_uri_;
  Hooks hooks_;
};

/// A running master: XML-RPC endpoint, registry, checkpoint writer and
/// publisher-update fan-out.
class MasterServer {
 public:
  enum class CrashMode { kNone, kImmediate, kDuringCheckpointWrite, kBeforeFanout };

  /// Binds, recovers (when rescue is enabled) and starts serving. Status
  /// lines go to `console`. Throws StartupError on bind or recovery failure.
  MasterServer(MasterEndpointConfig config, std::ostream& console);
  ~MasterServer();

  MasterServer(const MasterServer&) = delete;
  MasterServer& operator=(const MasterServer&) = delete;

  EndpointUri uri() const;
  Registry& registry() { return *registry_; }
  CheckpointWriter* writer() { return writer_.get(); }
  UpdateDispatcher& dispatcher() { return *dispatcher_; }
  const std::optional<ReconcileReport>& recovery_report() const { return report_; }
  RpcTriple dispatch(std::string_view method, const xmlrpc::Array& args) { return api_->dispatch(method, args); }

 private:
  void publish(std::vector<PublisherUpdate> updates);
  RpcTriple inject_crash(const std::string& mode, const xmlrpc::Array& args);
  void on_commit_progress(CommitStage stage, std::size_t written, std::size_t total);

  MasterEndpointConfig config_;
  std::atomic<CrashMode> crash_mode_{CrashMode::kNone};
  std::atomic<double> crash_fraction_{0.5};
  std::unique_ptr<CheckpointWriter> writer_;
  std::unique_ptr<Registry> registry_;
  std::unique_ptr<UpdateDispatcher> dispatcher_;
  std::unique_ptr<MasterApi> api_;
  std::unique_ptr<XmlRpcServer> server_;
  std::optional<ReconcileReport> report_;
};

}  // namespace rescue
