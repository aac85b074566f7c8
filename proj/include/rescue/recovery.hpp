#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rescue/checkpoint.hpp"
#include "rescue/registry.hpp"
#include "rescue/rpc.hpp"

namespace rescue {

struct ReconcileReport {
  std::size_t probed = 0;
  std::vector<GraphName> dropped_nodes;
  /// Topics whose publisher set differs between the checkpoint and the
  /// reconciled state (including topics that disappeared).
  std::vector<GraphName> changed_topics;
  std::size_t notified_subscribers = 0;
  /// Load + reconcile wall time. Excludes the notification fan-out.
  double duration_ms = 0.0;
};

using LivenessProbe = std::function<bool(const EndpointUri& api_uri)>;

/// getPid with a per-attempt timeout; a node is dead only after
/// `1 + retries` failed attempts.
LivenessProbe make_liveness_probe(std::chrono::milliseconds timeout = std::chrono::milliseconds(200), int retries = 1);

/// Missing file: empty state (first boot). Unreadable or invalid file:
/// CheckpointLoadError.
MasterState load_last(const std::filesystem::path& path);

struct ReconcileResult {
  MasterState state;
  ReconcileReport report;
};

/// Probes every checkpointed node (at most `concurrency` at a time) and drops
/// the unreachable ones together with all their registrations.
ReconcileResult reconcile(MasterState state, const LivenessProbe& probe, std::size_t concurrency = 16);

/// Sends the current publisher list of each topic to each of its subscribers.
/// Returns the number of deliveries that succeeded.
std::size_t renotify(const std::vector<GraphName>& topics, const MasterState& state, const UpdateSender& sender,
                     std::size_t concurrency = 16);

/// Topics in `state` with at least one subscriber.
std::vector<GraphName> subscribed_topics(const MasterState& state);

struct RecoveryOptions {
  std::filesystem::path checkpoint_path;
  LivenessProbe probe;
  UpdateSender sender;
  std::size_t concurrency = 16;
  /// Receives the reconciled state as the first checkpoint of this lifetime.
  CheckpointWriter* writer = nullptr;
};

/// load_last -> reconcile -> renotify -> persist.
///
/// A crash can lose publisher updates that were owed but not yet sent, and
/// nothing in the checkpoint says which. Every surviving subscriber is
/// therefore re-sent its topic's current publisher list, not only the
/// subscribers of topics that reconciliation changed.
ReconcileResult recover(const RecoveryOptions& options);

/// One-line console summary of a recovery.
std::string describe(const ReconcileReport& report, std::size_t recovered_nodes);

/// Runs fn(i) for i in [0, count) on at most `concurrency` threads.
void parallel_for(std::size_t count, std::size_t concurrency, const std::function<void(std::size_t)>& fn);

}  // namespace rescue
