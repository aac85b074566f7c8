#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>

#include "rescue/registry.hpp"

namespace rescue {

inline constexpr int kCheckpointSchemaVersion = 1;

/// Raised when a checkpoint document cannot be turned back into a MasterState.
class CheckpointLoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Canonical YAML checkpoint text. Equal states produce identical bytes; the
/// document ends with an explicit "..." end marker so truncation is detected.
std::string serialize_checkpoint(const MasterState& state);

/// Parses and validates a checkpoint. Never returns a partial state.
MasterState deserialize_checkpoint(const std::string& text);

/// Reads and deserializes the file at `path`.
MasterState load_checkpoint_file(const std::filesystem::path& path);

/// The checkpoint path used when none is configured: ~/.ros/log/latest-chkpt.yaml.
std::filesystem::path default_checkpoint_path();

std::filesystem::path temp_checkpoint_path(const std::filesystem::path& final_path);

/// Permission bits applied to every committed checkpoint (rw-r-xr-x).
inline constexpr std::filesystem::perms kCheckpointPerms = static_cast<std::filesystem::perms>(0655);

enum class CommitStage {
  kWriting,   // after each chunk of the temporary file reaches the kernel
  kWritten,   // temporary file complete, not yet synced
  kSynced,    // temporary file durable, not yet renamed
  kRenamed,   // final path replaced
};

/// Observation hook for commit progress. Crash-injection tests terminate the
/// process from inside it.
using CommitProbe = std::function<void(CommitStage stage, std::size_t bytes_written, std::size_t total_bytes)>;

struct CommitOptions {
  std::size_t chunk_size = 64 * 1024;
  CommitProbe probe;
};

/// Two-stage commit: write `<final>.tmp`, fsync it, rename it over `final_path`,
/// then fsync the directory. On failure `final_path` is left untouched and a
/// std::system_error is thrown.
void commit_checkpoint(const std::string& document, const std::filesystem::path& final_path,
                       const CommitOptions& options = {});

/// Background writer that persists registry snapshots on change.
///
/// Producers enqueue snapshots with strictly increasing versions. The writer
/// commits only the newest pending snapshot, so bursts coalesce, and it never
/// commits an older version after a newer one. Failed commits are retried with
/// backoff; while the disk is failing the pending buffer is bounded and the
/// oldest entries are discarded.
class CheckpointWriter {
 public:
  struct Options {
    std::filesystem::path path;
    std::size_t max_pending = 64;
    std::chrono::milliseconds retry_initial{20};
    std::chrono::milliseconds retry_max{1000};
    CommitOptions commit;
  };

  explicit CheckpointWriter(Options options);
  ~CheckpointWriter();

  CheckpointWriter(const CheckpointWriter&) = delete;
  CheckpointWriter& operator=(const CheckpointWriter&) = delete;

  void enqueue(MasterState snapshot);

  /// Blocks until a snapshot with version >= `version` is durable.
  bool wait_for(std::uint64_t version, std::chrono::milliseconds timeout);
  /// Blocks until every enqueued snapshot has been committed or superseded.
  bool wait_idle(std::chrono::milliseconds timeout);

  std::optional<std::uint64_t> committed_version() const;
  std::size_t commit_count() const;
  std::size_t failure_count() const;

 private:
  void run();

  Options options_;
  mutable std::mutex mutex_;
  std::condition_variable work_cv_;
  std::condition_variable done_cv_;
  std::deque<MasterState> pending_;
  std::optional<std::uint64_t> last_enqueued_;
  std::optional<std::uint64_t> committed_;
  bool in_flight_ = false;
  bool stopping_ = false;
  std::size_t commits_ = 0;
  std::size_t failures_ = 0;
  std::thread thread_;
};

}  // namespace rescue
