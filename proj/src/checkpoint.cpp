#include "rescue/checkpoint.hpp"

#include <fcntl.h>
#include <spdlog/spdlog.h>
#include <sys/stat.h>
#include <unistd.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

namespace rescue {
namespace {

constexpr std::string_view kEndMarker = "...";

std::string format_double(double value) {
  if (std::isnan(value)) return ".nan";
  if (std::isinf(value)) return value > 0 ? ".inf" : "-.inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  std::string text(buf, end);
  if (text.find_first_of(".e") == std::string::npos) text += ".0";
  return text;
}

void emit_params(YAML::Emitter& out, const ParamMap& map) {
  out << YAML::BeginMap;
  for (const auto& [key, value] : map) {
    out << YAML::Key << key << YAML::Value;
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, bool>) {
            out << (v ? "true" : "false");
          } else if constexpr (std::is_same_v<T, std::int64_t>) {
            out << std::to_string(v);
          } else if constexpr (std::is_same_v<T, double>) {
            out << format_double(v);
          } else if constexpr (std::is_same_v<T, std::string>) {
            out << YAML::DoubleQuoted << v;
          } else {
            emit_params(out, v);
          }
        },
        value.data);
  }
  out << YAML::EndMap;
}

void emit_names(YAML::Emitter& out, const std::set<GraphName>& names) {
  out << YAML::BeginSeq;
  for (const auto& name : names) out << name.str();
  out << YAML::EndSeq;
}

[[noreturn]] void fail(const std::string& what) { throw CheckpointLoadError("checkpoint: " + what); }

const YAML::Node require_map(const YAML::Node& parent, const char* key, const std::string& where) {
  const YAML::Node node = parent[key];
  if (!node) fail(where + " is missing '" + key + "'");
  if (!node.IsMap()) fail(where + "." + key + " must be a map");
  return node;
}

std::string require_scalar(const YAML::Node& parent, const char* key, const std::string& where) {
  const YAML::Node node = parent[key];
  if (!node) fail(where + " is missing '" + key + "'");
  if (!node.IsScalar()) fail(where + "." + key + " must be a scalar");
  return node.Scalar();
}

GraphName to_name(const std::string& text, const std::string& where) {
  if (!GraphName::is_valid(text)) fail(where + ": invalid graph name '" + text + "'");
  return GraphName(text);
}

EndpointUri to_uri(const std::string& text, const std::string& where) {
  if (!EndpointUri::is_valid(text)) fail(where + ": invalid endpoint URI '" + text + "'");
  return EndpointUri(text);
}

std::set<GraphName> read_names(const YAML::Node& parent, const char* key, const std::string& where) {
  const YAML::Node node = parent[key];
  if (!node) fail(where + " is missing '" + key + "'");
  if (!node.IsSequence()) fail(where + "." + key + " must be a list");
  std::set<GraphName> out;
  for (const auto& item : node) {
    if (!item.IsScalar()) fail(where + "." + key + " entries must be names");
    out.insert(to_name(item.Scalar(), where + "." + key));
  }
  return out;
}

ParamValue read_param_scalar(const YAML::Node& node) {
  const std::string& raw = node.Scalar();
  if (node.Tag() == "!") return ParamValue(raw);
  if (raw == "true") return ParamValue(true);
  if (raw == "false") return ParamValue(false);
  const char* first = raw.data();
  const char* last = raw.data() + raw.size();
  std::int64_t as_int = 0;
  if (auto [p, ec] = std::from_chars(first, last, as_int); ec == std::errc{} && p == last) return ParamValue(as_int);
  if (raw == ".nan") return ParamValue(std::numeric_limits<double>::quiet_NaN());
  if (raw == ".inf") return ParamValue(std::numeric_limits<double>::infinity());
  if (raw == "-.inf") return ParamValue(-std::numeric_limits<double>::infinity());
  double as_double = 0;
  if (auto [p, ec] = std::from_chars(first, last, as_double); ec == std::errc{} && p == last) {
    return ParamValue(as_double);
  }
  return ParamValue(raw);
}

ParamMap read_params(const YAML::Node& node, const std::string& where) {
  ParamMap out;
  for (const auto& entry : node) {
    const std::string key = entry.first.Scalar();
    if (!GraphName::is_valid("/" + key)) fail(where + ": invalid parameter segment '" + key + "'");
    const YAML::Node& value = entry.second;
    if (value.IsMap()) {
      out.emplace(key, read_params(value, where + "/" + key));
    } else if (value.IsScalar()) {
      out.emplace(key, read_param_scalar(value));
    } else {
      fail(where + "/" + key + ": parameter values must be scalars or maps");
    }
  }
  return out;
}

bool has_end_marker(const std::string& text) {
  auto end = text.find_last_not_of(" \t\r\n");
  if (end == std::string::npos) return false;
  auto line_start = text.rfind('\n', end);
  line_start = line_start == std::string::npos ? 0 : line_start + 1;
  return std::string_view(text).substr(line_start, end + 1 - line_start) == kEndMarker;
}

[[noreturn]] void throw_errno(const std::string& what) {
  throw std::system_error(errno, std::generic_category(), what);
}

class FileDescriptor {
 public:
  explicit FileDescriptor(int fd) : fd_(fd) {}
  ~FileDescriptor() {
    if (fd_ >= 0) ::close(fd_);
  }
  FileDescriptor(const FileDescriptor&) = delete;
  FileDescriptor& operator=(const FileDescriptor&) = delete;

  int get() const { return fd_; }
  int release() { return std::exchange(fd_, -1); }

 private:
  int fd_;
};

void write_all(int fd, std::string_view data, const CommitOptions& options) {
  std::size_t written = 0;
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk_size);
  while (written < data.size()) {
    const std::size_t want = std::min(chunk, data.size() - written);
    const ssize_t n = ::write(fd, data.data() + written, want);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("write checkpoint");
    }
    written += static_cast<std::size_t>(n);
    if (options.probe) options.probe(CommitStage::kWriting, written, data.size());
  }
}

}  // namespace

std::string serialize_checkpoint(const MasterState& state) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "schema_version" << YAML::Value << kCheckpointSchemaVersion;

  out << YAML::Key << "nodes" << YAML::Value << YAML::BeginMap;
  for (const auto& [name, node] : state.nodes) out << YAML::Key << name.str() << YAML::Value << node.api_uri.str();
  out << YAML::EndMap;

  out << YAML::Key << "topics" << YAML::Value << YAML::BeginMap;
  for (const auto& [name, topic] : state.topics) {
    out << YAML::Key << name.str() << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "type" << YAML::Value << topic.datatype;
    out << YAML::Key << "publishers" << YAML::Value;
    emit_names(out, topic.publishers);
    out << YAML::Key << "subscribers" << YAML::Value;
    emit_names(out, topic.subscribers);
    out << YAML::EndMap;
  }
  out << YAML::EndMap;

  out << YAML::Key << "services" << YAML::Value << YAML::BeginMap;
  for (const auto& [name, service] : state.services) {
    out << YAML::Key << name.str() << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "node" << YAML::Value << service.provider.str();
    out << YAML::Key << "service_uri" << YAML::Value << service.service_uri.str();
    out << YAML::Key << "node_uri" << YAML::Value << service.provider_api_uri.str();
    out << YAML::EndMap;
  }
  out << YAML::EndMap;

  out << YAML::Key << "params" << YAML::Value;
  emit_params(out, state.params.root());
  out << YAML::EndMap;

  std::string text = out.c_str();
  text += "\n";
  text += kEndMarker;
  text += "\n";
  return text;
}

MasterState deserialize_checkpoint(const std::string& text) {
  if (!has_end_marker(text)) fail("document is truncated (missing end marker)");
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    fail(std::string("malformed YAML: ") + e.what());
  }
  if (!root.IsMap()) fail("document root must be a map");

  const YAML::Node version = root["schema_version"];
  if (!version || !version.IsScalar()) fail("missing schema_version");
  if (version.Scalar() != std::to_string(kCheckpointSchemaVersion)) {
    fail("unsupported schema_version " + version.Scalar());
  }
  for (const auto& entry : root) {
    const std::string key = entry.first.Scalar();
    if (key != "schema_version" && key != "nodes" && key != "topics" && key != "services" && key != "params") {
      fail("unknown top-level field '" + key + "'");
    }
  }

  MasterState state;
  try {
    for (const auto& entry : require_map(root, "nodes", "document")) {
      const auto name = to_name(entry.first.Scalar(), "nodes");
      if (!entry.second.IsScalar()) fail("nodes." + name.str() + " must be a URI");
      state.nodes.emplace(name, NodeRecord{name, to_uri(entry.second.Scalar(), "nodes." + name.str())});
    }
    for (const auto& entry : require_map(root, "topics", "document")) {
      const auto name = to_name(entry.first.Scalar(), "topics");
      const std::string where = "topics." + name.str();
      if (!entry.second.IsMap()) fail(where + " must be a map");
      TopicRecord topic;
      topic.name = name;
      topic.datatype = require_scalar(entry.second, "type", where);
      topic.publishers = read_names(entry.second, "publishers", where);
      topic.subscribers = read_names(entry.second, "subscribers", where);
      state.topics.emplace(name, std::move(topic));
    }
    for (const auto& entry : require_map(root, "services", "document")) {
      const auto name = to_name(entry.first.Scalar(), "services");
      const std::string where = "services." + name.str();
      if (!entry.second.IsMap()) fail(where + " must be a map");
      ServiceRecord service;
      service.name = name;
      service.provider = to_name(require_scalar(entry.second, "node", where), where + ".node");
      service.service_uri = to_uri(require_scalar(entry.second, "service_uri", where), where + ".service_uri");
      service.provider_api_uri = to_uri(require_scalar(entry.second, "node_uri", where), where + ".node_uri");
      state.services.emplace(name, std::move(service));
    }
    state.params.root() = read_params(require_map(root, "params", "document"), "params");
  } catch (const YAML::Exception& e) {
    fail(std::string("malformed document: ") + e.what());
  }

  if (auto violation = find_invariant_violation(state)) fail("invariant violated: " + *violation);
  return state;
}

MasterState load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointLoadError("checkpoint: cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return deserialize_checkpoint(buffer.str());
  } catch (const CheckpointLoadError& e) {
    throw CheckpointLoadError(std::string(e.what()) + " [" + path.string() + "]");
  }
}

std::filesystem::path default_checkpoint_path() {
  const char* home = std::getenv("HOME");
  std::filesystem::path base = home != nullptr && *home != '\0' ? home : ".";
  return base / ".ros" / "log" / "latest-chkpt.yaml";
}

std::filesystem::path temp_checkpoint_path(const std::filesystem::path& final_path) {
  auto tmp = final_path;
  tmp += ".tmp";
  return tmp;
}

void commit_checkpoint(const std::string& document, const std::filesystem::path& final_path,
                       const CommitOptions& options) {
  const auto tmp = temp_checkpoint_path(final_path);
  try {
    FileDescriptor fd(::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
    if (fd.get() < 0) throw_errno("open " + tmp.string());
    write_all(fd.get(), document, options);
    if (options.probe) options.probe(CommitStage::kWritten, document.size(), document.size());
    if (::fchmod(fd.get(), static_cast<mode_t>(kCheckpointPerms)) != 0) throw_errno("chmod " + tmp.string());
    if (::fsync(fd.get()) != 0) throw_errno("fsync " + tmp.string());
    if (::close(fd.release()) != 0) throw_errno("close " + tmp.string());
    if (options.probe) options.probe(CommitStage::kSynced, document.size(), document.size());
    if (::rename(tmp.c_str(), final_path.c_str()) != 0) throw_errno("rename " + tmp.string());
  } catch (...) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw;
  }

  auto dir = final_path.parent_path();
  if (dir.empty()) dir = ".";
  FileDescriptor dir_fd(::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC));
  if (dir_fd.get() >= 0) ::fsync(dir_fd.get());
  if (options.probe) options.probe(CommitStage::kRenamed, document.size(), document.size());
}

// ---------------------------------------------------------------------------

CheckpointWriter::CheckpointWriter(Options options) : options_(std::move(options)) {
  thread_ = std::thread([this] { run(); });
}

CheckpointWriter::~CheckpointWriter() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  work_cv_.notify_all();
  thread_.join();
}

void CheckpointWriter::enqueue(MasterState snapshot) {
  {
    std::lock_guard lock(mutex_);
    if (last_enqueued_ && snapshot.version <= *last_enqueued_) {
      throw std::logic_error("checkpoint versions must be enqueued in increasing order");
    }
    last_enqueued_ = snapshot.version;
    pending_.push_back(std::move(snapshot));
    while (pending_.size() > std::max<std::size_t>(1, options_.max_pending)) pending_.pop_front();
  }
  work_cv_.notify_one();
}

bool CheckpointWriter::wait_for(std::uint64_t version, std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  return done_cv_.wait_for(lock, timeout, [&] { return committed_ && *committed_ >= version; });
}

bool CheckpointWriter::wait_idle(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  return done_cv_.wait_for(lock, timeout, [&] { return pending_.empty() && !in_flight_; });
}

std::optional<std::uint64_t> CheckpointWriter::committed_version() const {
  std::lock_guard lock(mutex_);
  return committed_;
}

std::size_t CheckpointWriter::commit_count() const {
  std::lock_guard lock(mutex_);
  return commits_;
}

std::size_t CheckpointWriter::failure_count() const {
  std::lock_guard lock(mutex_);
  return failures_;
}

void CheckpointWriter::run() {
  auto backoff = options_.retry_initial;
  std::unique_lock lock(mutex_);
  for (;;) {
    work_cv_.wait(lock, [&] { return stopping_ || !pending_.empty(); });
    if (pending_.empty()) break;

    MasterState newest = std::move(pending_.back());
    pending_.clear();
    in_flight_ = true;
    lock.unlock();

    bool ok = true;
    try {
      commit_checkpoint(serialize_checkpoint(newest), options_.path, options_.commit);
    } catch (const std::exception& e) {
      ok = false;
      spdlog::error("checkpoint commit of version {} failed: {}", newest.version, e.what());
    }

    lock.lock();
    in_flight_ = false;
    if (ok) {
      committed_ = newest.version;
      ++commits_;
      backoff = options_.retry_initial;
      done_cv_.notify_all();
      continue;
    }
    ++failures_;
    if (stopping_) {
      done_cv_.notify_all();
      break;
    }
    // Retry unless something newer arrived meanwhile.
    if (pending_.empty()) pending_.push_back(std::move(newest));
    work_cv_.wait_for(lock, backoff, [&] { return stopping_; });
    backoff = std::min(backoff * 2, options_.retry_max);
  }
  done_cv_.notify_all();
}

}  // namespace rescue
