#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rescue/names.hpp"

namespace rescue {

struct ParamValue;
using ParamMap = std::map<std::string, ParamValue>;

/// A parameter-server value: a scalar leaf or a nested map of values.
struct ParamValue {
  using Storage = std::variant<bool, std::int64_t, double, std::string, ParamMap>;
  Storage data;

  ParamValue() : data(ParamMap{}) {}
  ParamValue(bool v) : data(v) {}
  ParamValue(int v) : data(std::int64_t{v}) {}
  ParamValue(std::int64_t v) : data(v) {}
  ParamValue(double v) : data(v) {}
  ParamValue(const char* v) : data(std::string(v)) {}
  ParamValue(std::string v) : data(std::move(v)) {}
  ParamValue(ParamMap v) : data(std::move(v)) {}

  bool is_map() const noexcept { return std::holds_alternative<ParamMap>(data); }
  const ParamMap& as_map() const { return std::get<ParamMap>(data); }
  ParamMap& as_map() { return std::get<ParamMap>(data); }

  friend bool operator==(const ParamValue& a, const ParamValue& b) { return a.data == b.data; }
};

/// Hierarchical key/value store addressed by slash paths. A path is either a
/// scalar leaf or an interior map, never both. "/" addresses the whole tree.
class ParamTree {
 public:
  static bool is_valid_key(std::string_view key) noexcept;

  /// Setting a map replaces the whole subtree; scalars along the path are
  /// replaced by maps.
  void set(std::string_view key, ParamValue value);
  std::optional<ParamValue> get(std::string_view key) const;
  bool has(std::string_view key) const { return get(key).has_value(); }
  /// Removes the key and any interior maps left empty by the removal.
  bool erase(std::string_view key);
  /// Fully qualified names of all scalar leaves, sorted.
  std::vector<std::string> names() const;

  const ParamMap& root() const noexcept { return root_; }
  ParamMap& root() noexcept { return root_; }
  std::size_t leaf_count() const { return names().size(); }

  friend bool operator==(const ParamTree& a, const ParamTree& b) { return a.root_ == b.root_; }

 private:
  ParamMap root_;
};

std::vector<std::string> split_param_key(std::string_view key);

}  // namespace rescue
