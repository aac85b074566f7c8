#include "rescue/param_tree.hpp"

#include "rescue/names.hpp"

#include <algorithm>

namespace rescue {
namespace {

void collect_names(const ParamMap& map, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [segment, value] : map) {
    std::string name = prefix + "/" + segment;
    if (value.is_map()) {
      collect_names(value.as_map(), name, out);
    } else {
      out.push_back(std::move(name));
    }
  }
}

bool erase_path(ParamMap& map, const std::vector<std::string>& segments, std::size_t depth) {
  auto it = map.find(segments[depth]);
  if (it == map.end()) return false;
  if (depth + 1 == segments.size()) {
    map.erase(it);
    return true;
  }
  if (!it->second.is_map()) return false;
  if (!erase_path(it->second.as_map(), segments, depth + 1)) return false;
  if (it->second.as_map().empty()) map.erase(it);
  return true;
}

void validate_subtree(const ParamValue& value) {
  if (!value.is_map()) return;
  for (const auto& [segment, child] : value.as_map()) {
    if (!GraphName::is_valid("/" + segment)) throw ValidationError("invalid parameter segment '" + segment + "'");
    validate_subtree(child);
  }
}

}  // namespace

bool ParamTree::is_valid_key(std::string_view key) noexcept { return key == "/" || GraphName::is_valid(key); }

std::vector<std::string> split_param_key(std::string_view key) {
  if (!ParamTree::is_valid_key(key)) throw ValidationError("invalid parameter key '" + std::string(key) + "'");
  std::vector<std::string> segments;
  std::size_t start = 1;
  while (start < key.size()) {
    auto end = key.find('/', start);
    if (end == std::string_view::npos) end = key.size();
    segments.emplace_back(key.substr(start, end - start));
    start = end + 1;
  }
  return segments;
}

void ParamTree::set(std::string_view key, ParamValue value) {
  const auto segments = split_param_key(key);
  validate_subtree(value);
  if (segments.empty()) {
    if (!value.is_map()) throw ValidationError("the parameter root can only be set to a map");
    root_ = std::move(value.as_map());
    return;
  }
  ParamMap* node = &root_;
  for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
    auto& child = (*node)[segments[i]];
    if (!child.is_map()) child = ParamValue(ParamMap{});
    node = &child.as_map();
  }
  (*node)[segments.back()] = std::move(value);
}

std::optional<ParamValue> ParamTree::get(std::string_view key) const {
  const auto segments = split_param_key(key);
  if (segments.empty()) return ParamValue(root_);
  const ParamMap* node = &root_;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    auto it = node->find(segments[i]);
    if (it == node->end()) return std::nullopt;
    if (i + 1 == segments.size()) return it->second;
    if (!it->second.is_map()) return std::nullopt;
    node = &it->second.as_map();
  }
  return std::nullopt;
}

bool ParamTree::erase(std::string_view key) {
  const auto segments = split_param_key(key);
  if (segments.empty()) {
    const bool had = !root_.empty();
    root_.clear();
    return had;
  }
  return erase_path(root_, segments, 0);
}

std::vector<std::string> ParamTree::names() const {
  std::vector<std::string> out;
  collect_names(root_, "", out);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace rescue
