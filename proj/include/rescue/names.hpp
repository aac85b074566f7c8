#pragma once

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rescue {

/// Thrown when a caller hands the registry a malformed name, URI, or value.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Slash-separated graph resource name ("/talker", "/ns/chatter").
///
/// Must start with '/', contain no whitespace and no empty segments. The root
/// name "/" is not a valid node, topic, or service name.
class GraphName {
 public:
  GraphName() = default;
  explicit GraphName(std::string value);

  static bool is_valid(std::string_view value) noexcept;

  const std::string& str() const noexcept { return value_; }
  bool empty() const noexcept { return value_.empty(); }

  auto operator<=>(const GraphName&) const = default;

 private:
  std::string value_;
};

/// Absolute node endpoint URI with explicit host and port, e.g.
/// "http://127.0.0.1:11311/". Services conventionally advertise "rosrpc://",
/// which is accepted as well.
class EndpointUri {
 public:
  EndpointUri() = default;
  explicit EndpointUri(std::string value);

  static bool is_valid(std::string_view value) noexcept;

  const std::string& str() const noexcept { return value_; }
  const std::string& scheme() const noexcept { return scheme_; }
  const std::string& host() const noexcept { return host_; }
  std::uint16_t port() const noexcept { return port_; }

  bool operator==(const EndpointUri& other) const noexcept { return value_ == other.value_; }
  auto operator<=>(const EndpointUri& other) const noexcept { return value_ <=> other.value_; }

 private:
  std::string value_;
  std::string scheme_;
  std::string host_;
  std::uint16_t port_ = 0;
};

}  // namespace rescue
