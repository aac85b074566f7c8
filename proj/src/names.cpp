#include "rescue/names.hpp"

#include <cctype>
#include <charconv>
#include <optional>

namespace rescue {
namespace {

struct ParsedUri {
  std::string scheme;
  std::string host;
  std::uint16_t port = 0;
};

std::optional<ParsedUri> parse_uri(std::string_view value) {
  const auto sep = value.find("://");
  if (sep == std::string_view::npos) return std::nullopt;
  ParsedUri out;
  out.scheme = std::string(value.substr(0, sep));
  if (out.scheme != "http" && out.scheme != "rosrpc") return std::nullopt;

  auto rest = value.substr(sep + 3);
  const auto slash = rest.find('/');
  const auto authority = rest.substr(0, slash);
  const auto path = slash == std::string_view::npos ? std::string_view{} : rest.substr(slash);
  for (char c : path) {
    if (std::isspace(static_cast<unsigned char>(c))) return std::nullopt;
  }

  const auto colon = authority.rfind(':');
  if (colon == std::string_view::npos || colon == 0) return std::nullopt;
  const auto host = authority.substr(0, colon);
  const auto port = authority.substr(colon + 1);
  for (char c : host) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == '/' || c == '@') return std::nullopt;
  }
  if (port.empty()) return std::nullopt;
  unsigned value_port = 0;
  auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value_port);
  if (ec != std::errc{} || ptr != port.data() + port.size()) return std::nullopt;
  if (value_port == 0 || value_port > 65535) return std::nullopt;

  out.host = std::string(host);
  out.port = static_cast<std::uint16_t>(value_port);
  return out;
}

}  // namespace

GraphName::GraphName(std::string value) : value_(std::move(value)) {
  if (!is_valid(value_)) throw ValidationError("invalid graph name '" + value_ + "'");
}

bool GraphName::is_valid(std::string_view value) noexcept {
  if (value.size() < 2 || value.front() != '/' || value.back() == '/') return false;
  char prev = '\0';
  for (char c : value) {
    if (std::isspace(static_cast<unsigned char>(c)) || std::iscntrl(static_cast<unsigned char>(c))) return false;
    if (c == '/' && prev == '/') return false;
    prev = c;
  }
  return true;
}

EndpointUri::EndpointUri(std::string value) : value_(std::move(value)) {
  auto parsed = parse_uri(value_);
  if (!parsed) throw ValidationError("invalid endpoint URI '" + value_ + "'");
  scheme_ = std::move(parsed->scheme);
  host_ = std::move(parsed->host);
  port_ = parsed->port;
}

bool EndpointUri::is_valid(std::string_view value) noexcept { return parse_uri(value).has_value(); }

}  // namespace rescue
