#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace rescue::xmlrpc {

class Value;
using Array = std::vector<Value>;
using Struct = std::map<std::string, Value>;
struct Nil {
  bool operator==(const Nil&) const = default;
};

/// An XML-RPC value: nil, boolean, integer (i4/i8), double, string, array or struct.
class Value {
 public:
  using Storage = std::variant<Nil, bool, std::int64_t, double, std::string, Array, Struct>;

  Value() = default;
  Value(Nil) {}
  Value(bool v) : data_(v) {}
  Value(int v) : data_(std::int64_t{v}) {}
  Value(std::int64_t v) : data_(v) {}
  Value(double v) : data_(v) {}
  Value(const char* v) : data_(std::string(v)) {}
  Value(std::string v) : data_(std::move(v)) {}
  Value(Array v) : data_(std::move(v)) {}
  Value(Struct v) : data_(std::move(v)) {}

  const Storage& data() const noexcept { return data_; }

  template <typename T>
  bool is() const noexcept {
    return std::holds_alternative<T>(data_);
  }
  template <typename T>
  const T& as() const {
    if (const auto* p = std::get_if<T>(&data_)) return *p;
    throw std::invalid_argument("XML-RPC value has type " + type_name() + ", expected another type");
  }

  std::string type_name() const;

  friend bool operator==(const Value& a, const Value& b) { return a.data_ == b.data_; }

 private:
  Storage data_;
};

/// Malformed XML or XML-RPC structure.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A <fault> response from the remote side.
class Fault : public std::runtime_error {
 public:
  Fault(int code, const std::string& message) : std::runtime_error(message), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

struct MethodCall {
  std::string method;
  Array params;
};

std::string encode_value(const Value& value);
std::string encode_call(std::string_view method, const Array& params);
std::string encode_response(const Value& value);
std::string encode_fault(int code, std::string_view message);

MethodCall parse_call(std::string_view xml);
/// Returns the single response parameter; throws Fault for fault responses.
Value parse_response(std::string_view xml);

}  // namespace rescue::xmlrpc
