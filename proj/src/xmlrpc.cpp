#include "rescue/xmlrpc.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <memory>

namespace rescue::xmlrpc {
namespace {

// --- writing ---------------------------------------------------------------

void append_escaped(std::string& out, std::string_view text) {
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '\r': out += "&#13;"; break;
      default: out += c;
    }
  }
}

std::string format_double(double v) {
  // XML-RPC has no representation for non-finite doubles.
  if (!std::isfinite(v)) throw std::invalid_argument("XML-RPC cannot encode a non-finite double");
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed);
  if (ec != std::errc{}) {
    auto [end2, ec2] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end2);
  }
  std::string text(buf, end);
  if (text.find('.') == std::string::npos) text += ".0";
  return text;
}

void write_value(std::string& out, const Value& value) {
  out += "<value>";
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Nil>) {
          out += "<nil/>";
        } else if constexpr (std::is_same_v<T, bool>) {
          out += v ? "<boolean>1</boolean>" : "<boolean>0</boolean>";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          const bool fits = v >= std::numeric_limits<std::int32_t>::min() && v <= std::numeric_limits<std::int32_t>::max();
          out += fits ? "<i4>" : "<i8>";
          out += std::to_string(v);
          out += fits ? "</i4>" : "</i8>";
        } else if constexpr (std::is_same_v<T, double>) {
          out += "<double>" + format_double(v) + "</double>";
        } else if constexpr (std::is_same_v<T, std::string>) {
          out += "<string>";
          append_escaped(out, v);
          out += "</string>";
        } else if constexpr (std::is_same_v<T, Array>) {
          out += "<array><data>";
          for (const auto& item : v) write_value(out, item);
          out += "</data></array>";
        } else {
          out += "<struct>";
          for (const auto& [name, member] : v) {
            out += "<member><name>";
            append_escaped(out, name);
            out += "</name>";
            write_value(out, member);
            out += "</member>";
          }
          out += "</struct>";
        }
      },
      value.data());
  out += "</value>";
}

constexpr std::string_view kProlog = "<?xml version=\"1.0\"?>\n";

// --- reading ---------------------------------------------------------------

struct Element {
  std::string name;
  std::string text;
  std::vector<std::unique_ptr<Element>> children;

  const Element* child(std::string_view tag) const {
    for (const auto& c : children) {
      if (c->name == tag) return c.get();
    }
    return nullptr;
  }
  const Element& require(std::string_view tag) const {
    if (const auto* c = child(tag)) return *c;
    throw ParseError("<" + name + "> is missing <" + std::string(tag) + ">");
  }
};

class XmlReader {
 public:
  explicit XmlReader(std::string_view text) : text_(text) {}

  std::unique_ptr<Element> document() {
    skip_misc();
    auto root = element();
    skip_misc();
    if (pos_ != text_.size()) throw ParseError("trailing content after root element");
    return root;
  }

 private:
  bool starts_with(std::string_view s) const { return text_.substr(pos_).starts_with(s); }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' || text_[pos_] == '\r')) {
      ++pos_;
    }
  }

  void skip_past(std::string_view terminator) {
    auto end = text_.find(terminator, pos_);
    if (end == std::string_view::npos) throw ParseError("unterminated markup");
    pos_ = end + terminator.size();
  }

  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts_with("<?")) {
        skip_past("?>");
      } else if (starts_with("<!--")) {
        skip_past("-->");
      } else if (starts_with("<!DOCTYPE")) {
        skip_past(">");
      } else {
        return;
      }
    }
  }

  std::string name_token() {
    const auto start = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '>' || c == '/') break;
      ++pos_;
    }
    if (start == pos_) throw ParseError("expected an element name");
    return std::string(text_.substr(start, pos_ - start));
  }

  void decode_entity(std::string& out) {
    const auto end = text_.find(';', pos_);
    if (end == std::string_view::npos || end - pos_ > 12) throw ParseError("malformed entity");
    const auto entity = text_.substr(pos_ + 1, end - pos_ - 1);
    pos_ = end + 1;
    if (entity == "lt") out += '<';
    else if (entity == "gt") out += '>';
    else if (entity == "amp") out += '&';
    else if (entity == "quot") out += '"';
    else if (entity == "apos") out += '\'';
    else if (entity.starts_with("#")) {
      unsigned code = 0;
      const bool hex = entity.size() > 1 && (entity[1] == 'x' || entity[1] == 'X');
      const auto digits = entity.substr(hex ? 2 : 1);
      auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), code, hex ? 16 : 10);
      if (ec != std::errc{} || p != digits.data() + digits.size() || code > 0x10FFFF) {
        throw ParseError("malformed character reference");
      }
      append_utf8(out, code);
    } else {
      throw ParseError("unknown entity &" + std::string(entity) + ";");
    }
  }

  static void append_utf8(std::string& out, unsigned cp) {
    if (cp < 0x80) {
      out += static_cast<char>(cp);
    } else if (cp < 0x800) {
      out += static_cast<char>(0xC0 | (cp >> 6));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      out += static_cast<char>(0xE0 | (cp >> 12));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      out += static_cast<char>(0xF0 | (cp >> 18));
      out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    }
  }

  std::unique_ptr<Element> element() {
    if (!starts_with("<")) throw ParseError("expected '<'");
    ++pos_;
    auto el = std::make_unique<Element>();
    el->name = name_token();
    // Attributes are irrelevant to XML-RPC; skip them.
    while (pos_ < text_.size() && text_[pos_] != '>' && !starts_with("/>")) {
      if (text_[pos_] == '"' || text_[pos_] == '\'') {
        const char quote = text_[pos_];
        const auto end = text_.find(quote, pos_ + 1);
        if (end == std::string_view::npos) throw ParseError("unterminated attribute");
        pos_ = end + 1;
      } else {
        ++pos_;
      }
    }
    if (starts_with("/>")) {
      pos_ += 2;
      return el;
    }
    if (pos_ >= text_.size()) throw ParseError("unterminated start tag <" + el->name + ">");
    ++pos_;

    for (;;) {
      if (pos_ >= text_.size()) throw ParseError("unterminated element <" + el->name + ">");
      if (starts_with("</")) {
        pos_ += 2;
        const auto closing = name_token();
        if (closing != el->name) throw ParseError("mismatched </" + closing + "> for <" + el->name + ">");
        skip_ws();
        if (pos_ >= text_.size() || text_[pos_] != '>') throw ParseError("malformed end tag");
        ++pos_;
        return el;
      }
      if (starts_with("<!--")) {
        skip_past("-->");
      } else if (starts_with("<![CDATA[")) {
        const auto start = pos_ + 9;
        skip_past("]]>");
        el->text.append(text_.substr(start, pos_ - 3 - start));
      } else if (text_[pos_] == '<') {
        el->children.push_back(element());
      } else if (text_[pos_] == '&') {
        decode_entity(el->text);
      } else {
        el->text += text_[pos_++];
      }
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

Value read_value(const Element& el) {
  if (el.name != "value") throw ParseError("expected <value>, got <" + el.name + ">");
  if (el.children.empty()) return Value(el.text);  // untyped value defaults to string
  const Element& typed = *el.children.front();
  const std::string& tag = typed.name;
  if (tag == "string") return Value(typed.text);
  if (tag == "i4" || tag == "int" || tag == "i8") {
    const auto digits = trim(typed.text);
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (ec != std::errc{} || p != digits.data() + digits.size() || digits.empty()) {
      throw ParseError("malformed integer '" + std::string(digits) + "'");
    }
    if (tag != "i8" && (v < std::numeric_limits<std::int32_t>::min() || v > std::numeric_limits<std::int32_t>::max())) {
      throw ParseError("integer out of i4 range");
    }
    return Value(v);
  }
  if (tag == "boolean") {
    const auto t = trim(typed.text);
    if (t == "1") return Value(true);
    if (t == "0") return Value(false);
    throw ParseError("malformed boolean '" + std::string(t) + "'");
  }
  if (tag == "double") {
    const auto t = trim(typed.text);
    double v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size() || t.empty()) throw ParseError("malformed double");
    return Value(v);
  }
  if (tag == "nil") return Value(Nil{});
  if (tag == "array") {
    Array out;
    for (const auto& item : typed.require("data").children) out.push_back(read_value(*item));
    return Value(std::move(out));
  }
  if (tag == "struct") {
    Struct out;
    for (const auto& member : typed.children) {
      if (member->name != "member") throw ParseError("expected <member> in <struct>");
      out[member->require("name").text] = read_value(member->require("value"));
    }
    return Value(std::move(out));
  }
  throw ParseError("unsupported XML-RPC type <" + tag + ">");
}

std::unique_ptr<Element> parse_document(std::string_view xml) { return XmlReader(xml).document(); }

}  // namespace

std::string Value::type_name() const {
  static constexpr const char* kNames[] = {"nil", "boolean", "int", "double", "string", "array", "struct"};
  return kNames[data_.index()];
}

std::string encode_value(const Value& value) {
  std::string out;
  write_value(out, value);
  return out;
}

std::string encode_call(std::string_view method, const Array& params) {
  std::string out(kProlog);
  out += "<methodCall><methodName>";
  append_escaped(out, method);
  out += "</methodName><params>";
  for (const auto& p : params) {
    out += "<param>";
    write_value(out, p);
    out += "</param>";
  }
  out += "</params></methodCall>\n";
  return out;
}

std::string encode_response(const Value& value) {
  std::string out(kProlog);
  out += "<methodResponse><params><param>";
  write_value(out, value);
  out += "</param></params></methodResponse>\n";
  return out;
}

std::string encode_fault(int code, std::string_view message) {
  Struct fault{{"faultCode", Value(code)}, {"faultString", Value(std::string(message))}};
  std::string out(kProlog);
  out += "<methodResponse><fault>";
  write_value(out, Value(std::move(fault)));
  out += "</fault></methodResponse>\n";
  return out;
}

MethodCall parse_call(std::string_view xml) {
  const auto root = parse_document(xml);
  if (root->name != "methodCall") throw ParseError("expected <methodCall>");
  MethodCall call;
  call.method = std::string(trim(root->require("methodName").text));
  if (call.method.empty()) throw ParseError("empty method name");
  if (const auto* params = root->child("params")) {
    for (const auto& param : params->children) {
      if (param->name != "param") throw ParseError("expected <param>");
      call.params.push_back(read_value(param->require("value")));
    }
  }
  return call;
}

Value parse_response(std::string_view xml) {
  const auto root = parse_document(xml);
  if (root->name != "methodResponse") throw ParseError("expected <methodResponse>");
  if (const auto* fault = root->child("fault")) {
    const Value v = read_value(fault->require("value"));
    int code = 0;
    std::string message;
    if (v.is<Struct>()) {
      const auto& s = v.as<Struct>();
      if (auto it = s.find("faultCode"); it != s.end() && it->second.is<std::int64_t>()) {
        code = static_cast<int>(it->second.as<std::int64_t>());
      }
      if (auto it = s.find("faultString"); it != s.end() && it->second.is<std::string>()) {
        message = it->second.as<std::string>();
      }
    }
    throw Fault(code, message);
  }
  const auto& params = root->require("params");
  const Element* param = params.child("param");
  if (param == nullptr) throw ParseError("response carries no <param>");
  return read_value(param->require("value"));
}

}  // namespace rescue::xmlrpc
