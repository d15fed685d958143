#pragma once

// Minimal XML support for the trace export schema: an escaping writer and a
// strict element/attribute parser. Text content, DTDs and namespaces are not
// part of the schema and are rejected.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "forumtrace/error.hpp"

namespace forumtrace::xml {

struct Node {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attributes;
  std::vector<Node> children;

  const std::string* find(std::string_view key) const {
    for (const auto& [k, v] : attributes) {
      if (k == key) return &v;
    }
    return nullptr;
  }

  const std::string& at(std::string_view key) const {
    if (const auto* v = find(key)) return *v;
    throw Error(ErrorCode::ParseError,
                "<" + name + "> missing attribute '" + std::string(key) + "'");
  }
};

inline std::string escape(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  for (char c : in) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      case '\n': out += "&#10;"; break;
      case '\r': out += "&#13;"; break;
      case '\t': out += "&#9;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Streaming writer with two-space indentation.
class Writer {
 public:
  Writer() { out_ = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"; }

  void open(std::string_view name, const std::vector<std::pair<std::string, std::string>>& attrs,
            bool self_close = false) {
    out_.append(depth_ * 2, ' ');
    out_ += '<';
    out_ += name;
    for (const auto& [k, v] : attrs) {
      out_ += ' ';
      out_ += k;
      out_ += "=\"";
      out_ += escape(v);
      out_ += '"';
    }
    if (self_close) {
      out_ += "/>\n";
      return;
    }
    out_ += ">\n";
    stack_.emplace_back(name);
    ++depth_;
  }

  void leaf(std::string_view name, const std::vector<std::pair<std::string, std::string>>& attrs) {
    open(name, attrs, true);
  }

  void close() {
    --depth_;
    out_.append(depth_ * 2, ' ');
    out_ += "</" + stack_.back() + ">\n";
    stack_.pop_back();
  }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
  std::vector<std::string> stack_;
  std::size_t depth_ = 0;
};

namespace detail {

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  Node parse_document() {
    skip_misc();
    if (starts_with("<?xml")) {
      auto end = s_.find("?>", pos_);
      if (end == std::string_view::npos) fail("unterminated XML declaration");
      pos_ = end + 2;
    }
    skip_misc();
    Node root = parse_element();
    skip_misc();
    if (pos_ != s_.size()) fail("trailing content after root element");
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw Error(ErrorCode::ParseError, "xml at byte " + std::to_string(pos_) + ": " + why);
  }

  bool starts_with(std::string_view p) const { return s_.substr(pos_, p.size()) == p; }

  static bool is_space(char c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t'; }
  static bool is_name_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '-' || c == '.' || c == ':';
  }

  void skip_space() {
    while (pos_ < s_.size() && is_space(s_[pos_])) ++pos_;
  }

  void skip_misc() {
    for (;;) {
      skip_space();
      if (starts_with("<!--")) {
        auto end = s_.find("-->", pos_ + 4);
        if (end == std::string_view::npos) fail("unterminated comment");
        pos_ = end + 3;
      } else {
        return;
      }
    }
  }

  void expect(char c) {
    if (pos_ >= s_.size() || s_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string parse_name() {
    auto start = pos_;
    while (pos_ < s_.size() && is_name_char(s_[pos_])) ++pos_;
    if (start == pos_) fail("expected a name");
    return std::string(s_.substr(start, pos_ - start));
  }

  static void append_utf8(std::string& out, std::uint32_t cp) {
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

  std::string decode(std::string_view raw) {
    std::string out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] != '&') {
        out += raw[i];
        continue;
      }
      auto semi = raw.find(';', i);
      if (semi == std::string_view::npos) fail("unterminated entity");
      auto ent = raw.substr(i + 1, semi - i - 1);
      if (ent == "amp") out += '&';
      else if (ent == "lt") out += '<';
      else if (ent == "gt") out += '>';
      else if (ent == "quot") out += '"';
      else if (ent == "apos") out += '\'';
      else if (!ent.empty() && ent[0] == '#') {
        std::uint32_t cp = 0;
        bool hex = ent.size() > 1 && (ent[1] == 'x' || ent[1] == 'X');
        auto digits = ent.substr(hex ? 2 : 1);
        if (digits.empty() || digits.size() > 8) fail("bad character reference");
        for (char c : digits) {
          int d;
          if (c >= '0' && c <= '9') d = c - '0';
          else if (hex && c >= 'a' && c <= 'f') d = c - 'a' + 10;
          else if (hex && c >= 'A' && c <= 'F') d = c - 'A' + 10;
          else fail("bad character reference");
          cp = cp * (hex ? 16 : 10) + static_cast<std::uint32_t>(d);
        }
        if (cp > 0x10FFFF) fail("character reference out of range");
        append_utf8(out, cp);
      } else {
        fail("unknown entity '&" + std::string(ent) + ";'");
      }
      i = semi;
    }
    return out;
  }

  Node parse_element() {
    expect('<');
    Node node;
    node.name = parse_name();
    for (;;) {
      skip_space();
      if (pos_ >= s_.size()) fail("unterminated start tag <" + node.name + ">");
      if (starts_with("/>")) {
        pos_ += 2;
        return node;
      }
      if (s_[pos_] == '>') {
        ++pos_;
        break;
      }
      auto key = parse_name();
      skip_space();
      expect('=');
      skip_space();
      if (pos_ >= s_.size() || (s_[pos_] != '"' && s_[pos_] != '\'')) fail("expected quote");
      char quote = s_[pos_++];
      auto end = s_.find(quote, pos_);
      if (end == std::string_view::npos) fail("unterminated attribute value");
      auto raw = s_.substr(pos_, end - pos_);
      if (raw.find('<') != std::string_view::npos) fail("'<' in attribute value");
      node.attributes.emplace_back(std::move(key), decode(raw));
      pos_ = end + 1;
    }
    for (;;) {
      skip_misc();
      if (pos_ >= s_.size()) fail("unterminated element <" + node.name + ">");
      if (starts_with("</")) {
        pos_ += 2;
        auto closing = parse_name();
        if (closing != node.name) fail("mismatched </" + closing + "> for <" + node.name + ">");
        skip_space();
        expect('>');
        return node;
      }
      if (s_[pos_] != '<') fail("unexpected text content in <" + node.name + ">");
      node.children.push_back(parse_element());
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Node parse(std::string_view text) { return detail::Parser(text).parse_document(); }

}  // namespace forumtrace::xml
