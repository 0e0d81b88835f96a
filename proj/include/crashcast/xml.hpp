// Copyright 2026 The Crashcast Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CRASHCAST_XML_HPP_
#define CRASHCAST_XML_HPP_

// Small non-validating XML reader covering the subset used by road network
// files: prolog, comments, elements, attributes and the five predefined
// entities. Character data is ignored.

#include <cctype>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crashcast/error.hpp"

namespace crashcast::xml {

struct Element {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attributes;
  std::vector<Element> children;
  int line = 0;

  std::optional<std::string_view> attribute(std::string_view key) const {
    for (const auto& [k, v] : attributes)
      if (k == key) return std::string_view(v);
    return std::nullopt;
  }
};

namespace detail {

class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {}

  Element parse_document() {
    skip_misc();
    if (at_end()) fail("document has no root element");
    Element root = parse_element();
    skip_misc();
    if (!at_end()) fail("content after root element");
    return root;
  }

 private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return at_end() ? '\0' : text_[pos_]; }
  bool starts_with(std::string_view s) const { return text_.substr(pos_).starts_with(s); }

  void advance(std::size_t n = 1) {
    for (std::size_t i = 0; i < n && !at_end(); ++i) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorKind::kMalformed, "line " + std::to_string(line_) + ": " + msg);
  }

  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(peek()))) advance();
  }

  void skip_until(std::string_view terminator) {
    while (!at_end() && !starts_with(terminator)) advance();
    if (at_end()) fail("unterminated construct, expected '" + std::string(terminator) + "'");
    advance(terminator.size());
  }

  // prolog, comments, doctype and whitespace between elements
  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts_with("<?")) {
        skip_until("?>");
      } else if (starts_with("<!--")) {
        skip_until("-->");
      } else if (starts_with("<!")) {
        skip_until(">");
      } else {
        return;
      }
    }
  }

  static bool is_name_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' ||
           c == ':';
  }

  std::string parse_name() {
    const std::size_t start = pos_;
    while (!at_end() && is_name_char(peek())) advance();
    if (pos_ == start) fail("expected a name");
    return std::string(text_.substr(start, pos_ - start));
  }

  std::string decode(std::string_view raw) const {
    std::string out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] != '&') {
        out.push_back(raw[i]);
        continue;
      }
      const std::size_t semi = raw.find(';', i);
      if (semi == std::string_view::npos) fail("unterminated entity");
      const std::string_view ent = raw.substr(i + 1, semi - i - 1);
      if (ent == "amp") out.push_back('&');
      else if (ent == "lt") out.push_back('<');
      else if (ent == "gt") out.push_back('>');
      else if (ent == "quot") out.push_back('"');
      else if (ent == "apos") out.push_back('\'');
      else fail("unknown entity &" + std::string(ent) + ";");
      i = semi;
    }
    return out;
  }

  Element parse_element() {
    if (peek() != '<') fail("expected '<'");
    Element el;
    el.line = line_;
    advance();
    el.name = parse_name();
    for (;;) {
      skip_ws();
      if (starts_with("/>")) {
        advance(2);
        return el;
      }
      if (peek() == '>') {
        advance();
        break;
      }
      std::string key = parse_name();
      skip_ws();
      if (peek() != '=') fail("expected '=' after attribute " + key);
      advance();
      skip_ws();
      const char quote = peek();
      if (quote != '"' && quote != '\'') fail("attribute value must be quoted");
      advance();
      const std::size_t start = pos_;
      while (!at_end() && peek() != quote) advance();
      if (at_end()) fail("unterminated attribute value");
      std::string value = decode(text_.substr(start, pos_ - start));
      advance();
      if (el.attribute(key)) fail("duplicate attribute " + key);
      el.attributes.emplace_back(std::move(key), std::move(value));
    }
    // content
    for (;;) {
      while (!at_end() && peek() != '<') advance();
      if (at_end()) fail("unterminated element <" + el.name + ">");
      if (starts_with("</")) {
        advance(2);
        const std::string closing = parse_name();
        if (closing != el.name) fail("mismatched </" + closing + ">, expected </" + el.name + ">");
        skip_ws();
        if (peek() != '>') fail("expected '>'");
        advance();
        return el;
      }
      if (starts_with("<!--")) {
        skip_until("-->");
      } else if (starts_with("<![CDATA[")) {
        skip_until("]]>");
      } else if (starts_with("<?")) {
        skip_until("?>");
      } else {
        el.children.push_back(parse_element());
      }
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

}  // namespace detail

inline Element parse(std::string_view text) { return detail::Reader(text).parse_document(); }

inline std::string escape(std::string_view raw) {
  std::string out;
  for (char c : raw) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace crashcast::xml

#endif  // CRASHCAST_XML_HPP_
