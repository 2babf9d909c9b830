#pragma once

// Internal JSON text helpers shared by the trace, steering, npmi and eval
// writers. All writers emit canonical single-line JSON through these
// functions so that identical data always serializes to identical bytes.

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>

#include "moesteer/error.hpp"

namespace moesteer::detail {

// 17 significant digits: enough to reproduce any double bit-exactly on
// re-parse. %g-style, so trailing zeros are not padded.
inline void append_double(std::string& out, double v, int precision = 17) {
  char buf[40];
  auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general,
                         precision);
  out.append(buf, r.ptr);
}

inline void append_int(std::string& out, std::int64_t v) {
  char buf[24];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, r.ptr);
}

inline void append_uint(std::string& out, std::uint64_t v) {
  char buf[24];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, r.ptr);
}

inline void append_json_string(std::string& out, std::string_view s) {
  out.push_back('"');
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          static const char hex[] = "0123456789abcdef";
          out += "\\u00";
          out.push_back(hex[(c >> 4) & 0xf]);
          out.push_back(hex[c & 0xf]);
        } else {
          out.push_back(c);
        }
    }
  }
  out.push_back('"');
}

inline std::string format_double(double v, int precision = 17) {
  std::string s;
  append_double(s, v, precision);
  return s;
}

// ---------------------------------------------------------------------------
// Cursor over one record line for the hand-rolled hot-path parser.

class LineCursor {
 public:
  LineCursor(std::string_view line, std::size_t line_number)
      : begin_(line.data()), pos_(line.data()), end_(line.data() + line.size()),
        line_number_(line_number) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw parse_error(what + " at column " +
                          std::to_string(static_cast<std::size_t>(pos_ - begin_) + 1),
                      line_number_);
  }

  bool at_end() const { return pos_ == end_; }

  char peek() const {
    if (pos_ == end_) fail("unexpected end of record");
    return *pos_;
  }

  void expect(char c) {
    if (pos_ == end_ || *pos_ != c) {
      fail(std::string("expected '") + c + "'");
    }
    ++pos_;
  }

  void expect_literal(std::string_view lit) {
    if (static_cast<std::size_t>(end_ - pos_) < lit.size() ||
        std::string_view(pos_, lit.size()) != lit) {
      fail("expected '" + std::string(lit) + "'");
    }
    pos_ += lit.size();
  }

  bool consume(char c) {
    if (pos_ != end_ && *pos_ == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::int64_t parse_int() {
    std::int64_t v = 0;
    auto r = std::from_chars(pos_, end_, v);
    if (r.ec != std::errc()) fail("expected integer");
    pos_ = r.ptr;
    return v;
  }

  double parse_double() {
    double v = 0;
    auto r = std::from_chars(pos_, end_, v);
    if (r.ec != std::errc()) fail("expected number");
    pos_ = r.ptr;
    return v;
  }

  // Parses a JSON string. Returns a view into the line when no escape is
  // present, otherwise decodes into `scratch` and returns a view of it.
  std::string_view parse_string(std::string& scratch) {
    expect('"');
    const char* start = pos_;
    while (pos_ != end_ && *pos_ != '"' && *pos_ != '\\') ++pos_;
    if (pos_ == end_) fail("unterminated string");
    if (*pos_ == '"') {
      std::string_view plain(start, static_cast<std::size_t>(pos_ - start));
      ++pos_;
      return plain;
    }
    // Slow path with escapes.
    scratch.assign(start, static_cast<std::size_t>(pos_ - start));
    while (pos_ != end_ && *pos_ != '"') {
      char c = *pos_;
      if (c == '\\') {
        ++pos_;
        if (pos_ == end_) fail("unterminated escape");
        switch (*pos_) {
          case '"': scratch.push_back('"'); break;
          case '\\': scratch.push_back('\\'); break;
          case '/': scratch.push_back('/'); break;
          case 'b': scratch.push_back('\b'); break;
          case 'f': scratch.push_back('\f'); break;
          case 'n': scratch.push_back('\n'); break;
          case 'r': scratch.push_back('\r'); break;
          case 't': scratch.push_back('\t'); break;
          case 'u': {
            if (end_ - pos_ < 5) fail("truncated \\u escape");
            unsigned code = 0;
            for (int i = 1; i <= 4; ++i) {
              char h = pos_[i];
              code <<= 4;
              if (h >= '0' && h <= '9') code |= static_cast<unsigned>(h - '0');
              else if (h >= 'a' && h <= 'f') code |= static_cast<unsigned>(h - 'a' + 10);
              else if (h >= 'A' && h <= 'F') code |= static_cast<unsigned>(h - 'A' + 10);
              else fail("invalid \\u escape");
            }
            pos_ += 4;
            // Encode as UTF-8 (basic multilingual plane only; surrogate
            // pairs do not occur in trace tokens).
            if (code < 0x80) {
              scratch.push_back(static_cast<char>(code));
            } else if (code < 0x800) {
              scratch.push_back(static_cast<char>(0xc0 | (code >> 6)));
              scratch.push_back(static_cast<char>(0x80 | (code & 0x3f)));
            } else {
              scratch.push_back(static_cast<char>(0xe0 | (code >> 12)));
              scratch.push_back(static_cast<char>(0x80 | ((code >> 6) & 0x3f)));
              scratch.push_back(static_cast<char>(0x80 | (code & 0x3f)));
            }
            break;
          }
          default: fail("invalid escape");
        }
        ++pos_;
      } else {
        scratch.push_back(c);
        ++pos_;
      }
    }
    if (pos_ == end_) fail("unterminated string");
    ++pos_;
    return scratch;
  }

  std::size_t line_number() const { return line_number_; }

 private:
  const char* begin_;
  const char* pos_;
  const char* end_;
  std::size_t line_number_;
};

}  // namespace moesteer::detail
