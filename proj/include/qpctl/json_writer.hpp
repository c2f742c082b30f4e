#pragma once

#include "qpctl/io.hpp"

#include <cmath>
#include <concepts>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace qpctl::io {

/// Streaming JSON emitter whose numbers always carry 17 significant digits,
/// so documents written twice from the same values are byte-identical.
/// Non-finite numbers are written as null.
class JsonWriter {
 public:
  explicit JsonWriter(std::ostream& out) : out_(out) {}

  JsonWriter& begin_object() { return open('{'); }
  JsonWriter& end_object() { return close('}'); }
  JsonWriter& begin_array() { return open('['); }
  JsonWriter& end_array() { return close(']'); }

  JsonWriter& key(std::string_view k) {
    separator();
    write_string(k);
    out_ << ": ";
    after_key_ = true;
    return *this;
  }

  JsonWriter& value(double v) {
    separator();
    if (std::isfinite(v)) {
      out_ << fmt(v);
    } else {
      out_ << "null";
    }
    return *this;
  }
  template <std::integral I>
    requires(!std::same_as<I, bool>)
  JsonWriter& value(I v) {
    separator();
    out_ << v;
    return *this;
  }
  JsonWriter& value(bool v) {
    separator();
    out_ << (v ? "true" : "false");
    return *this;
  }
  JsonWriter& value(std::string_view v) {
    separator();
    write_string(v);
    return *this;
  }
  JsonWriter& value(const char* v) { return value(std::string_view(v)); }

  template <class T>
  JsonWriter& field(std::string_view k, const T& v) {
    key(k);
    return value(v);
  }

  /// A flat numeric array on one line.
  template <class Range>
  JsonWriter& numbers(const Range& values) {
    separator();
    out_ << '[';
    bool first = true;
    for (double v : values) {
      if (!first) out_ << ", ";
      first = false;
      out_ << (std::isfinite(v) ? fmt(v) : std::string("null"));
    }
    out_ << ']';
    return *this;
  }

  void finish() { out_ << '\n'; }

 private:
  JsonWriter& open(char c) {
    separator();
    out_ << c;
    first_.push_back(true);
    return *this;
  }

  JsonWriter& close(char c) {
    const bool empty = first_.back();
    first_.pop_back();
    if (!empty) newline();
    out_ << c;
    return *this;
  }

  void separator() {
    if (after_key_) {
      after_key_ = false;
      return;
    }
    if (first_.empty()) return;
    if (!first_.back()) out_ << ',';
    first_.back() = false;
    newline();
  }

  void newline() {
    out_ << '\n';
    for (std::size_t i = 0; i < first_.size(); ++i) out_ << "  ";
  }

  void write_string(std::string_view s) {
    out_ << '"';
    for (char c : s) {
      switch (c) {
        case '"': out_ << "\\\""; break;
        case '\\': out_ << "\\\\"; break;
        case '\n': out_ << "\\n"; break;
        case '\t': out_ << "\\t"; break;
        default: out_ << c;
      }
    }
    out_ << '"';
  }

  std::ostream& out_;
  std::vector<bool> first_;
  bool after_key_ = false;
};

}  // namespace qpctl::io
