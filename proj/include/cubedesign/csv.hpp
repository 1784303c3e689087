#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <initializer_list>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace cubedesign::csv {

/// Raised for unreadable or malformed CSV input.
class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return c;
    return std::nullopt;
  }

  std::size_t require(std::string_view name) const {
    if (auto c = find(name)) return *c;
    throw CsvError("missing required column '" + std::string(name) + "'");
  }

  /// Parses a column as finite doubles. Row numbers in messages count the
  /// header as line 1.
  std::vector<double> numbers(std::size_t col) const {
    std::vector<double> out(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::string& cell = rows[r][col];
      double v = 0.0;
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      while (first < last && *first == ' ') ++first;
      while (last > first && last[-1] == ' ') --last;
      if (first < last && *first == '+') ++first;
      const auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last || first == last || !std::isfinite(v))
        throw CsvError("line " + std::to_string(r + 2) + ", column '" + header[col] + "': '" + cell + "' is not a finite number");
      out[r] = v;
    }
    return out;
  }

  std::vector<double> numbers(std::string_view name) const { return numbers(require(name)); }
};

namespace detail {

inline std::vector<std::string> split_record(std::istream& in, std::string& line, std::size_t line_no, bool& ok) {
  std::vector<std::string> fields;
  ok = static_cast<bool>(std::getline(in, line));
  if (!ok) return fields;
  std::string field;
  bool quoted = false;
  std::size_t i = 0;
  for (;;) {
    if (i == line.size()) {
      if (quoted) {
        std::string more;
        if (!std::getline(in, more)) throw CsvError("line " + std::to_string(line_no) + ": unterminated quoted field");
        field += '\n';
        line = std::move(more);
        i = 0;
        continue;
      }
      break;
    }
    const char c = line[i++];
    if (quoted) {
      if (c == '"') {
        if (i < line.size() && line[i] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

}  // namespace detail

inline Table read(std::istream& in) {
  Table t;
  std::string line;
  bool ok = false;
  t.header = detail::split_record(in, line, 1, ok);
  if (!ok) throw CsvError("empty input: a header row is required");
  if (!t.header.empty() && t.header[0].starts_with("\xEF\xBB\xBF")) t.header[0].erase(0, 3);
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c].empty()) throw CsvError("header column " + std::to_string(c + 1) + " has no name");
    for (std::size_t k = 0; k < c; ++k)
      if (t.header[k] == t.header[c]) throw CsvError("duplicate column '" + t.header[c] + "'");
  }
  for (std::size_t line_no = 2;; ++line_no) {
    auto fields = detail::split_record(in, line, line_no, ok);
    if (!ok) break;
    if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
    if (fields.size() != t.header.size())
      throw CsvError("line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) + " fields, expected " +
                     std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError("cannot open '" + path + "'");
  return read(in);
}

/// Shortest decimal text that reads back to the same double; "NA" for NaN.
inline std::string format(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string quote(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

/// Writes one CSV record terminated by '\n'.
class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  Writer& row(std::initializer_list<std::string> fields) {
    bool first = true;
    for (const auto& f : fields) {
      if (!first) out_ << ',';
      out_ << quote(f);
      first = false;
    }
    out_ << '\n';
    return *this;
  }

  Writer& row(const std::vector<std::string>& fields) {
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (k) out_ << ',';
      out_ << quote(fields[k]);
    }
    out_ << '\n';
    return *this;
  }

 private:
  std::ostream& out_;
};

}  // namespace cubedesign::csv
