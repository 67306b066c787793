#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace nkrr::csv {

/// Shortest representation that parses back to the same double.
inline std::string format(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

inline std::string format(std::int64_t value) { return std::to_string(value); }
inline std::string format(std::uint64_t value) { return std::to_string(value); }
inline std::string format(int value) { return std::to_string(value); }
inline std::string format(long long value) { return std::to_string(value); }
inline std::string format(bool value) { return value ? "1" : "0"; }
inline std::string format(const std::string& value) { return value; }
inline std::string format(const char* value) { return value; }

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::optional<double> parse_double(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

inline std::optional<std::int64_t> parse_int(std::string_view text) {
  text = trim(text);
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find(',', start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Comment lines (`# ...`), a header row and data rows.
struct Table {
  std::vector<std::string> comments;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  template <typename... Ts>
  void add_row(const Ts&... values) {
    rows.push_back({format(values)...});
  }

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }
};

inline void write(std::ostream& os, const Table& table) {
  for (const auto& c : table.comments) os << "# " << c << '\n';
  auto emit = [&os](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      os << cells[i];
    }
    os << '\n';
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
}

/// Reads comments, header and rows. Blank lines are skipped. Row lengths are
/// not validated here.
inline Table read(std::istream& is) {
  Table table;
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    std::string_view view(line);
    if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
    if (trim(view).empty()) continue;
    if (view.front() == '#') {
      view.remove_prefix(1);
      if (!view.empty() && view.front() == ' ') view.remove_prefix(1);
      table.comments.emplace_back(view);
      continue;
    }
    if (!have_header) {
      table.header = split(view);
      have_header = true;
    } else {
      table.rows.push_back(split(view));
    }
  }
  return table;
}

}  // namespace nkrr::csv
