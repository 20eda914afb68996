#include "veritas/io.hpp"

#include <charconv>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include "veritas/errors.hpp"

namespace veritas {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw DataError("failed writing '" + path + "'");
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw InvalidInput("format_double failed");
  return std::string(buf, end);
}

std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(start, nl - start);
    if (!line.empty() && line != "\r") rows.push_back(split_csv_line(line));
    start = nl + 1;
  }
  return rows;
}

namespace {
std::mutex warning_mutex;
WarningSink warning_sink;
}  // namespace

void set_warning_sink(WarningSink sink) {
  std::lock_guard lock(warning_mutex);
  warning_sink = std::move(sink);
}

void warn(std::string_view message) {
  std::lock_guard lock(warning_mutex);
  if (warning_sink) {
    warning_sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace veritas
