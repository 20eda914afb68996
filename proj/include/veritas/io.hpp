#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace veritas {

/// Whole-file read; throws DataError if the file cannot be opened.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double value);

/// Minimal CSV handling for the numeric report formats (no quoting: fields never
/// contain commas or newlines).
std::vector<std::string> split_csv_line(std::string_view line);
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

/// Non-fatal diagnostics go to stderr unless a sink is installed (an empty sink restores stderr).
using WarningSink = std::function<void(std::string_view)>;
void set_warning_sink(WarningSink sink);
void warn(std::string_view message);

}  // namespace veritas
