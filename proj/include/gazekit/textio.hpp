#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gazekit::textio {

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);
std::string format_optional(const std::optional<double>& v);

std::vector<std::string_view> split(std::string_view line, char sep = ',');
std::string_view trim(std::string_view s);

// Strict parsers: the whole field must be consumed.
std::optional<double> parse_double(std::string_view s);
std::optional<long long> parse_int(std::string_view s);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace gazekit::textio
