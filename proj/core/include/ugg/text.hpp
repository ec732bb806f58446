#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ugg {

// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

// Parsers for config values; ConfigError names `key` on malformed input.
double parse_double(std::string_view key, std::string_view text);
std::uint64_t parse_uint(std::string_view key, std::string_view text);
bool parse_bool(std::string_view key, std::string_view text);
std::vector<std::string> split_list(std::string_view text, char sep = ',');
std::string_view trim(std::string_view s) noexcept;

}  // namespace ugg
