// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared helpers for the line-oriented text formats.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace searchlab::textio
{

/// Shortest representation that parses back to the identical double.
std::string format_double(double value);

std::optional<double> parse_double(std::string_view text);
std::optional<std::uint64_t> parse_uint(std::string_view text);

std::vector<std::string_view> split_ws(std::string_view line);
std::string_view trim(std::string_view s);

/// Splits `key=value`; nullopt when there is no '='.
std::optional<std::pair<std::string_view, std::string_view>> split_key_value(std::string_view token);

} // namespace searchlab::textio
