#pragma once

#include <string>
#include <string_view>

namespace forgecap::text {

std::string_view trim(std::string_view s) noexcept;
std::string to_lower(std::string_view s);
bool starts_with_icase(std::string_view s, std::string_view prefix) noexcept;
bool is_alpha(char c) noexcept;

// Collapses runs of whitespace to one space, trims and lowercases. Used as a
// dedup key for generated questions.
std::string normalized_key(std::string_view s);

// Formats a probability with two decimals, e.g. 0.07 -> "0.07".
std::string format_score(double s);

}  // namespace forgecap::text
