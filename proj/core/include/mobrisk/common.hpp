#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace mobrisk {

/// Calendar date with day resolution. Weeks are keyed by their Monday.
using Date = std::chrono::sys_days;

/// Parses "YYYY-MM-DD". Anything after the first ten characters (a time or
/// offset suffix such as "T00:00:00-05:00") is ignored.
std::optional<Date> parse_date(std::string_view text);
Date parse_date_or_throw(std::string_view text);
std::string format_date(Date d);
bool is_monday(Date d);
Date floor_to_monday(Date d);

enum class LabelCategory { IllicitActive, IllicitQuiet, NeverAsw };

std::string_view to_string(LabelCategory c);
LabelCategory label_category_from_string(std::string_view s);

/// Deterministic child seed from a parent seed, a stage/purpose label and an
/// index (establishment, tree, iteration). Stable across platforms.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label,
                          std::uint64_t index = 0);

/// Upper bound on worker threads used by the library. 0 selects
/// std::thread::hardware_concurrency().
void set_max_threads(std::size_t n);
std::size_t max_threads();

/// Runs body(i) for i in [0, n). Work items must be independent; results
/// are expected to be written to per-index slots so that output does not
/// depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mobrisk
