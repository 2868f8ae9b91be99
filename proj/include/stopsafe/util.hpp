#pragma once

// Small shared helpers: canonical number formatting, ISO-8601 time,
// stable content hashing and the warning sink.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace stopsafe {

/// Shortest decimal string that round-trips to the same double.
std::string format_double(double v);
/// Fixed-point with `digits` decimals (report rendering).
std::string format_fixed(double v, int digits);
std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

/// "YYYY-MM-DDTHH:MM:SSZ" <-> UTC epoch seconds.
std::optional<std::int64_t> parse_iso8601(std::string_view s);
std::string format_iso8601(std::int64_t epoch_s);
/// "YYYY-MM-DD" <-> days since 1970-01-01.
std::optional<std::int64_t> parse_date(std::string_view s);
std::string format_date(std::int64_t days);

/// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex16(std::uint64_t v);

namespace log {
using Sink = std::function<void(const std::string&)>;
void warn(const std::string& msg);
/// Replaces the sink (default writes to stderr). Returns the previous one.
Sink set_sink(Sink sink);
}  // namespace log

}  // namespace stopsafe
