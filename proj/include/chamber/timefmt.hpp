#pragma once

#include <cstdint>
#include <string>

namespace chamber {

/// "2024-05-02T15:30:00.000Z" for UTC epoch milliseconds.
std::string format_iso_ms(std::int64_t epoch_ms);

/// Parses "YYYY-MM-DDTHH:MM:SS[.fff]Z" (UTC only). Throws std::invalid_argument.
std::int64_t parse_iso_ms(const std::string& text);

/// Report-style local rendering: "5/2/2024 3:45:30 PM", shifted by utc_offset_min.
std::string format_report_time(std::int64_t epoch_ms, int utc_offset_min);

}  // namespace chamber
