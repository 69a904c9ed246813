#include "chamber/timefmt.hpp"

#include <cstdio>
#include <ctime>
#include <stdexcept>

namespace chamber {

namespace {

std::tm utc_tm(std::int64_t epoch_s) {
    const auto t = static_cast<std::time_t>(epoch_s);
    std::tm tm{};
    gmtime_r(&t, &tm);
    return tm;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); }

}  // namespace

std::string format_iso_ms(std::int64_t epoch_ms) {
    const std::int64_t secs = floor_div(epoch_ms, 1000);
    const std::tm tm = utc_tm(secs);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(epoch_ms - secs * 1000));
    return buf;
}

std::int64_t parse_iso_ms(const std::string& text) {
    int y, mo, d, h, mi, s, consumed = 0;
    if (std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &s, &consumed) != 6 || consumed != 19) {
        throw std::invalid_argument("bad timestamp: " + text);
    }
    std::size_t pos = 19;
    int ms = 0;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        int digits = 0;
        while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
            if (digits < 3) ms = ms * 10 + (text[pos] - '0');
            ++digits;
            ++pos;
        }
        if (digits == 0) throw std::invalid_argument("bad timestamp: " + text);
        for (; digits < 3; ++digits) ms *= 10;
    }
    if (pos + 1 != text.size() || text[pos] != 'Z') throw std::invalid_argument("timestamp must be UTC (Z): " + text);
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 60) throw std::invalid_argument("bad timestamp: " + text);
    std::tm tm{};
    tm.tm_year = y - 1900;
    tm.tm_mon = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min = mi;
    tm.tm_sec = s;
    return static_cast<std::int64_t>(timegm(&tm)) * 1000 + ms;
}

std::string format_report_time(std::int64_t epoch_ms, int utc_offset_min) {
    const std::tm tm = utc_tm(floor_div(epoch_ms, 1000) + std::int64_t{utc_offset_min} * 60);
    int hour12 = tm.tm_hour % 12;
    if (hour12 == 0) hour12 = 12;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%d/%d/%d %d:%02d:%02d %s", tm.tm_mon + 1, tm.tm_mday, tm.tm_year + 1900, hour12,
                  tm.tm_min, tm.tm_sec, tm.tm_hour < 12 ? "AM" : "PM");
    return buf;
}

}  // namespace chamber
