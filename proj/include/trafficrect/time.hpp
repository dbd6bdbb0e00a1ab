#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include <fmt/format.h>

#include "trafficrect/error.hpp"

namespace trafficrect {

/// Absolute instant plus the UTC offset it was written with. The offset is
/// what turns an epoch into the site's local clock hour.
struct Timestamp {
    double epoch_s = 0.0;
    int utc_offset_s = 0;
};

namespace detail {

// Howard Hinnant's days_from_civil.
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) noexcept {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

constexpr void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) noexcept {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp < 10 ? mp + 3 : mp - 9;
    y = static_cast<std::int64_t>(yoe) + era * 400 + (m <= 2);
}

inline bool digits(std::string_view s, std::size_t pos, std::size_t n, int& out) {
    if (pos + n > s.size()) return false;
    out = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
        if (s[i] < '0' || s[i] > '9') return false;
        out = out * 10 + (s[i] - '0');
    }
    return true;
}

}  // namespace detail

/// Parses "YYYY-MM-DDTHH:MM:SS[.frac][Z|+HH:MM|-HH:MM]". A missing zone
/// designator means UTC.
inline Timestamp parse_iso8601(std::string_view s) {
    auto bad = [&] { fail(ErrorCode::parse, "invalid ISO-8601 timestamp: " + std::string(s)); };
    int y, mo, d, h, mi, se;
    if (!detail::digits(s, 0, 4, y) || s.size() < 19 || s[4] != '-' || !detail::digits(s, 5, 2, mo) ||
        s[7] != '-' || !detail::digits(s, 8, 2, d) || (s[10] != 'T' && s[10] != ' ') ||
        !detail::digits(s, 11, 2, h) || s[13] != ':' || !detail::digits(s, 14, 2, mi) || s[16] != ':' ||
        !detail::digits(s, 17, 2, se))
        bad();
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 60) bad();

    std::size_t pos = 19;
    double frac = 0.0;
    if (pos < s.size() && (s[pos] == '.' || s[pos] == ',')) {
        ++pos;
        double scale = 0.1;
        const std::size_t start = pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
            frac += (s[pos] - '0') * scale;
            scale /= 10.0;
            ++pos;
        }
        if (pos == start) bad();
    }

    int offset = 0;
    if (pos < s.size()) {
        if (s[pos] == 'Z' && pos + 1 == s.size()) {
            offset = 0;
        } else if ((s[pos] == '+' || s[pos] == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
            int oh, om;
            if (!detail::digits(s, pos + 1, 2, oh) || !detail::digits(s, pos + 4, 2, om)) bad();
            offset = (oh * 3600 + om * 60) * (s[pos] == '-' ? -1 : 1);
        } else {
            bad();
        }
    }

    const std::int64_t days = detail::days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
    const double local = static_cast<double>(days) * 86400.0 + h * 3600.0 + mi * 60.0 + se;
    return {local - offset + frac, offset};
}

/// Formats with microsecond precision and an explicit offset ("Z" for UTC).
inline std::string format_iso8601(double epoch_s, int utc_offset_s = 0) {
    const double local = epoch_s + utc_offset_s;
    auto micros = static_cast<std::int64_t>(std::llround(local * 1e6));
    std::int64_t secs = micros >= 0 ? micros / 1000000 : -((-micros + 999999) / 1000000);
    const std::int64_t us = micros - secs * 1000000;
    std::int64_t days = secs >= 0 ? secs / 86400 : -((-secs + 86399) / 86400);
    const std::int64_t sod = secs - days * 86400;
    std::int64_t y;
    unsigned m, d;
    detail::civil_from_days(days, y, m, d);

    std::string zone = "Z";
    if (utc_offset_s != 0) {
        const int a = utc_offset_s < 0 ? -utc_offset_s : utc_offset_s;
        zone = fmt::format("{}{:02}:{:02}", utc_offset_s < 0 ? '-' : '+', a / 3600, (a % 3600) / 60);
    }
    return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:06}{}", y, m, d, sod / 3600, (sod % 3600) / 60, sod % 60, us,
                       zone);
}

/// Local civil day index and hour-of-day for an instant.
struct LocalHour {
    std::int64_t day = 0;
    int hour = 0;
    friend auto operator<=>(const LocalHour&, const LocalHour&) = default;
};

inline LocalHour local_hour(double epoch_s, int utc_offset_s) {
    const double local = epoch_s + utc_offset_s;
    const auto day = static_cast<std::int64_t>(std::floor(local / 86400.0));
    const double sod = local - static_cast<double>(day) * 86400.0;
    int hour = static_cast<int>(std::floor(sod / 3600.0));
    hour = hour < 0 ? 0 : (hour > 23 ? 23 : hour);
    return {day, hour};
}

/// Seconds since local midnight.
inline double seconds_of_day(double epoch_s, int utc_offset_s) {
    const double local = epoch_s + utc_offset_s;
    return local - std::floor(local / 86400.0) * 86400.0;
}

/// Parses "HH:MM" or "HH:MM:SS" into seconds since midnight.
inline double parse_time_of_day(std::string_view s) {
    int h = 0, m = 0, sec = 0;
    const bool ok = detail::digits(s, 0, 2, h) && s.size() >= 5 && s[2] == ':' && detail::digits(s, 3, 2, m) &&
                    (s.size() == 5 || (s.size() == 8 && s[5] == ':' && detail::digits(s, 6, 2, sec)));
    if (!ok || h > 24 || m > 59 || sec > 59 || (h == 24 && (m != 0 || sec != 0)))
        fail(ErrorCode::parse, "invalid time of day: " + std::string(s));
    return h * 3600.0 + m * 60.0 + sec;
}

inline std::string format_time_of_day(double sod) {
    const auto total = static_cast<long long>(std::llround(sod));
    if (total % 60 == 0) return fmt::format("{:02}:{:02}", total / 3600, (total % 3600) / 60);
    return fmt::format("{:02}:{:02}:{:02}", total / 3600, (total % 3600) / 60, total % 60);
}

}  // namespace trafficrect
