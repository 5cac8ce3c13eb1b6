#ifndef SEAFIELD_TIMEFEATURES_HPP
#define SEAFIELD_TIMEFEATURES_HPP

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "seafield/common.hpp"
#include "seafield/tensor.hpp"

namespace seafield::timefeat {

/// A calendar instant, stored as minutes since 1970-01-01 00:00 (naive
/// local time, no timezone or DST handling).
struct Timestamp {
    std::int64_t minutes = 0;

    friend bool operator==(Timestamp a, Timestamp b) { return a.minutes == b.minutes; }
    friend bool operator<(Timestamp a, Timestamp b) { return a.minutes < b.minutes; }
    Timestamp plus_minutes(std::int64_t m) const { return Timestamp{minutes + m}; }
};

namespace detail {

// Civil-calendar conversions (proleptic Gregorian), Hinnant's algorithms.
inline std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);                     // [0, 399]
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;           // [0, 365]
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;                    // [0, 146096]
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);                  // [0, 146096]
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;    // [0, 399]
    const std::int64_t yr = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);                  // [0, 365]
    const unsigned mp = (5 * doy + 2) / 153;                                       // [0, 11]
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y = yr + (m <= 2);
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

inline std::int64_t floor_mod(std::int64_t a, std::int64_t b) { return a - floor_div(a, b) * b; }

} // namespace detail

inline Timestamp make_timestamp(std::int64_t year, unsigned month, unsigned day,
                                unsigned hour = 0, unsigned minute = 0) {
    SF_CHECK(month >= 1 && month <= 12 && day >= 1 && day <= 31 && hour < 24 && minute < 60,
             "invalid calendar fields");
    return Timestamp{detail::days_from_civil(year, month, day) * 1440 +
                     static_cast<std::int64_t>(hour) * 60 + minute};
}

/// Parse "YYYY-MM-DD HH:MM[:SS]" or the same with a 'T' separator.
/// Seconds, when present, must be zero (the toolkit works at minute
/// granularity).
inline Timestamp parse_timestamp(const std::string& s) {
    long long y = 0;
    unsigned mo = 0, d = 0, h = 0, mi = 0, se = 0;
    char sep = 0;
    int n = std::sscanf(s.c_str(), "%lld-%u-%u%c%u:%u:%u", &y, &mo, &d, &sep, &h, &mi, &se);
    if (n < 6 || (sep != 'T' && sep != ' '))
        throw DataError("unparsable timestamp: '" + s + "'");
    if (n == 7 && se != 0)
        throw DataError("sub-minute timestamp not supported: '" + s + "'");
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59)
        throw DataError("timestamp fields out of range: '" + s + "'");
    return make_timestamp(y, mo, d, h, mi);
}

inline std::string format_timestamp(Timestamp t) {
    std::int64_t days = detail::floor_div(t.minutes, 1440);
    std::int64_t mod = detail::floor_mod(t.minutes, 1440);
    std::int64_t y;
    unsigned mo, d;
    detail::civil_from_days(days, y, mo, d);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02lld:%02lld:00",
                  static_cast<long long>(y), mo, d,
                  static_cast<long long>(mod / 60), static_cast<long long>(mod % 60));
    return buf;
}

/// Weekday index with Monday = 0 .. Sunday = 6.
inline int weekday_index(Timestamp t) {
    std::int64_t days = detail::floor_div(t.minutes, 1440);
    return static_cast<int>(detail::floor_mod(days + 3, 7)); // 1970-01-01 is a Thursday
}

/// Normalized time coordinates of one instant. The (time_of_day,
/// day_of_week) pair lies in [0,1)^2 and is the coordinate domain of the
/// neural field; the weekend flag is an optional extra input.
struct AuxCoordinates {
    double time_of_day = 0.0; // minutes since midnight / 1440
    double day_of_week = 0.0; // weekday index / 7, Monday = 0
    double weekend = 0.0;     // 1.0 on Saturday/Sunday
};

inline AuxCoordinates extract_coords(Timestamp t) {
    AuxCoordinates c;
    c.time_of_day = static_cast<double>(detail::floor_mod(t.minutes, 1440)) / 1440.0;
    int wd = weekday_index(t);
    c.day_of_week = static_cast<double>(wd) / 7.0;
    c.weekend = (wd >= 5) ? 1.0 : 0.0;
    return c;
}

/// Coordinate matrix for a window of instants: one row per timestamp,
/// columns (time_of_day, day_of_week[, weekend]).
inline Tensor coords_for_window(const std::vector<Timestamp>& ts, bool with_weekend = false) {
    const std::int64_t rows = static_cast<std::int64_t>(ts.size());
    const std::int64_t cols = with_weekend ? 3 : 2;
    Tensor out({rows, cols});
    for (std::int64_t i = 0; i < rows; ++i) {
        AuxCoordinates c = extract_coords(ts[static_cast<std::size_t>(i)]);
        out.at(i, 0) = c.time_of_day;
        out.at(i, 1) = c.day_of_week;
        if (with_weekend) out.at(i, 2) = c.weekend;
    }
    return out;
}

} // namespace seafield::timefeat

#endif // SEAFIELD_TIMEFEATURES_HPP
