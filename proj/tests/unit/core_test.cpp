#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "trafficrect/geometry.hpp"
#include "trafficrect/quantile.hpp"
#include "trafficrect/rng.hpp"
#include "trafficrect/time.hpp"

using namespace trafficrect;

namespace {

// Sort-and-interpolate reference for the closest-ranks definition.
double brute_quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    if (frac == 0.0 || lo + 1 >= v.size()) return v[lo];
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

double chrono_epoch(int y, unsigned m, unsigned d, int h, int mi, int s) {
    using namespace std::chrono;
    const sys_days date = year{y} / month{m} / std::chrono::day{d};
    return static_cast<double>(date.time_since_epoch().count()) * 86400.0 + h * 3600.0 + mi * 60.0 + s;
}

}  // namespace

TEST(Quantile, MatchesSortOracleOnRandomSamples) {
    CounterRng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.below(60);
        std::vector<double> v(n);
        for (auto& x : v) x = rng.below(4) == 0 ? std::round(rng.uniform(-5, 5)) : rng.uniform(-10, 10);
        for (double q : {0.0, 0.05, 0.25, 0.5, 0.75, 0.9, 0.95, 1.0, rng.uniform()})
            ASSERT_EQ(quantile(v, q), brute_quantile(v, q)) << "n=" << n << " q=" << q;
    }
}

TEST(Quantile, Endpoints) {
    const std::vector<double> v{3, 1, 2};
    EXPECT_EQ(quantile(v, 0.0), 1.0);
    EXPECT_EQ(quantile(v, 1.0), 3.0);
    EXPECT_EQ(quantile(v, 0.25), 1.5);
    EXPECT_EQ(quantile(std::vector<double>{4.0}, 0.3), 4.0);
}

TEST(Quantile, RejectsEmptyAndBadLevel) {
    const std::vector<double> empty;
    try {
        quantile(empty, 0.5);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::precondition);
    }
    EXPECT_THROW(quantile(std::vector<double>{1.0}, 1.5), Error);
    EXPECT_THROW(quantile(std::vector<double>{1.0}, std::nan("")), Error);
}

TEST(Ecdf, StepFunction) {
    const Ecdf f({2.0, 1.0, 2.0, 4.0});
    EXPECT_EQ(f(0.5), 0.0);
    EXPECT_EQ(f(1.0), 0.25);
    EXPECT_EQ(f(2.0), 0.75);
    EXPECT_EQ(f(3.9), 0.75);
    EXPECT_EQ(f(4.0), 1.0);
    EXPECT_EQ(f.sorted(), (std::vector<double>{1.0, 2.0, 2.0, 4.0}));
    EXPECT_THROW(Ecdf(std::vector<double>{}), Error);
}

TEST(Rng, SameKeyAndStreamRepeat) {
    CounterRng a(42, 3), b(42, 3), c(42, 4);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        EXPECT_EQ(x, b.next_u64());
        differs |= x != c.next_u64();
    }
    EXPECT_TRUE(differs);
}

TEST(Rng, UniformAndBelowRanges) {
    CounterRng r(1);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        const auto k = r.below(7);
        ASSERT_LT(k, 7u);
        seen.insert(k);
    }
    EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, NormalMoments) {
    CounterRng r(99);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Time, ParseAgainstChronoCalendar) {
    CounterRng r(5);
    for (int i = 0; i < 500; ++i) {
        const int y = 1970 + static_cast<int>(r.below(100));
        const unsigned m = 1 + static_cast<unsigned>(r.below(12));
        const unsigned d = 1 + static_cast<unsigned>(r.below(28));
        const int h = static_cast<int>(r.below(24)), mi = static_cast<int>(r.below(60)), s = static_cast<int>(r.below(60));
        char buf[64];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d-05:00", y, m, d, h, mi, s);
        const auto ts = parse_iso8601(buf);
        EXPECT_EQ(ts.utc_offset_s, -5 * 3600);
        EXPECT_EQ(ts.epoch_s, chrono_epoch(y, m, d, h, mi, s) + 5 * 3600.0) << buf;
    }
}

TEST(Time, FormatRoundTrip) {
    const auto ts = parse_iso8601("2024-03-05T08:15:00.250-05:00");
    EXPECT_EQ(format_iso8601(ts.epoch_s, ts.utc_offset_s), "2024-03-05T08:15:00.250000-05:00");
    EXPECT_EQ(format_iso8601(0.0), "1970-01-01T00:00:00.000000Z");
    const auto z = parse_iso8601("2024-02-29T23:59:59Z");
    EXPECT_EQ(parse_iso8601(format_iso8601(z.epoch_s, 19800)).epoch_s, z.epoch_s);
}

TEST(Time, RejectsMalformed) {
    for (const char* s : {"2024-13-01T00:00:00Z", "2024-01-01 25:00:00", "2024-01-01T00:00", "2024-01-01T00:00:00+0500",
                          "garbage", "2024-01-01T00:00:00."}) {
        try {
            parse_iso8601(s);
            ADD_FAILURE() << s;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::parse);
        }
    }
}

TEST(Time, LocalHourUsesOffset) {
    const auto ts = parse_iso8601("2024-03-05T08:59:59-05:00");
    const auto lh = local_hour(ts.epoch_s, ts.utc_offset_s);
    EXPECT_EQ(lh.hour, 8);
    EXPECT_EQ(local_hour(ts.epoch_s + 1.0, ts.utc_offset_s).hour, 9);
    EXPECT_EQ(local_hour(ts.epoch_s, 0).hour, 13);
    EXPECT_EQ(lh.day, local_hour(parse_iso8601("2024-03-05T00:00:00-05:00").epoch_s, -18000).day);
    EXPECT_DOUBLE_EQ(seconds_of_day(ts.epoch_s, ts.utc_offset_s), 8 * 3600.0 + 59 * 60 + 59);
}

TEST(Time, TimeOfDay) {
    EXPECT_EQ(parse_time_of_day("07:30"), 7.5 * 3600);
    EXPECT_EQ(parse_time_of_day("24:00"), 86400.0);
    EXPECT_EQ(format_time_of_day(7.5 * 3600), "07:30");
    EXPECT_EQ(format_time_of_day(7.5 * 3600 + 5), "07:30:05");
    EXPECT_THROW(parse_time_of_day("7:30"), Error);
    EXPECT_THROW(parse_time_of_day("24:01"), Error);
}

TEST(Geometry, SegmentHelpers) {
    const Segment s{{0, 0}, {10, 0}};
    EXPECT_EQ(distance_to_segment(s, {5, 3}), 3.0);
    EXPECT_EQ(distance_to_segment(s, {-3, 4}), 5.0);
    EXPECT_GT(cross(s, {5, 1}), 0.0);
    EXPECT_LT(cross(s, {5, -1}), 0.0);
    const Segment z{{1, 1}, {1, 1}};
    EXPECT_EQ(closest_point(z, {4, 5}), (WorldPoint{1, 1}));
}
