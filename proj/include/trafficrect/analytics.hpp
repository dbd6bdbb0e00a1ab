#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "trafficrect/braking.hpp"
#include "trafficrect/error.hpp"
#include "trafficrect/ortho.hpp"
#include "trafficrect/quantile.hpp"
#include "trafficrect/time.hpp"

namespace trafficrect {

// ---------------------------------------------------------------- observation

/// Local (day, hour) cells during which the camera was recording. Average
/// hourly counts divide by the number of observed days for each hour.
class Observation {
public:
    void add(LocalHour cell) { cells_.insert(cell); }

    /// Marks every local hour touched by [t_begin, t_end).
    void add_interval(double t_begin, double t_end, int utc_offset_s) {
        if (!(t_end > t_begin)) {
            add(local_hour(t_begin, utc_offset_s));
            return;
        }
        const double local_begin = t_begin + utc_offset_s;
        const double local_end = t_end + utc_offset_s;
        auto slot = static_cast<std::int64_t>(std::floor(local_begin / 3600.0));
        const auto last = static_cast<std::int64_t>(std::ceil(local_end / 3600.0)) - 1;
        for (; slot <= last; ++slot) {
            const std::int64_t day = slot >= 0 ? slot / 24 : -((-slot + 23) / 24);
            add({day, static_cast<int>(slot - day * 24)});
        }
    }

    /// Number of distinct observed days for a given hour of day.
    int days_for_hour(int hour) const {
        int n = 0;
        for (const auto& c : cells_) n += c.hour == hour;
        return n;
    }

    bool contains(LocalHour cell) const { return cells_.contains(cell); }
    bool empty() const noexcept { return cells_.empty(); }
    const std::set<LocalHour>& cells() const noexcept { return cells_; }

private:
    std::set<LocalHour> cells_;
};

inline LocalHour event_hour(const BrakingEvent& e) { return local_hour(e.t_start, e.tz_offset_s); }

// ---------------------------------------------------------------- hourly counts

struct HourlyCountsRow {
    int hour = 0;
    int observed_days = 0;
    std::array<double, 3> mean_daily{};  // mild, moderate, severe
    std::array<int, 3> total{};
};

struct HourlyCounts {
    std::vector<HourlyCountsRow> rows;  // observed hours only, ascending
    std::size_t unobserved_events = 0;  // events falling in hours not marked observed
};

/// Mean daily event counts per local hour and severity. Events are bucketed
/// by their start time.
inline HourlyCounts hourly_counts(std::span<const BrakingEvent> events, const Observation& obs) {
    HourlyCounts out;
    std::map<int, HourlyCountsRow> rows;
    for (const auto& c : obs.cells()) {
        auto& row = rows[c.hour];
        row.hour = c.hour;
        ++row.observed_days;
    }
    for (const auto& e : events) {
        const LocalHour cell = event_hour(e);
        if (!obs.contains(cell)) {
            ++out.unobserved_events;
            continue;
        }
        ++rows[cell.hour].total[static_cast<std::size_t>(e.severity)];
    }
    for (auto& [hour, row] : rows) {
        for (std::size_t s = 0; s < 3; ++s) row.mean_daily[s] = static_cast<double>(row.total[s]) / row.observed_days;
        out.rows.push_back(row);
    }
    return out;
}

// ---------------------------------------------------------------- heatmap

struct DistanceBins {
    std::vector<double> edges{0.0, 15.0, 30.0, 45.0, std::numeric_limits<double>::infinity()};

    void validate() const {
        if (edges.size() < 2) fail(ErrorCode::validation, "distance bins need at least 2 edges");
        for (std::size_t i = 1; i < edges.size(); ++i)
            if (!(edges[i] > edges[i - 1])) fail(ErrorCode::validation, "distance bin edges must increase strictly");
    }

    std::size_t count() const noexcept { return edges.size() - 1; }

    /// Bin index of r, or nullopt below the first edge. The last bin is
    /// closed above only if its edge is finite.
    std::optional<std::size_t> bin_of(double r) const {
        if (r < edges.front()) return std::nullopt;
        for (std::size_t i = 0; i + 1 < edges.size(); ++i)
            if (r < edges[i + 1]) return i;
        return std::isinf(edges.back()) ? std::optional<std::size_t>(count() - 1) : std::nullopt;
    }

    std::string label(std::size_t i) const {
        if (std::isinf(edges[i + 1])) return fmt::format("{}+", edges[i]);
        return fmt::format("{}-{}", edges[i], edges[i + 1]);
    }
};

struct HeatmapTable {
    std::vector<std::string> rows;  // severities
    std::vector<std::string> cols;  // distance bin labels
    std::vector<std::vector<double>> values;
    std::vector<std::vector<int>> counts;
    std::vector<bool> empty_rows;
};

/// Share of each severity's events per r_start bin (rows sum to 1).
inline HeatmapTable severity_distance_heatmap(std::span<const BrakingEvent> events, const DistanceBins& bins = {}) {
    bins.validate();
    HeatmapTable t;
    for (Severity s : kSeverities) t.rows.emplace_back(to_string(s));
    for (std::size_t i = 0; i < bins.count(); ++i) t.cols.push_back(bins.label(i));
    t.counts.assign(3, std::vector<int>(bins.count(), 0));
    t.values.assign(3, std::vector<double>(bins.count(), 0.0));
    for (const auto& e : events) {
        const auto b = bins.bin_of(e.r_start);
        if (!b) fail(ErrorCode::validation, "r_start outside the distance bins");
        ++t.counts[static_cast<std::size_t>(e.severity)][*b];
    }
    for (std::size_t s = 0; s < 3; ++s) {
        int total = 0;
        for (int c : t.counts[s]) total += c;
        t.empty_rows.push_back(total == 0);
        if (total == 0) continue;
        for (std::size_t b = 0; b < bins.count(); ++b)
            t.values[s][b] = static_cast<double>(t.counts[s][b]) / total;
    }
    return t;
}

// ---------------------------------------------------------------- hourly stats

struct HourlyStatsRow {
    int hour = 0;
    std::size_t n = 0;
    double mean = 0.0;
    double min = 0.0;
    double p25 = 0.0;
    double p50 = 0.0;
    double p75 = 0.0;
    double p90 = 0.0;
};

struct HourlyStats {
    std::vector<HourlyStatsRow> rows;
    std::vector<std::string> notes;  // hours omitted for lack of events
};

/// Count, mean and quantiles of a_bar for each local hour in [hour_from,
/// hour_to).
inline HourlyStats hourly_stats(std::span<const BrakingEvent> events, int hour_from = 7, int hour_to = 19) {
    if (hour_from < 0 || hour_to > 24 || hour_from >= hour_to) fail(ErrorCode::validation, "invalid hour range");
    std::map<int, std::vector<double>> by_hour;
    for (const auto& e : events) {
        const int h = event_hour(e).hour;
        if (h >= hour_from && h < hour_to) by_hour[h].push_back(e.a_bar);
    }
    HourlyStats out;
    for (int h = hour_from; h < hour_to; ++h) {
        const auto it = by_hour.find(h);
        if (it == by_hour.end()) {
            out.notes.push_back(fmt::format("hour {} omitted: no events", h));
            continue;
        }
        const auto& v = it->second;
        double sum = 0.0;
        for (double x : v) sum += x;
        out.rows.push_back({h, v.size(), sum / static_cast<double>(v.size()), quantile(v, 0.0), quantile(v, 0.25),
                            quantile(v, 0.5), quantile(v, 0.75), quantile(v, 0.9)});
    }
    return out;
}

// ---------------------------------------------------------------- r_start ECDF

struct RstartEcdf {
    std::vector<double> r;  // ascending
    std::vector<double> F;  // F[i] = (i + 1) / n
    double p95 = 0.0;

    double operator()(double x) const { return Ecdf(r)(x); }
};

inline RstartEcdf rstart_ecdf(std::span<const BrakingEvent> events) {
    if (events.empty()) fail(ErrorCode::precondition, "r_start ECDF needs at least one event");
    std::vector<double> r;
    for (const auto& e : events) r.push_back(e.r_start);
    const Ecdf ecdf(std::move(r));
    RstartEcdf out;
    out.r = ecdf.sorted();
    for (std::size_t i = 0; i < out.r.size(); ++i)
        out.F.push_back(static_cast<double>(i + 1) / static_cast<double>(out.r.size()));
    out.p95 = ecdf.quantile(0.95);
    return out;
}

// ---------------------------------------------------------------- scatter

struct ScatterPoint {
    OrthoPoint px;
    Severity severity;
};

inline std::vector<ScatterPoint> event_scatter(std::span<const BrakingEvent> events, const GeoTransform& gt) {
    std::vector<ScatterPoint> out;
    for (const auto& e : events) out.push_back({world_to_pixel(gt, e.mean_position), e.severity});
    return out;
}

// ---------------------------------------------------------------- reports

enum class ReportFormat { csv, json };

inline ReportFormat parse_report_format(std::string_view s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    fail(ErrorCode::validation, "report format must be csv or json");
}

inline const std::vector<std::string>& report_products() {
    static const std::vector<std::string> names{"hourly-counts", "heatmap", "hourly-stats", "rstart-ecdf", "scatter"};
    return names;
}

struct ReportInputs {
    std::vector<BrakingEvent> events;
    Observation observation;
    std::optional<GeoTransform> geotransform;  // scatter only
    DistanceBins bins;
    int hour_from = 7;
    int hour_to = 19;
};

namespace detail {

/// Shortest round-trip decimal form; identical inputs give identical text.
inline std::string num(double v) { return fmt::format("{}", v); }

inline std::string hourly_counts_csv(const HourlyCounts& hc) {
    std::string s = "hour,observed_days,mild,moderate,severe\n";
    for (const auto& r : hc.rows)
        s += fmt::format("{},{},{},{},{}\n", r.hour, r.observed_days, num(r.mean_daily[0]), num(r.mean_daily[1]),
                         num(r.mean_daily[2]));
    return s;
}

inline nlohmann::json hourly_counts_json(const HourlyCounts& hc) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : hc.rows)
        rows.push_back({{"hour", r.hour},
                        {"observed_days", r.observed_days},
                        {"mild", r.mean_daily[0]},
                        {"moderate", r.mean_daily[1]},
                        {"severe", r.mean_daily[2]}});
    return {{"rows", rows}, {"unobserved_events", hc.unobserved_events}};
}

inline std::string heatmap_csv(const HeatmapTable& t) {
    std::string s = "severity";
    for (const auto& c : t.cols) s += "," + c;
    s += ",empty\n";
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        s += t.rows[i];
        for (double v : t.values[i]) s += "," + num(v);
        s += t.empty_rows[i] ? ",true\n" : ",false\n";
    }
    return s;
}

inline nlohmann::json heatmap_json(const HeatmapTable& t) {
    return {{"rows", t.rows}, {"cols", t.cols}, {"values", t.values}, {"counts", t.counts}, {"empty_rows", t.empty_rows}};
}

inline std::string hourly_stats_csv(const HourlyStats& hs) {
    std::string s = "hour,n,mean,min,p25,p50,p75,p90\n";
    for (const auto& r : hs.rows)
        s += fmt::format("{},{},{},{},{},{},{},{}\n", r.hour, r.n, num(r.mean), num(r.min), num(r.p25), num(r.p50),
                         num(r.p75), num(r.p90));
    return s;
}

inline nlohmann::json hourly_stats_json(const HourlyStats& hs) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : hs.rows)
        rows.push_back({{"hour", r.hour}, {"n", r.n}, {"mean", r.mean}, {"min", r.min}, {"p25", r.p25},
                        {"p50", r.p50}, {"p75", r.p75}, {"p90", r.p90}});
    return {{"rows", rows}, {"notes", hs.notes}};
}

inline std::string ecdf_csv(const RstartEcdf& e) {
    std::string s = "r_start,ecdf\n";
    for (std::size_t i = 0; i < e.r.size(); ++i) s += num(e.r[i]) + "," + num(e.F[i]) + "\n";
    return s;
}

inline nlohmann::json ecdf_json(const RstartEcdf& e) { return {{"r_start", e.r}, {"ecdf", e.F}, {"p95", e.p95}}; }

inline std::string scatter_csv(const std::vector<ScatterPoint>& pts) {
    std::string s = "x,y,severity\n";
    for (const auto& p : pts) s += num(p.px.x) + "," + num(p.px.y) + "," + std::string(to_string(p.severity)) + "\n";
    return s;
}

inline nlohmann::json scatter_json(const std::vector<ScatterPoint>& pts) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : pts) arr.push_back({{"x", p.px.x}, {"y", p.px.y}, {"severity", to_string(p.severity)}});
    return {{"points", arr}};
}

}  // namespace detail

/// Renders one reporting product. Events should already be in canonical
/// (t_start, track_id) order; the products themselves are order-free except
/// scatter, which lists events as given.
inline std::string render_report(const std::string& product, const ReportInputs& in, ReportFormat format) {
    using namespace detail;
    const bool csv = format == ReportFormat::csv;
    if (product == "hourly-counts") {
        const auto hc = hourly_counts(in.events, in.observation);
        return csv ? hourly_counts_csv(hc) : hourly_counts_json(hc).dump() + "\n";
    }
    if (product == "heatmap") {
        const auto t = severity_distance_heatmap(in.events, in.bins);
        return csv ? heatmap_csv(t) : heatmap_json(t).dump() + "\n";
    }
    if (product == "hourly-stats") {
        const auto hs = hourly_stats(in.events, in.hour_from, in.hour_to);
        return csv ? hourly_stats_csv(hs) : hourly_stats_json(hs).dump() + "\n";
    }
    if (product == "rstart-ecdf") {
        const auto e = rstart_ecdf(in.events);
        return csv ? ecdf_csv(e) : ecdf_json(e).dump() + "\n";
    }
    if (product == "scatter") {
        if (!in.geotransform) fail(ErrorCode::precondition, "scatter needs the site geotransform");
        const auto pts = event_scatter(in.events, *in.geotransform);
        return csv ? scatter_csv(pts) : scatter_json(pts).dump() + "\n";
    }
    fail(ErrorCode::not_found, "unknown report product: " + product, {{"products", report_products()}});
}

inline void emit_report(const std::string& product, const ReportInputs& in, ReportFormat format,
                        const std::string& path) {
    const std::string text = render_report(product, in, format);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + path);
    out << text;
    if (!out) fail(ErrorCode::io, "short write to " + path);
}

}  // namespace trafficrect
