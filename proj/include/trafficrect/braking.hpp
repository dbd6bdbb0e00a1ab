#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "trafficrect/correspond.hpp"
#include "trafficrect/error.hpp"
#include "trafficrect/geometry.hpp"
#include "trafficrect/quantile.hpp"
#include "trafficrect/time.hpp"
#include "trafficrect/tracks.hpp"

namespace trafficrect {

/// Slack for comparing derived magnitudes against band edges; 0.40 * 9.81
/// is not exactly 3.924 in binary.
inline constexpr double kThresholdTolerance = 1e-9;

struct BrakingThresholds {
    double a_trigger = 0.25;         // m/s^2
    double robust_fraction = 0.85;
    double robust_percentile = 5.0;  // percent
    double min_duration = 0.2;       // s
    double g = 9.81;                 // m/s^2
    double mild_g = 0.15;
    double moderate_g = 0.25;
    double severe_g = 0.40;
    double merge_gap = 0.1;  // s
    double dt = 0.1;         // resample step, s

    double mild_lo() const { return mild_g * g; }
    double moderate_lo() const { return moderate_g * g; }
    double severe_lo() const { return severe_g * g; }
    double robust_gate() const { return robust_fraction * a_trigger; }

    void validate() const {
        if (!(a_trigger > 0.0)) fail(ErrorCode::validation, "a_trigger must be positive");
        if (!(min_duration > 0.0)) fail(ErrorCode::validation, "min_duration must be positive");
        if (!(robust_fraction > 0.0)) fail(ErrorCode::validation, "robust_fraction must be positive");
        if (!(robust_percentile >= 0.0 && robust_percentile <= 100.0))
            fail(ErrorCode::validation, "robust_percentile must lie in [0, 100]");
        if (!(g > 0.0)) fail(ErrorCode::validation, "g must be positive");
        if (!(0.0 < mild_lo() && mild_lo() < moderate_lo() && moderate_lo() < severe_lo()))
            fail(ErrorCode::validation, "severity bands must be strictly increasing and positive");
        if (!(merge_gap >= 0.0)) fail(ErrorCode::validation, "merge_gap must be non-negative");
        if (!(dt > 0.0)) fail(ErrorCode::validation, "dt must be positive");
    }
};

inline nlohmann::json to_json(const BrakingThresholds& th) {
    return {{"a_trigger", th.a_trigger},   {"robust_fraction", th.robust_fraction},
            {"robust_percentile", th.robust_percentile}, {"min_duration", th.min_duration},
            {"g", th.g},                   {"mild_g", th.mild_g},
            {"moderate_g", th.moderate_g}, {"severe_g", th.severe_g},
            {"merge_gap", th.merge_gap},   {"dt", th.dt}};
}

/// Overlays any fields present in j onto `base`.
inline BrakingThresholds braking_thresholds_from_json(const nlohmann::json& j, BrakingThresholds base = {}) {
    try {
        for (auto& [key, field] : std::initializer_list<std::pair<const char*, double*>>{
                 {"a_trigger", &base.a_trigger},
                 {"robust_fraction", &base.robust_fraction},
                 {"robust_percentile", &base.robust_percentile},
                 {"min_duration", &base.min_duration},
                 {"g", &base.g},
                 {"mild_g", &base.mild_g},
                 {"moderate_g", &base.moderate_g},
                 {"severe_g", &base.severe_g},
                 {"merge_gap", &base.merge_gap},
                 {"dt", &base.dt}})
            if (j.contains(key)) *field = j.at(key).get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema, std::string("invalid braking thresholds: ") + e.what());
    }
    base.validate();
    return base;
}

enum class Severity { mild, moderate, severe };

inline std::string_view to_string(Severity s) {
    switch (s) {
        case Severity::mild: return "mild";
        case Severity::moderate: return "moderate";
        case Severity::severe: return "severe";
    }
    return "mild";
}

inline Severity parse_severity(std::string_view s) {
    if (s == "mild") return Severity::mild;
    if (s == "moderate") return Severity::moderate;
    if (s == "severe") return Severity::severe;
    fail(ErrorCode::schema, "unknown severity: " + std::string(s));
}

inline constexpr Severity kSeverities[] = {Severity::mild, Severity::moderate, Severity::severe};

/// Closed-lower, open-upper bands on mean deceleration magnitude. Below the
/// mild band there is no class (nullopt).
inline std::optional<Severity> classify_severity(double a_bar, const BrakingThresholds& th) {
    if (!(a_bar >= 0.0)) fail(ErrorCode::validation, "a_bar must be non-negative");
    if (a_bar >= th.severe_lo() - kThresholdTolerance) return Severity::severe;
    if (a_bar >= th.moderate_lo() - kThresholdTolerance) return Severity::moderate;
    if (a_bar >= th.mild_lo() - kThresholdTolerance) return Severity::mild;
    return std::nullopt;
}

// ---------------------------------------------------------------- kinematics

inline double radial_distance(const WorldPoint& p, const Segment& stop_bar) { return distance_to_segment(stop_bar, p); }

/// Uniform series in approach coordinates. t is relative to t0 (epoch s) so
/// differences stay exact; v > 0 approaching, a < 0 braking.
struct KinematicSeries {
    double t0 = 0.0;
    double dt = 0.1;
    std::vector<double> t;
    std::vector<double> r;
    std::vector<double> v;
    std::vector<double> a;
    std::vector<WorldPoint> position;
    double position_lag_s = 0.0;  // smoothing delay of the position signal

    std::size_t size() const noexcept { return t.size(); }
};

/// Derivative on a uniform grid: central differences inside, one-sided at
/// the ends.
inline std::vector<double> gradient(std::span<const double> y, double dt) {
    const std::size_t n = y.size();
    std::vector<double> d(n, 0.0);
    if (n < 2) return d;
    d[0] = (y[1] - y[0]) / dt;
    d[n - 1] = (y[n - 1] - y[n - 2]) / dt;
    for (std::size_t k = 1; k + 1 < n; ++k) d[k] = (y[k + 1] - y[k - 1]) / (2.0 * dt);
    return d;
}

/// Linear interpolation of (ts, ys) at x; ts ascending, x inside its range.
inline double interpolate(std::span<const double> ts, std::span<const double> ys, double x) {
    if (x <= ts.front()) return ys.front();
    if (x >= ts.back()) return ys.back();
    const auto it = std::upper_bound(ts.begin(), ts.end(), x);
    const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
    const std::size_t lo = hi - 1;
    const double f = (x - ts[lo]) / (ts[hi] - ts[lo]);
    return ys[lo] + f * (ys[hi] - ys[lo]);
}

/// Builds the series from samples at relative times `ts` (strictly
/// increasing). Grid points are ts[0] + k * dt up to the last sample.
inline KinematicSeries approach_kinematics(std::span<const double> ts, std::span<const double> rs,
                                           std::span<const WorldPoint> positions, double dt, double t0 = 0.0) {
    if (ts.size() != rs.size() || (!positions.empty() && positions.size() != ts.size()))
        fail(ErrorCode::precondition, "kinematic inputs differ in length");
    if (ts.size() < 2) fail(ErrorCode::precondition, "kinematics needs at least 2 samples");
    for (std::size_t k = 1; k < ts.size(); ++k)
        if (!(ts[k] > ts[k - 1])) fail(ErrorCode::precondition, "sample times must be strictly increasing");

    KinematicSeries ks;
    ks.t0 = t0 + ts.front();
    ks.dt = dt;
    const double span = ts.back() - ts.front();
    const auto steps = static_cast<std::size_t>(std::floor(span / dt + 1e-9));
    std::vector<double> xs, ys;
    for (const auto& p : positions) {
        xs.push_back(p.easting);
        ys.push_back(p.northing);
    }
    for (std::size_t k = 0; k <= steps; ++k) {
        const double rel = static_cast<double>(k) * dt;
        const double x = ts.front() + rel;
        ks.t.push_back(rel);
        ks.r.push_back(interpolate(ts, rs, x));
        if (!positions.empty()) ks.position.push_back({interpolate(ts, xs, x), interpolate(ts, ys, x)});
    }
    ks.v = gradient(ks.r, dt);
    for (double& v : ks.v) v = -v;
    ks.a = gradient(ks.v, dt);
    return ks;
}

struct KinematicsOutcome {
    std::optional<KinematicSeries> series;
    std::string skip_reason;
    std::size_t truncated_points = 0;  // points after the first stop-bar crossing
};

/// Radial distance, approach speed and acceleration of a world trajectory.
/// Only the part before the first crossing of the stop-bar line is used:
/// past the bar r grows again and its kink would read as hard braking.
inline KinematicsOutcome kinematics(const Trajectory& traj, const SiteAnnotations& annotations, double dt = 0.1) {
    KinematicsOutcome out;
    const auto& pts = traj.points;
    const Segment& bar = annotations.stop_bar;
    std::size_t n = pts.size();
    if (n > 0) {
        const double side0 = cross(bar, pts[0].world);
        for (std::size_t k = 1; k < n; ++k) {
            const double s = cross(bar, pts[k].world);
            if ((side0 > 0.0 && s <= 0.0) || (side0 < 0.0 && s >= 0.0)) {
                out.truncated_points = n - k;
                n = k;
                break;
            }
        }
    }
    if (n < 5) {
        out.skip_reason = "fewer than 5 points before the stop bar";
        return out;
    }
    const double span = pts[n - 1].t - pts[0].t;
    if (span < 3.0 * dt - 1e-9) {
        out.skip_reason = "trajectory spans less than 3 resample steps";
        return out;
    }
    std::vector<double> ts, rs;
    std::vector<WorldPoint> pos;
    const double t0 = pts[0].t;
    for (std::size_t k = 0; k < n; ++k) {
        ts.push_back(pts[k].t - t0);
        rs.push_back(radial_distance(pts[k].world, bar));
        pos.push_back(pts[k].world);
    }
    out.series = approach_kinematics(ts, rs, pos, dt, t0);
    if (traj.smoothed && traj.ema_alpha < 1.0 && n >= 2) {
        // Steady-state delay of the recursive smoother, one frame interval per (1 - a) / a.
        const double frame_dt = span / static_cast<double>(n - 1);
        out.series->position_lag_s = (1.0 - traj.ema_alpha) / traj.ema_alpha * frame_dt;
    }
    return out;
}

// ---------------------------------------------------------------- events

/// 5th-percentile (by default) approach acceleration of a window, signed.
inline double robust_decel(std::span<const double> window, double percentile = 5.0) {
    if (window.empty()) fail(ErrorCode::precondition, "robust_decel of an empty window");
    return quantile(window, percentile / 100.0);
}

/// Half-open index range [begin, end) into a KinematicSeries.
struct CandidateWindow {
    std::size_t begin = 0;
    std::size_t end = 0;
    friend bool operator==(const CandidateWindow&, const CandidateWindow&) = default;
};

/// Time just past the last sample of a window: the next sample, or one step
/// beyond the series end.
inline double window_end_time(const KinematicSeries& k, std::size_t end) {
    if (end < k.size()) return k.t[end];
    const double step = k.size() >= 2 ? k.t[k.size() - 1] - k.t[k.size() - 2] : k.dt;
    return k.t.back() + step;
}

/// Maximal runs with a < -a_trigger. Runs whose non-braking gap is shorter
/// than merge_gap are joined.
inline std::vector<CandidateWindow> detect_events(const KinematicSeries& k, const BrakingThresholds& th) {
    std::vector<CandidateWindow> runs;
    const std::size_t n = k.a.size();
    for (std::size_t i = 0; i < n;) {
        if (!(k.a[i] < -th.a_trigger)) {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < n && k.a[j] < -th.a_trigger) ++j;
        runs.push_back({i, j});
        i = j;
    }
    std::vector<CandidateWindow> merged;
    for (const auto& w : runs) {
        if (!merged.empty()) {
            const double gap = k.t[w.begin] - k.t[merged.back().end];
            if (gap < th.merge_gap - kThresholdTolerance) {
                merged.back().end = w.end;
                continue;
            }
        }
        merged.push_back(w);
    }
    return merged;
}

struct BrakingEvent {
    std::string site_id;
    std::string video_id;
    int track_id = 0;
    double t_start = 0.0;  // epoch s
    double t_end = 0.0;
    double duration = 0.0;
    double a_bar = 0.0;
    double a_robust = 0.0;
    double r_start = 0.0;
    WorldPoint mean_position;
    Severity severity = Severity::mild;
    double peak_decel = 0.0;
    int tz_offset_s = 0;
    friend bool operator==(const BrakingEvent&, const BrakingEvent&) = default;
};

enum class RejectReason { duration, robust_gate, sub_mild };

inline std::string_view to_string(RejectReason r) {
    switch (r) {
        case RejectReason::duration: return "duration";
        case RejectReason::robust_gate: return "robust_gate";
        case RejectReason::sub_mild: return "sub_mild";
    }
    return "duration";
}

struct Rejection {
    RejectReason reason;
    CandidateWindow window;
    double value = 0.0;  // the quantity that failed its gate
};

/// Applies the duration and robust-deceleration gates to a candidate and
/// fills in the event measures. Onset distance is corrected for the
/// smoothing lag recorded on the series.
inline std::variant<BrakingEvent, Rejection> validate_event(const CandidateWindow& w, const KinematicSeries& k,
                                                            const BrakingThresholds& th) {
    if (w.begin >= w.end || w.end > k.size()) fail(ErrorCode::precondition, "candidate window out of range");
    const double duration = window_end_time(k, w.end) - k.t[w.begin];
    if (duration < th.min_duration - kThresholdTolerance) return Rejection{RejectReason::duration, w, duration};

    const std::span<const double> a(k.a.data() + w.begin, w.end - w.begin);
    const double robust = robust_decel(a, th.robust_percentile);
    if (std::abs(robust) < th.robust_gate() - kThresholdTolerance || robust > 0.0)
        return Rejection{RejectReason::robust_gate, w, robust};

    double sum = 0.0, peak = 0.0;
    for (double x : a) {
        sum += x;
        peak = std::min(peak, x);
    }
    const double a_bar = std::abs(sum / static_cast<double>(a.size()));
    const auto severity = classify_severity(a_bar, th);
    if (!severity) return Rejection{RejectReason::sub_mild, w, a_bar};

    BrakingEvent ev;
    ev.t_start = k.t0 + k.t[w.begin];
    ev.duration = duration;
    ev.t_end = ev.t_start + duration;
    ev.a_bar = a_bar;
    ev.a_robust = std::abs(robust);
    ev.r_start = std::max(0.0, k.r[w.begin] - k.v[w.begin] * k.position_lag_s);
    if (!k.position.empty()) {
        double e = 0.0, nn = 0.0;
        for (std::size_t i = w.begin; i < w.end; ++i) {
            e += k.position[i].easting;
            nn += k.position[i].northing;
        }
        const auto cnt = static_cast<double>(w.end - w.begin);
        ev.mean_position = {e / cnt, nn / cnt};
    }
    ev.severity = *severity;
    ev.peak_decel = std::abs(peak);
    return ev;
}

struct TrajectoryAnalysis {
    std::vector<BrakingEvent> events;
    std::vector<Rejection> rejections;
    std::string skip_reason;
};

inline TrajectoryAnalysis analyze_trajectory(const Trajectory& traj, const SiteAnnotations& annotations,
                                             const BrakingThresholds& th, int tz_offset_s = 0) {
    TrajectoryAnalysis out;
    const auto kin = kinematics(traj, annotations, th.dt);
    if (!kin.series) {
        out.skip_reason = kin.skip_reason;
        return out;
    }
    for (const auto& w : detect_events(*kin.series, th)) {
        auto res = validate_event(w, *kin.series, th);
        if (auto* ev = std::get_if<BrakingEvent>(&res)) {
            ev->video_id = traj.video_id;
            ev->track_id = traj.track_id;
            ev->tz_offset_s = tz_offset_s;
            out.events.push_back(*ev);
        } else {
            out.rejections.push_back(std::get<Rejection>(res));
        }
    }
    return out;
}

inline void sort_events(std::vector<BrakingEvent>& events) {
    std::stable_sort(events.begin(), events.end(), [](const BrakingEvent& a, const BrakingEvent& b) {
        if (a.t_start != b.t_start) return a.t_start < b.t_start;
        if (a.track_id != b.track_id) return a.track_id < b.track_id;
        return a.video_id < b.video_id;
    });
}

// ---------------------------------------------------------------- JSON

/// One NDJSON record. Times appear both as ISO-8601 in the site's offset
/// and as epoch seconds; the epoch fields are authoritative on read.
inline nlohmann::json to_json(const BrakingEvent& e) {
    return {{"site_id", e.site_id},
            {"video_id", e.video_id},
            {"track_id", e.track_id},
            {"t_start", format_iso8601(e.t_start, e.tz_offset_s)},
            {"t_end", format_iso8601(e.t_end, e.tz_offset_s)},
            {"t_start_epoch", e.t_start},
            {"t_end_epoch", e.t_end},
            {"tz_offset_s", e.tz_offset_s},
            {"duration", e.duration},
            {"a_bar", e.a_bar},
            {"a_robust", e.a_robust},
            {"peak_decel", e.peak_decel},
            {"r_start", e.r_start},
            {"mean_easting", e.mean_position.easting},
            {"mean_northing", e.mean_position.northing},
            {"severity", to_string(e.severity)}};
}

inline BrakingEvent braking_event_from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorCode::schema, "event must be a JSON object");
    for (const char* key : {"video_id", "track_id", "t_start_epoch", "duration", "a_bar", "a_robust", "r_start",
                            "mean_easting", "mean_northing", "severity", "peak_decel"})
        if (!j.contains(key) || j.at(key).is_null()) fail(ErrorCode::schema, std::string("event is missing ") + key);
    BrakingEvent e;
    try {
        e.site_id = j.value("site_id", "");
        e.video_id = j.at("video_id").get<std::string>();
        e.track_id = j.at("track_id").get<int>();
        e.tz_offset_s = j.value("tz_offset_s", 0);
        e.t_start = j.at("t_start_epoch").get<double>();
        e.duration = j.at("duration").get<double>();
        e.t_end = j.contains("t_end_epoch") ? j.at("t_end_epoch").get<double>() : e.t_start + e.duration;
        e.a_bar = j.at("a_bar").get<double>();
        e.a_robust = j.at("a_robust").get<double>();
        e.peak_decel = j.at("peak_decel").get<double>();
        e.r_start = j.at("r_start").get<double>();
        e.mean_position = {j.at("mean_easting").get<double>(), j.at("mean_northing").get<double>()};
        e.severity = parse_severity(j.at("severity").get<std::string>());
    } catch (const nlohmann::json::exception& ex) {
        fail(ErrorCode::schema, std::string("invalid event: ") + ex.what());
    }
    if (e.r_start < 0.0) fail(ErrorCode::schema, "r_start must be non-negative");
    return e;
}

}  // namespace trafficrect
