#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trafficrect/error.hpp"
#include "trafficrect/geometry.hpp"
#include "trafficrect/homography.hpp"
#include "trafficrect/ortho.hpp"
#include "trafficrect/time.hpp"

namespace trafficrect {

struct BBox {
    double x = 0.0;  // top-left, px
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
    friend bool operator==(const BBox&, const BBox&) = default;
};

struct Detection {
    std::string video_id;
    int frame_idx = 0;
    int track_id = 0;
    std::string class_label;
    BBox bbox;
    double confidence = 0.0;
    friend bool operator==(const Detection&, const Detection&) = default;
};

struct LineError {
    std::size_t line = 0;  // 1-based
    std::string message;
};

struct ParsedDetections {
    std::vector<Detection> detections;
    std::vector<LineError> errors;
    bool ok() const noexcept { return errors.empty(); }
};

inline nlohmann::json to_json(const Detection& d) {
    return {{"video_id", d.video_id},
            {"frame", d.frame_idx},
            {"track_id", d.track_id},
            {"class", d.class_label},
            {"bbox", {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h}},
            {"conf", d.confidence}};
}

inline Detection detection_from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorCode::schema, "detection must be a JSON object");
    Detection d;
    try {
        d.video_id = j.at("video_id").get<std::string>();
        d.frame_idx = j.at("frame").get<int>();
        d.track_id = j.at("track_id").get<int>();
        d.class_label = j.at("class").get<std::string>();
        const auto& b = j.at("bbox");
        if (!b.is_array() || b.size() != 4) fail(ErrorCode::schema, "bbox must be [x, y, w, h]");
        d.bbox = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
        d.confidence = j.at("conf").get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema, e.what());
    }
    if (d.frame_idx < 0) fail(ErrorCode::validation, "frame must be >= 0");
    if (!(d.bbox.w > 0.0) || !(d.bbox.h > 0.0)) fail(ErrorCode::validation, "bbox width and height must be positive");
    if (!std::isfinite(d.bbox.x) || !std::isfinite(d.bbox.y) || !std::isfinite(d.bbox.w) || !std::isfinite(d.bbox.h))
        fail(ErrorCode::validation, "bbox must be finite");
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) fail(ErrorCode::validation, "conf must lie in [0, 1]");
    return d;
}

/// Reads detection NDJSON. Bad lines are collected with their 1-based line
/// number; in strict mode the first one throws instead. Blank lines are
/// skipped.
inline ParsedDetections parse_detections(std::istream& in, bool strict = false) {
    ParsedDetections out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error& e) {
                fail(ErrorCode::parse, e.what());
            }
            out.detections.push_back(detection_from_json(j));
        } catch (const Error& e) {
            if (strict) fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": " + e.what(), {{"line", lineno}});
            out.errors.push_back({lineno, e.what()});
        }
    }
    return out;
}

inline ParsedDetections parse_detections(const std::string& text, bool strict = false) {
    std::istringstream in(text);
    return parse_detections(in, strict);
}

inline nlohmann::json to_json(const std::vector<LineError>& errors) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : errors) arr.push_back({{"line", e.line}, {"message", e.message}});
    return arr;
}

/// Wheel-contact point: bottom-center of the box.
inline CameraPoint ground_point(const Detection& d) { return {d.bbox.x + d.bbox.w / 2.0, d.bbox.y + d.bbox.h}; }

// ---------------------------------------------------------------- video metadata

struct VideoMeta {
    std::string video_id;
    double start_time = 0.0;  // epoch seconds
    int tz_offset_s = 0;      // UTC offset the start time was written with
    double fps = 30.0;
    std::string filename;

    void validate() const {
        if (!(fps > 0.0) || !std::isfinite(fps)) fail(ErrorCode::validation, "fps must be positive");
        if (video_id.empty()) fail(ErrorCode::validation, "video_id must not be empty");
    }

    VideoClock clock() const { return {start_time, tz_offset_s, filename}; }
};

inline nlohmann::json to_json(const VideoMeta& m) {
    return {{"video_id", m.video_id},
            {"start_time", format_iso8601(m.start_time, m.tz_offset_s)},
            {"fps", m.fps},
            {"filename", m.filename}};
}

inline VideoMeta video_meta_from_json(const nlohmann::json& j) {
    VideoMeta m;
    try {
        m.video_id = j.at("video_id").get<std::string>();
        const auto ts = parse_iso8601(j.at("start_time").get<std::string>());
        m.start_time = ts.epoch_s;
        m.tz_offset_s = ts.utc_offset_s;
        m.fps = j.at("fps").get<double>();
        m.filename = j.value("filename", "");
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema, std::string("invalid video metadata: ") + e.what());
    }
    m.validate();
    return m;
}

inline VideoMeta parse_video_meta(const std::string& text) {
    try {
        return video_meta_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::parse, std::string("video metadata is not valid JSON: ") + e.what());
    }
}

inline double anchor_timestamp(int frame_idx, const VideoMeta& meta) {
    if (!(meta.fps > 0.0)) fail(ErrorCode::validation, "fps must be positive");
    return meta.start_time + frame_idx / meta.fps;
}

// ---------------------------------------------------------------- trajectories

struct TrackPoint {
    double t = 0.0;  // epoch seconds
    int frame_idx = 0;
    CameraPoint cam;
    OrthoPoint ortho;
    WorldPoint world;
    friend bool operator==(const TrackPoint&, const TrackPoint&) = default;
};

struct Trajectory {
    int track_id = 0;
    std::string video_id;
    std::string class_label;
    std::vector<TrackPoint> points;
    bool smoothed = false;
    double ema_alpha = 1.0;  // 1 means unsmoothed
    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

inline const std::set<std::string>& default_vehicle_classes() {
    static const std::set<std::string> classes{"car", "truck", "bus", "motorcycle"};
    return classes;
}

struct AssemblyReport {
    std::size_t input_detections = 0;
    std::size_t duplicates_dropped = 0;
    std::size_t class_dropped = 0;   // detections in tracks outside the class filter
    std::size_t short_dropped = 0;   // detections in tracks below min_len
    std::size_t tracks_kept = 0;
    std::size_t points_kept = 0;
    std::vector<std::string> warnings;
};

struct AssembledTracks {
    std::vector<Trajectory> trajectories;
    AssemblyReport report;
};

/// Groups detections into per-track, frame-ordered trajectories with camera
/// ground points and anchored timestamps. Duplicate (track, frame) rows keep
/// the most confident box (first seen on ties). A track's class is the label
/// of its highest-confidence detection.
inline AssembledTracks assemble_tracks(std::span<const Detection> detections, const VideoMeta& meta,
                                       std::size_t min_len = 10,
                                       const std::set<std::string>& allowed_classes = default_vehicle_classes()) {
    meta.validate();
    AssembledTracks out;
    auto& rep = out.report;
    rep.input_detections = detections.size();

    std::map<int, std::map<int, const Detection*>> groups;
    for (const auto& d : detections) {
        if (d.video_id != meta.video_id)
            fail(ErrorCode::validation, "detection video_id does not match metadata",
                 {{"expected", meta.video_id}, {"got", d.video_id}});
        auto& slot = groups[d.track_id][d.frame_idx];
        if (!slot) {
            slot = &d;
            continue;
        }
        ++rep.duplicates_dropped;
        rep.warnings.push_back("duplicate detection for track " + std::to_string(d.track_id) + " frame " +
                               std::to_string(d.frame_idx));
        if (d.confidence > slot->confidence) slot = &d;
    }

    for (const auto& [track_id, frames] : groups) {
        const Detection* best = nullptr;
        for (const auto& [frame, d] : frames)
            if (!best || d->confidence > best->confidence) best = d;
        if (!allowed_classes.contains(best->class_label)) {
            rep.class_dropped += frames.size();
            continue;
        }
        if (frames.size() < std::max<std::size_t>(min_len, 2)) {
            rep.short_dropped += frames.size();
            continue;
        }
        Trajectory traj{track_id, meta.video_id, best->class_label, {}, false, 1.0};
        traj.points.reserve(frames.size());
        for (const auto& [frame, d] : frames) {
            TrackPoint p;
            p.t = anchor_timestamp(frame, meta);
            p.frame_idx = frame;
            p.cam = ground_point(*d);
            traj.points.push_back(p);
        }
        rep.points_kept += traj.points.size();
        out.trajectories.push_back(std::move(traj));
    }
    rep.tracks_kept = out.trajectories.size();
    return out;
}

/// First-order recursive smoother over a scalar series.
inline std::vector<double> ema(std::span<const double> values, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) fail(ErrorCode::validation, "EMA alpha must lie in (0, 1]");
    std::vector<double> out(values.size());
    for (std::size_t k = 0; k < values.size(); ++k)
        out[k] = k == 0 ? values[0] : alpha * values[k] + (1.0 - alpha) * out[k - 1];
    return out;
}

/// Smooths camera ground points, each coordinate independently.
inline Trajectory ema_smooth(Trajectory traj, double alpha) {
    std::vector<double> u, v;
    for (const auto& p : traj.points) {
        u.push_back(p.cam.u);
        v.push_back(p.cam.v);
    }
    const auto su = ema(u, alpha), sv = ema(v, alpha);
    for (std::size_t k = 0; k < traj.points.size(); ++k) traj.points[k].cam = {su[k], sv[k]};
    traj.smoothed = alpha < 1.0;
    traj.ema_alpha = alpha;
    return traj;
}

struct WorldProjection {
    std::optional<Trajectory> trajectory;  // empty when rejected
    std::size_t horizon_drops = 0;
    std::string diagnostic;
};

/// Camera -> ortho pixel -> world for every point. Points at the horizon
/// are dropped and counted; more than half dropped rejects the trajectory.
inline WorldProjection to_world(Trajectory traj, const Homography& h, const GeoTransform& gt) {
    WorldProjection out;
    const std::size_t n = traj.points.size();
    std::vector<TrackPoint> kept;
    kept.reserve(n);
    for (auto p : traj.points) {
        try {
            p.ortho = project(h, p.cam);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::horizon) throw;
            ++out.horizon_drops;
            continue;
        }
        p.world = pixel_to_world(gt, p.ortho);
        kept.push_back(p);
    }
    if (2 * out.horizon_drops > n || kept.size() < 2) {
        out.diagnostic = "track " + std::to_string(traj.track_id) + ": " + std::to_string(out.horizon_drops) + " of " +
                         std::to_string(n) + " points hit the horizon";
        return out;
    }
    traj.points = std::move(kept);
    out.trajectory = std::move(traj);
    return out;
}

/// Snaps runs of near-stationary points onto an anchor. Starting at each
/// unclamped point, if every point within `window_s` stays within `radius_m`
/// of it, that window (and any following points still within radius) is
/// replaced by the anchor. Ortho coordinates follow via the geotransform.
inline Trajectory stationary_clamp(Trajectory traj, const GeoTransform& gt, double window_s = 1.0,
                                   double radius_m = 0.5) {
    auto& pts = traj.points;
    const std::size_t n = pts.size();
    std::size_t i = 0;
    while (i < n) {
        const WorldPoint anchor = pts[i].world;
        std::size_t j = i + 1;
        bool still = true;
        while (j < n && pts[j].t - pts[i].t <= window_s + 1e-9) {
            if (distance(pts[j].world, anchor) > radius_m) {
                still = false;
                break;
            }
            ++j;
        }
        const bool window_full = j < n ? pts[j].t - pts[i].t > window_s : pts[n - 1].t - pts[i].t >= window_s - 1e-9;
        if (!still || !window_full || j == i + 1) {
            ++i;
            continue;
        }
        while (j < n && distance(pts[j].world, anchor) <= radius_m) ++j;
        const OrthoPoint anchor_px = world_to_pixel(gt, anchor);
        for (std::size_t k = i + 1; k < j; ++k) {
            pts[k].world = anchor;
            pts[k].ortho = anchor_px;
        }
        i = j;
    }
    return traj;
}

// ---------------------------------------------------------------- JSON

/// Columnar encoding of the points (t[], x[], y[] in world meters). Camera
/// and ortho coordinates are not persisted.
inline nlohmann::json points_blob(const Trajectory& traj) {
    nlohmann::json t = nlohmann::json::array(), x = nlohmann::json::array(), y = nlohmann::json::array();
    for (const auto& p : traj.points) {
        t.push_back(p.t);
        x.push_back(p.world.easting);
        y.push_back(p.world.northing);
    }
    return {{"t", t}, {"x", x}, {"y", y}};
}

}  // namespace trafficrect
