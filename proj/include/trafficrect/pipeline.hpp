#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "trafficrect/analytics.hpp"
#include "trafficrect/braking.hpp"
#include "trafficrect/error.hpp"
#include "trafficrect/site.hpp"
#include "trafficrect/store.hpp"
#include "trafficrect/tracks.hpp"

namespace trafficrect {

struct PipelineOptions {
    double ema_alpha = 0.3;
    std::size_t min_track_len = 10;
    std::set<std::string> classes = default_vehicle_classes();
    double clamp_window_s = 1.0;
    double clamp_radius_m = 0.5;
    BrakingThresholds thresholds;
    bool strict_parse = false;

    void validate() const {
        if (!(ema_alpha > 0.0 && ema_alpha <= 1.0)) fail(ErrorCode::validation, "ema_alpha must lie in (0, 1]");
        if (!(clamp_window_s > 0.0) || !(clamp_radius_m >= 0.0))
            fail(ErrorCode::validation, "stationary clamp window must be positive and radius non-negative");
        thresholds.validate();
    }
};

inline nlohmann::json to_json(const PipelineOptions& o) {
    return {{"ema_alpha", o.ema_alpha},
            {"min_track_len", o.min_track_len},
            {"classes", o.classes},
            {"clamp_window_s", o.clamp_window_s},
            {"clamp_radius_m", o.clamp_radius_m},
            {"thresholds", to_json(o.thresholds)},
            {"strict_parse", o.strict_parse}};
}

inline PipelineOptions pipeline_options_from_json(const nlohmann::json& j, PipelineOptions base = {}) {
    try {
        if (j.contains("ema_alpha")) base.ema_alpha = j.at("ema_alpha").get<double>();
        if (j.contains("min_track_len")) base.min_track_len = j.at("min_track_len").get<std::size_t>();
        if (j.contains("classes")) base.classes = j.at("classes").get<std::set<std::string>>();
        if (j.contains("clamp_window_s")) base.clamp_window_s = j.at("clamp_window_s").get<double>();
        if (j.contains("clamp_radius_m")) base.clamp_radius_m = j.at("clamp_radius_m").get<double>();
        if (j.contains("strict_parse")) base.strict_parse = j.at("strict_parse").get<bool>();
        if (j.contains("thresholds")) base.thresholds = braking_thresholds_from_json(j.at("thresholds"), base.thresholds);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema, std::string("invalid pipeline options: ") + e.what());
    }
    base.validate();
    return base;
}

struct VideoResult {
    VideoRecord video;
    std::vector<StoredTrajectory> trajectories;
    std::vector<BrakingEvent> events;
    AssemblyReport assembly;
    std::size_t horizon_drops = 0;
    std::size_t rejected_tracks = 0;     // more than half the points at the horizon
    std::size_t other_side_tracks = 0;   // outside the analyzed side of the median
    std::size_t skipped_tracks = 0;      // too short for kinematics
    std::map<std::string, std::size_t> rejections;  // candidate gate failures by reason
    std::vector<std::string> warnings;

    nlohmann::json summary() const {
        return {{"video_id", video.video_id},
                {"trajectories", trajectories.size()},
                {"events", events.size()},
                {"homography_id", video.homography_id},
                {"diagnostics",
                 {{"detections", assembly.input_detections},
                  {"duplicates_dropped", assembly.duplicates_dropped},
                  {"class_dropped", assembly.class_dropped},
                  {"short_dropped", assembly.short_dropped},
                  {"horizon_drops", horizon_drops},
                  {"rejected_tracks", rejected_tracks},
                  {"other_side_tracks", other_side_tracks},
                  {"skipped_tracks", skipped_tracks},
                  {"rejections", rejections}}}};
    }
};

/// Majority side of the median over a trajectory's points.
inline bool on_analyzed_side(const Trajectory& traj, const SiteAnnotations& ann) {
    if (ann.analysis_side == AnalysisSide::both) return true;
    const MedianSide want = ann.analysis_side == AnalysisSide::left ? MedianSide::left : MedianSide::right;
    std::size_t yes = 0, no = 0;
    for (const auto& p : traj.points) {
        const MedianSide s = side_of_median(ann, p.world);
        if (s == want)
            ++yes;
        else if (s != MedianSide::on)
            ++no;
    }
    return yes > no;
}

/// One video through the whole chain: assemble, smooth in camera space,
/// project to world meters, clamp stationary drift, then kinematics and
/// event gates on the analyzed side. Pure; nothing is persisted.
inline VideoResult process_video(const SiteConfig& site, std::span<const Detection> detections, const VideoMeta& meta,
                                 const PipelineOptions& opt) {
    opt.validate();
    meta.validate();
    if (!site.annotations) fail(ErrorCode::configuration, "site " + site.site_id + " has no stop bar / median annotations");
    const SiteAnnotations& ann = *site.annotations;
    const GeoTransform gt = site.metric_geotransform();
    const RegistryEntry& entry = select_homography(site.homographies, meta.clock());

    VideoResult out;
    int max_frame = 0;
    for (const auto& d : detections) max_frame = std::max(max_frame, d.frame_idx);
    out.video = {site.site_id,
                 meta.video_id,
                 meta.filename,
                 meta.start_time,
                 meta.start_time + (detections.empty() ? 0.0 : (max_frame + 1) / meta.fps),
                 meta.tz_offset_s,
                 entry.id};

    auto assembled = assemble_tracks(detections, meta, opt.min_track_len, opt.classes);
    out.assembly = assembled.report;
    out.warnings = assembled.report.warnings;

    for (auto& traj : assembled.trajectories) {
        auto projected = to_world(ema_smooth(std::move(traj), opt.ema_alpha), entry.h, gt);
        out.horizon_drops += projected.horizon_drops;
        if (!projected.trajectory) {
            ++out.rejected_tracks;
            out.warnings.push_back(projected.diagnostic);
            continue;
        }
        const Trajectory world = stationary_clamp(std::move(*projected.trajectory), gt, opt.clamp_window_s, opt.clamp_radius_m);
        out.trajectories.push_back(stored_trajectory(site.site_id, world));
        if (!on_analyzed_side(world, ann)) {
            ++out.other_side_tracks;
            continue;
        }
        auto analysis = analyze_trajectory(world, ann, opt.thresholds, meta.tz_offset_s);
        if (!analysis.skip_reason.empty()) ++out.skipped_tracks;
        for (const auto& r : analysis.rejections) ++out.rejections[std::string(to_string(r.reason))];
        for (auto& ev : analysis.events) {
            ev.site_id = site.site_id;
            out.events.push_back(std::move(ev));
        }
    }
    sort_events(out.events);
    return out;
}

struct IngestOutcome {
    VideoResult result;
    bool changed = false;
};

/// Parses, processes and stores one video. Parse errors abort before any
/// processing so a bad upload never half-ingests.
inline IngestOutcome ingest_video(Store& store, const SiteConfig& site, const std::string& detections_ndjson,
                                  const VideoMeta& meta, const PipelineOptions& opt) {
    const auto parsed = parse_detections(detections_ndjson, opt.strict_parse);
    if (!parsed.ok())
        fail(ErrorCode::parse, std::to_string(parsed.errors.size()) + " malformed detection line(s)",
             {{"errors", to_json(parsed.errors)}});
    IngestOutcome out;
    out.result = process_video(site, parsed.detections, meta, opt);
    out.changed = store.replace_video(out.result.video, out.result.trajectories, out.result.events);
    return out;
}

/// Observation cells from stored video spans.
inline Observation observation_from_videos(std::span<const VideoRecord> videos) {
    Observation obs;
    for (const auto& v : videos) obs.add_interval(v.t_begin, v.t_end, v.tz_offset_s);
    return obs;
}

}  // namespace trafficrect
