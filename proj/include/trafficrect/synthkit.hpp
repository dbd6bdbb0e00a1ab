#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "trafficrect/braking.hpp"
#include "trafficrect/correspond.hpp"
#include "trafficrect/homography.hpp"
#include "trafficrect/ortho.hpp"
#include "trafficrect/rng.hpp"
#include "trafficrect/site.hpp"
#include "trafficrect/time.hpp"
#include "trafficrect/tracks.hpp"

namespace trafficrect::synth {

inline constexpr int kFrameWidth = 1920;
inline constexpr int kFrameHeight = 1080;

/// Condition number of H scaled to h33 = 1.
inline double condition_number(const Homography& h) {
    Matrix3 m = h.matrix() / h.matrix()(2, 2);
    Eigen::JacobiSVD<Matrix3> svd(m);
    const auto s = svd.singularValues();
    return s(0) / s(2);
}

/// Random camera-to-ortho ground-plane map. Linear part near a rotation
/// times scale in [0.3, 0.9] (an aerial ortho is usually coarser than the
/// camera near field), translation within +-200 px, perspective terms small
/// enough that w stays above 0.5 over a 1920x1080 frame. Seed 0 is
/// reserved for the identity.
inline Homography gen_homography(std::uint64_t seed) {
    if (seed == 0) return Homography(Matrix3::Identity());
    CounterRng rng(seed, 0x686f6d6fULL);
    const double theta = rng.uniform(-0.5, 0.5);
    const double sx = rng.uniform(0.3, 0.9);
    const double sy = sx * rng.uniform(0.8, 1.25);
    const double shear = rng.uniform(-0.2, 0.2);
    Matrix3 m;
    m << sx * std::cos(theta), -sy * std::sin(theta) + shear, rng.uniform(-200.0, 200.0),  //
        sx * std::sin(theta), sy * std::cos(theta), rng.uniform(-200.0, 200.0),            //
        rng.uniform(-1.0e-4, 1.0e-4), rng.uniform(-2.0e-4, 2.0e-4), 1.0;
    return Homography(m);
}

// ---------------------------------------------------------------- correspondences

struct CorrespondenceFixture {
    std::vector<CorrespondencePair> pairs;  // what an estimator sees
    std::vector<CorrespondencePair> truth;  // noise-free counterparts, same ids
    std::vector<bool> is_inlier;
};

/// n_inliers camera points uniform over the frame mapped through h with
/// Gaussian noise (sigma px, camera side only), followed by n_outliers
/// pairs whose ortho point is displaced by 50 to 300 px. Order is shuffled.
inline CorrespondenceFixture gen_correspondences(const Homography& h, std::size_t n_inliers, double noise_px,
                                                 std::size_t n_outliers, std::uint64_t seed,
                                                 int width = kFrameWidth, int height = kFrameHeight) {
    CounterRng rng(seed, 0x70616972ULL);
    CorrespondenceFixture fx;
    std::vector<std::size_t> order(n_inliers + n_outliers);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    std::vector<CorrespondencePair> pairs(order.size()), truth(order.size());
    std::vector<bool> inl(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        const std::size_t slot = order[k];
        const CameraPoint cam{rng.uniform(0.0, width), rng.uniform(0.0, height)};
        const OrthoPoint ortho = project(h, cam);
        const int id = static_cast<int>(slot) + 1;
        truth[slot] = {id, cam, ortho, std::nullopt};
        if (k < n_inliers) {
            pairs[slot] = {id, {cam.u + rng.normal(0.0, noise_px), cam.v + rng.normal(0.0, noise_px)}, ortho, std::nullopt};
            inl[slot] = true;
        } else {
            const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double dist = rng.uniform(50.0, 300.0);
            pairs[slot] = {id, cam, {ortho.x + dist * std::cos(ang), ortho.y + dist * std::sin(ang)}, std::nullopt};
            inl[slot] = false;
        }
    }
    fx.pairs = std::move(pairs);
    fx.truth = std::move(truth);
    fx.is_inlier = std::move(inl);
    return fx;
}

// ---------------------------------------------------------------- approach scenario

/// Straight approach toward a stop bar: constant speed, then constant
/// deceleration starting brake_at_r meters out, then standing still.
struct ApproachProfile {
    double v0 = 15.0;         // m/s
    double a_brake = 3.0;     // m/s^2, >= 0
    double brake_at_r = 40.0; // m
    double lead_s = 2.0;      // constant-speed time before braking
    double dwell_s = 2.0;     // standing time after stopping

    void validate() const {
        if (!(v0 > 0.0)) fail(ErrorCode::validation, "v0 must be positive");
        if (!(a_brake >= 0.0)) fail(ErrorCode::validation, "a_brake must be non-negative");
        if (!(brake_at_r > 0.0)) fail(ErrorCode::validation, "brake_at_r must be positive");
        if (!(lead_s >= 0.0) || !(dwell_s >= 0.0)) fail(ErrorCode::validation, "lead and dwell must be non-negative");
    }
};

/// Synthetic site: world meters with the stop bar on northing 0 from
/// easting 0 to 10, traffic moving north in the lane at easting 5, and a
/// median along easting 0 (approach lanes on its right). The camera looks
/// down the approach with mild perspective and about 5 mm of ground per
/// camera pixel around the braking zone.
struct ApproachScene {
    Homography h;  // camera -> ortho
    GeoTransform gt;
    SiteAnnotations annotations;
    double lane_easting = 5.0;
    double fps = 30.0;
    double noise_px = 0.0;
    std::uint64_t seed = 42;
    std::string site_id = "synth-site";
    std::string video_id = "synth-video";
    std::string start_time = "2024-03-05T08:15:00-05:00";
    std::string filename = "cam01_20240305_0815.mp4";
};

inline ApproachScene default_approach_scene() {
    ApproachScene s;
    s.gt = {-20.0, 20.0, 0.05, 0.05, "EPSG:32617"};
    // Camera px -> ortho px: 0.1 ortho px (5 mm) per camera px near the
    // bar, slowly coarsening with distance through the perspective row.
    Matrix3 m;
    m << 0.1, 0.0, 0.0,  //
        0.0, 0.1, 0.0,   //
        0.0, -1.0e-5, 1.0;
    s.h = Homography(m);
    s.annotations.stop_bar = {{0.0, 0.0}, {10.0, 0.0}};
    s.annotations.median_line = {{0.0, -300.0}, {0.0, 100.0}};
    s.annotations.analysis_side = AnalysisSide::right;
    return s;
}

inline SiteConfig scene_site_config(const ApproachScene& scene) {
    SiteConfig site;
    site.site_id = scene.site_id;
    site.geotransform = scene.gt;
    site.crs_units = CrsUnits::meters;
    site.annotations = scene.annotations;
    RegistryEntry e;
    e.id = "default";
    e.h = scene.h;
    site.homographies.push_back(e);
    return site;
}

inline VideoMeta scene_video_meta(const ApproachScene& scene) {
    const auto ts = parse_iso8601(scene.start_time);
    return {scene.video_id, ts.epoch_s, ts.utc_offset_s, scene.fps, scene.filename};
}

/// Analytic distance to the bar, approach speed and acceleration at time t
/// (seconds since the first frame). Stops at r = 0 if the vehicle reaches
/// the bar.
struct ApproachState {
    double r = 0.0;
    double v = 0.0;
    double a = 0.0;
};

inline ApproachState approach_state(const ApproachProfile& p, double t) {
    const double r0 = p.brake_at_r + p.v0 * p.lead_s;
    const double t1 = p.lead_s;
    ApproachState s;
    if (t < t1 || p.a_brake == 0.0) {
        s = {r0 - p.v0 * t, p.v0, 0.0};
    } else {
        const double tau = std::min(t - t1, p.v0 / p.a_brake);
        s = {p.brake_at_r - p.v0 * tau + 0.5 * p.a_brake * tau * tau, p.v0 - p.a_brake * tau,
             t - t1 < p.v0 / p.a_brake ? -p.a_brake : 0.0};
    }
    if (s.r <= 0.0) s = {0.0, 0.0, 0.0};
    return s;
}

struct ApproachTruth {
    std::vector<double> t;  // relative to the first frame
    std::vector<double> r;
    std::vector<double> v;
    std::vector<double> a;
    std::vector<WorldPoint> world;
    bool crosses_stop_bar = false;  // braking could not finish before the bar
    double stop_r = 0.0;            // where the vehicle came to rest (or 0)
};

struct ApproachFixture {
    ApproachTruth truth;
    std::vector<Detection> detections;
    VideoMeta meta;
    SiteConfig site;

    std::string detections_ndjson() const {
        std::string out;
        for (const auto& d : detections) out += to_json(d).dump() + "\n";
        return out;
    }
    std::string meta_json() const { return to_json(meta).dump(); }
};

/// Camera-space box around a ground point: nominal 120x80 px scaled by 1/w
/// of the inverse projection as a depth proxy.
inline BBox box_around(const CameraPoint& ground, double w_depth) {
    const double bw = 120.0 / w_depth, bh = 80.0 / w_depth;
    return {ground.u - bw / 2.0, ground.v - bh, bw, bh};
}

/// Renders one vehicle's approach as detections (track_id, class "car").
/// Noise is Gaussian on the camera ground point, drawn from substream
/// track_id of the scene seed.
inline ApproachTruth render_approach(const ApproachProfile& p, const ApproachScene& scene, int track_id,
                                     double lane_easting, std::vector<Detection>& out,
                                     const std::string& class_label = "car") {
    p.validate();
    ApproachTruth truth;
    const double stop_dist = p.a_brake > 0.0 ? p.v0 * p.v0 / (2.0 * p.a_brake) : std::numeric_limits<double>::infinity();
    truth.crosses_stop_bar = p.a_brake > 0.0 && stop_dist > p.brake_at_r;
    truth.stop_r = std::max(0.0, p.brake_at_r - stop_dist);
    const double t_reach = p.lead_s + (p.a_brake > 0.0 && !truth.crosses_stop_bar
                                           ? p.v0 / p.a_brake
                                           : (p.a_brake > 0.0 ? (p.v0 - std::sqrt(p.v0 * p.v0 - 2.0 * p.a_brake * p.brake_at_r)) / p.a_brake
                                                              : p.brake_at_r / p.v0));
    const double t_total = truth.crosses_stop_bar || p.a_brake == 0.0 ? t_reach : t_reach + p.dwell_s;
    const auto frames = static_cast<int>(std::floor(t_total * scene.fps + 1e-9)) + 1;

    CounterRng rng(scene.seed, static_cast<std::uint64_t>(track_id));
    const Homography inv = scene.h.inverse();
    for (int f = 0; f < frames; ++f) {
        const double t = f / scene.fps;
        const ApproachState s = approach_state(p, t);
        const WorldPoint w{lane_easting, -s.r};
        const OrthoPoint o = world_to_pixel(scene.gt, w);
        const HomogeneousPoint hp = homogeneous(inv, CameraPoint{o.x, o.y});
        CameraPoint ground{hp.xt / hp.w, hp.yt / hp.w};
        if (scene.noise_px > 0.0) {
            ground.u += rng.normal(0.0, scene.noise_px);
            ground.v += rng.normal(0.0, scene.noise_px);
        }
        truth.t.push_back(t);
        truth.r.push_back(s.r);
        truth.v.push_back(s.v);
        truth.a.push_back(s.a);
        truth.world.push_back(w);
        out.push_back({scene.video_id, f, track_id, class_label, box_around(ground, std::abs(hp.w)), 0.9});
    }
    return truth;
}

/// Single-vehicle fixture for the braking scenario.
inline ApproachFixture gen_approach(const ApproachProfile& profile, const ApproachScene& scene) {
    ApproachFixture fx;
    fx.truth = render_approach(profile, scene, 1, scene.lane_easting, fx.detections);
    fx.meta = scene_video_meta(scene);
    fx.site = scene_site_config(scene);
    return fx;
}

/// Multi-track fixture: the braking vehicle (track 1), a vehicle passing at
/// constant speed (track 2, starts 1 s later), a pedestrian (track 3,
/// filtered by class) and a short fragment (track 4, below min length).
/// Detections are sorted by frame, then track.
inline ApproachFixture gen_intersection_fixture(const ApproachScene& scene, const ApproachProfile& braking = {}) {
    ApproachFixture fx = gen_approach(braking, scene);
    std::vector<Detection> extra;
    ApproachProfile cruise;
    cruise.v0 = 12.0;
    cruise.a_brake = 0.0;
    cruise.brake_at_r = 30.0;
    render_approach(cruise, scene, 2, scene.lane_easting + 3.0, extra);
    for (auto& d : extra) d.frame_idx += static_cast<int>(scene.fps);
    std::vector<Detection> walker;
    ApproachProfile walk;
    walk.v0 = 1.4;
    walk.a_brake = 0.0;
    walk.brake_at_r = 3.0;
    walk.lead_s = 0.0;
    render_approach(walk, scene, 3, scene.lane_easting + 6.0, walker, "person");
    std::vector<Detection> fragment;
    render_approach(cruise, scene, 4, scene.lane_easting, fragment);
    fragment.resize(5);
    extra.insert(extra.end(), walker.begin(), walker.end());
    extra.insert(extra.end(), fragment.begin(), fragment.end());
    fx.detections.insert(fx.detections.end(), extra.begin(), extra.end());
    std::stable_sort(fx.detections.begin(), fx.detections.end(), [](const Detection& a, const Detection& b) {
        return std::tie(a.frame_idx, a.track_id) < std::tie(b.frame_idx, b.track_id);
    });
    return fx;
}

// ---------------------------------------------------------------- event corpus

/// Seeded events with exactly known hourly tallies and r_start sample.
struct EventCorpus {
    std::vector<BrakingEvent> events;
    int days = 0;
    int tz_offset_s = 0;
    double day0_local_midnight = 0.0;  // epoch of local midnight on day 0
    int hour_from = 7;
    int hour_to = 19;
    /// counts[day][hour][severity] as generated.
    std::vector<std::array<std::array<int, 3>, 24>> counts;
    std::vector<double> r_start_sorted;  // ground-truth sample, ascending

    /// Observation covering every hour in [hour_from, hour_to) on every day.
    std::vector<std::pair<double, double>> observed_spans() const {
        std::vector<std::pair<double, double>> out;
        for (int d = 0; d < days; ++d) {
            const double base = day0_local_midnight + d * 86400.0;
            out.emplace_back(base + hour_from * 3600.0, base + hour_to * 3600.0);
        }
        return out;
    }
};

inline EventCorpus gen_event_corpus(std::uint64_t seed, std::size_t n = 200, int days = 5) {
    CounterRng rng(seed, 0x636f7270ULL);
    EventCorpus c;
    c.days = days;
    c.tz_offset_s = -5 * 3600;
    c.day0_local_midnight = parse_iso8601("2024-03-04T00:00:00-05:00").epoch_s;
    c.counts.assign(static_cast<std::size_t>(days), {});
    const BrakingThresholds th;
    const std::array<double, 4> band{th.mild_lo(), th.moderate_lo(), th.severe_lo(), 6.0};

    // r_start ground truth: strictly increasing centimetre values, then
    // dealt to events in shuffled order.
    std::vector<double> r(n);
    long cm = 200 + static_cast<long>(rng.below(300));
    for (std::size_t i = 0; i < n; ++i) {
        r[i] = static_cast<double>(cm) / 100.0;
        cm += 1 + static_cast<long>(rng.below(70));
    }
    c.r_start_sorted = r;
    for (std::size_t i = n; i > 1; --i) std::swap(r[i - 1], r[rng.below(i)]);

    for (std::size_t i = 0; i < n; ++i) {
        const int day = static_cast<int>(rng.below(static_cast<std::uint64_t>(days)));
        // Peaks around 8 and 17 so hours differ visibly.
        int hour = 0;
        do {
            hour = c.hour_from + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.hour_to - c.hour_from)));
        } while (!(hour == 8 || hour == 17) && rng.uniform() < 0.5);
        const double u = rng.uniform();
        const auto sev = static_cast<std::size_t>(u < 0.6 ? 0 : (u < 0.9 ? 1 : 2));
        ++c.counts[static_cast<std::size_t>(day)][static_cast<std::size_t>(hour)][sev];

        BrakingEvent e;
        e.site_id = "synth-site";
        e.video_id = "corpus-" + std::to_string(day);
        e.track_id = static_cast<int>(i) + 1;
        e.tz_offset_s = c.tz_offset_s;
        e.t_start = c.day0_local_midnight + day * 86400.0 + hour * 3600.0 + std::floor(rng.uniform(0.0, 3590.0));
        e.duration = 0.2 + 0.1 * static_cast<double>(rng.below(40));
        e.t_end = e.t_start + e.duration;
        e.a_bar = rng.uniform(band[sev], band[sev + 1]);
        e.a_robust = e.a_bar + rng.uniform(0.0, 1.0);
        e.peak_decel = e.a_robust + rng.uniform(0.0, 1.0);
        e.r_start = r[i];
        e.mean_position = {5.0, -std::max(0.0, r[i] - 5.0)};
        e.severity = static_cast<Severity>(sev);
        c.events.push_back(e);
    }
    sort_events(c.events);
    return c;
}

}  // namespace trafficrect::synth
