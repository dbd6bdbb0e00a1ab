#include <chrono>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "trafficrect/pipeline.hpp"
#include "trafficrect/synthkit.hpp"

using namespace trafficrect;

namespace {

struct ScenarioRun {
    synth::ApproachFixture fixture;
    VideoResult result;
};

ScenarioRun run_scenario(double noise_px, std::uint64_t seed, const synth::ApproachProfile& profile = {},
                         const PipelineOptions& opt = {}) {
    auto scene = synth::default_approach_scene();
    scene.noise_px = noise_px;
    scene.seed = seed;
    ScenarioRun run{synth::gen_approach(profile, scene), {}};
    run.result = process_video(run.fixture.site, run.fixture.detections, run.fixture.meta, opt);
    return run;
}

}  // namespace

TEST(GenHomography, SeededAndIdentityAtZero) {
    EXPECT_EQ(synth::gen_homography(17), synth::gen_homography(17));
    EXPECT_FALSE(synth::gen_homography(17) == synth::gen_homography(18));
    EXPECT_EQ(synth::gen_homography(0), Homography(Matrix3::Identity()));
}

TEST(GenHomography, ConditionBoundOverSeeds) {
    for (std::uint64_t s = 1; s <= 1000; ++s) {
        const Homography h = synth::gen_homography(s);
        const Matrix3 n = h.matrix() / h.matrix()(2, 2);
        ASSERT_LE(std::abs(n(2, 0)), 1e-3) << s;
        ASSERT_LE(std::abs(n(2, 1)), 1e-3) << s;
        for (double u : {0.0, double(synth::kFrameWidth)})
            for (double v : {0.0, double(synth::kFrameHeight)}) ASSERT_GT(n(2, 0) * u + n(2, 1) * v + 1.0, 0.5) << s;
        const Eigen::JacobiSVD<Eigen::Matrix2d> svd(n.topLeftCorner<2, 2>());
        ASSERT_GT(svd.singularValues()(1), 0.0) << s;
    }
}

TEST(GenCorrespondences, ShapesAndTruth) {
    const Homography h = synth::gen_homography(5);
    const auto fx = synth::gen_correspondences(h, 20, 0.5, 8, 5);
    ASSERT_EQ(fx.pairs.size(), 28u);
    std::size_t inliers = 0;
    for (std::size_t i = 0; i < fx.pairs.size(); ++i) {
        EXPECT_EQ(fx.pairs[i].id, int(i) + 1);
        EXPECT_EQ(fx.truth[i].ortho, project(h, fx.truth[i].cam));
        if (fx.is_inlier[i]) {
            ++inliers;
            EXPECT_EQ(fx.pairs[i].ortho, fx.truth[i].ortho);
        } else {
            const double d = std::hypot(fx.pairs[i].ortho.x - fx.truth[i].ortho.x, fx.pairs[i].ortho.y - fx.truth[i].ortho.y);
            EXPECT_GE(d, 50.0 - 1e-9);
            EXPECT_LE(d, 300.0 + 1e-9);
        }
    }
    EXPECT_EQ(inliers, 20u);
    EXPECT_EQ(synth::gen_correspondences(h, 20, 0.5, 8, 5).pairs, fx.pairs);
}

TEST(GenApproach, ProfileValidationAndFlags) {
    synth::ApproachProfile bad;
    bad.v0 = 0.0;
    EXPECT_THROW(synth::gen_approach(bad, synth::default_approach_scene()), Error);
    bad = {};
    bad.a_brake = -1.0;
    EXPECT_THROW(synth::gen_approach(bad, synth::default_approach_scene()), Error);

    synth::ApproachProfile late;
    late.brake_at_r = 20.0;  // needs 37.5 m to stop from 15 m/s at 3 m/s^2
    EXPECT_TRUE(synth::gen_approach(late, synth::default_approach_scene()).truth.crosses_stop_bar);
    const auto ok = synth::gen_approach({}, synth::default_approach_scene());
    EXPECT_FALSE(ok.truth.crosses_stop_bar);
    EXPECT_NEAR(ok.truth.stop_r, 2.5, 1e-12);
}

TEST(GenApproach, EmitsIngestFormats) {
    const auto fx = synth::gen_approach({}, synth::default_approach_scene());
    const auto parsed = parse_detections(fx.detections_ndjson(), true);
    EXPECT_EQ(parsed.detections, fx.detections);
    const auto meta = parse_video_meta(fx.meta_json());
    EXPECT_EQ(meta.start_time, fx.meta.start_time);
    EXPECT_EQ(meta.fps, 30.0);
    for (const auto& d : fx.detections) {
        EXPECT_GT(d.bbox.w, 0.0);
        EXPECT_GT(d.bbox.h, 0.0);
    }
}

TEST(GenApproach, NoiseFreeRoundTripReproducesRadialDistance) {
    PipelineOptions opt;
    opt.ema_alpha = 1.0;       // no smoothing
    opt.clamp_radius_m = 0.0;  // clamp only exact standstill
    const auto run = run_scenario(0.0, 42, {}, opt);
    ASSERT_EQ(run.result.trajectories.size(), 1u);
    const auto& st = run.result.trajectories[0];
    const auto& truth = run.fixture.truth;
    ASSERT_EQ(st.t.size(), truth.t.size());
    const auto bar = run.fixture.site.annotations->stop_bar;
    for (std::size_t i = 0; i < st.t.size(); ++i) {
        EXPECT_NEAR(st.t[i] - run.fixture.meta.start_time, truth.t[i], 1e-6);
        EXPECT_NEAR(radial_distance({st.x[i], st.y[i]}, bar), truth.r[i], 1e-6) << i;
    }
}

TEST(GenApproach, NoiseFreeScenarioRecoversModerateEvent) {
    const auto run = run_scenario(0.0, 42);
    ASSERT_EQ(run.result.events.size(), 1u);
    const auto& ev = run.result.events[0];
    EXPECT_EQ(ev.severity, Severity::moderate);
    EXPECT_NEAR(ev.a_bar, 3.0, 1e-2);
}

TEST(GenApproach, NoBrakingNoEvents) {
    synth::ApproachProfile p;
    p.a_brake = 0.0;
    for (double noise : {0.0, 1.0}) {
        const auto run = run_scenario(noise, 42, p);
        EXPECT_TRUE(run.result.events.empty()) << noise;
        EXPECT_EQ(run.result.trajectories.size(), 1u);
    }
}

TEST(GenApproach, OnePixelNoiseStillDetected) {
    const auto start = std::chrono::steady_clock::now();
    const auto run = run_scenario(1.0, 42);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ASSERT_EQ(run.result.events.size(), 1u);
    const auto& ev = run.result.events[0];
    EXPECT_NEAR(ev.a_bar, 3.0, 0.3);
    EXPECT_EQ(ev.severity, Severity::moderate);
    EXPECT_NEAR(ev.r_start, 40.0, 2.0);
    EXPECT_LT(elapsed, 5.0);
}

TEST(GenApproach, OnePixelNoiseRateOverSeeds) {
    int ok = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto run = run_scenario(1.0, seed);
        ok += run.result.events.size() == 1 && std::abs(run.result.events[0].a_bar - 3.0) <= 0.3 &&
              std::abs(run.result.events[0].r_start - 40.0) <= 2.0 &&
              run.result.events[0].severity == Severity::moderate;
    }
    EXPECT_GE(ok, 90);
}

TEST(GenApproach, IntersectionFixtureFilters) {
    const auto scene = synth::default_approach_scene();
    const auto fx = synth::gen_intersection_fixture(scene);
    const auto r = process_video(fx.site, fx.detections, fx.meta, {});
    EXPECT_EQ(r.trajectories.size(), 2u);
    EXPECT_EQ(r.events.size(), 1u);
    EXPECT_EQ(r.events[0].track_id, 1);
    EXPECT_EQ(r.assembly.short_dropped, 5u);
    EXPECT_GT(r.assembly.class_dropped, 0u);
}

TEST(EventCorpusTest, GroundTruthIsConsistent) {
    const auto c = synth::gen_event_corpus(42);
    ASSERT_EQ(c.events.size(), 200u);
    int total = 0;
    for (const auto& day : c.counts)
        for (const auto& hour : day)
            for (int n : hour) total += n;
    EXPECT_EQ(total, 200);
    std::vector<double> r;
    for (const auto& e : c.events) {
        r.push_back(e.r_start);
        EXPECT_EQ(classify_severity(e.a_bar, BrakingThresholds{}), e.severity);
        EXPECT_GE(e.duration, 0.2);
    }
    std::sort(r.begin(), r.end());
    EXPECT_EQ(r, c.r_start_sorted);
    EXPECT_EQ(synth::gen_event_corpus(42).events, c.events);
}
