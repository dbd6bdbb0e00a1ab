#include <chrono>
#include <cmath>

#include <boost/math/special_functions/gamma.hpp>
#include <gtest/gtest.h>

#include "trafficrect/homography.hpp"
#include "trafficrect/robust.hpp"
#include "trafficrect/synthkit.hpp"

using namespace trafficrect;

namespace {

Homography sample_h() {
    Matrix3 m;
    m << 0.9, -0.12, 35.0, 0.08, 1.1, -12.0, 1.5e-5, -4e-5, 1.0;
    return Homography(m);
}


}  // namespace

TEST(HomographyType, CanonicalForm) {
    Matrix3 m;
    m << 2, 0, 4, 0, 2, 6, 0, 0, -2;
    const Homography h(m);
    EXPECT_NEAR(h.matrix().norm(), 1.0, 1e-15);
    EXPECT_GT(h.matrix()(2, 2), 0.0);
    EXPECT_EQ(Homography(-3.0 * m), h);
    Matrix3 z;
    z << -2, 0, 4, 0, 2, 6, 1, 0, 0;
    EXPECT_GE(Homography(z).matrix()(0, 0), 0.0);
}

TEST(HomographyType, RejectsSingularAndNonFinite) {
    Matrix3 m = Matrix3::Zero();
    EXPECT_THROW(Homography{m}, Error);
    m << 1, 2, 3, 2, 4, 6, 0, 0, 1;
    try {
        Homography{m};
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::degenerate);
    }
    m = Matrix3::Identity();
    m(0, 1) = std::nan("");
    EXPECT_THROW(Homography{m}, Error);
}

TEST(HomographyType, ProjectMatchesHandComputation) {
    const Homography h = sample_h();
    const Matrix3& m = h.matrix();
    const double u = 640.0, v = 360.0;
    const double w = m(2, 0) * u + m(2, 1) * v + m(2, 2);
    const OrthoPoint p = project(h, {u, v});
    EXPECT_DOUBLE_EQ(p.x, (m(0, 0) * u + m(0, 1) * v + m(0, 2)) / w);
    EXPECT_DOUBLE_EQ(p.y, (m(1, 0) * u + m(1, 1) * v + m(1, 2)) / w);
    EXPECT_DOUBLE_EQ(homogeneous(h, {u, v}).w, w);
}

TEST(HomographyType, PowerOfTwoScalesAreExactForAnyMatrix) {
    for (std::uint64_t s = 1; s <= 200; ++s) {
        const Matrix3 m = synth::gen_homography(s).matrix() * 1.7;
        const Homography h(m);
        for (double lam : {-2.0, 0.5, 4.0, -0.25}) ASSERT_EQ(Homography(Matrix3(lam * m)), h) << s << " " << lam;
    }
}

TEST(HomographyType, InverseRoundTrip) {
    CounterRng r(11);
    for (std::uint64_t s = 1; s <= 50; ++s) {
        const Homography h = synth::gen_homography(s);
        for (int i = 0; i < 20; ++i) {
            const CameraPoint p{r.uniform(0, 1920), r.uniform(0, 1080)};
            const CameraPoint q = project_inverse(h, project(h, p));
            ASSERT_NEAR(q.u, p.u, 1e-9);
            ASSERT_NEAR(q.v, p.v, 1e-9);
        }
    }
}

TEST(HomographyType, HorizonRaises) {
    Matrix3 m = Matrix3::Identity();
    m(2, 0) = 1e-3;
    m(2, 2) = -1.0;  // w = 0 on the column u = 1000
    const Homography h(m);
    try {
        project(h, {1000.0, 5.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::horizon);
    }
    EXPECT_TRUE(std::isinf(symmetric_transfer_error(h, CameraPoint{1000.0, 5.0}, OrthoPoint{0, 0})));
    EXPECT_NO_THROW(project(h, {999.0, 5.0}));
}

TEST(HomographyType, SymmetricTransferErrorZeroOnExactPairs) {
    const Homography h = sample_h();
    const CameraPoint c{100, 200};
    EXPECT_NEAR(symmetric_transfer_error(h, c, project(h, c)), 0.0, 1e-18);
    const OrthoPoint off{project(h, c).x + 3.0, project(h, c).y};
    EXPECT_GT(symmetric_transfer_error(h, c, off), 9.0 - 1e-9);
}

TEST(Dlt, RecoversGroundTruthFromMinimalAndOverdetermined) {
    for (std::uint64_t s = 1; s <= 100; ++s) {
        const Homography truth = synth::gen_homography(s);
        const auto fx = synth::gen_correspondences(truth, 12, 0.0, 0, s);
        const Homography est = estimate_dlt(fx.pairs);
        ASSERT_LT(est.max_abs_difference(truth), 1e-9) << s;
        const std::vector<CorrespondencePair> four(fx.pairs.begin(), fx.pairs.begin() + 4);
        ASSERT_LT(estimate_dlt(four).max_abs_difference(truth), 1e-8) << s;
    }
}

TEST(Dlt, DegenerateAndTooFew) {
    std::vector<CorrespondencePair> pairs = {
        {1, {0, 0}, {0, 0}, {}}, {2, {1, 1}, {2, 2}, {}}, {3, {2, 2}, {4, 4}, {}}, {4, {0, 5}, {3, 1}, {}}};
    try {
        estimate_dlt(pairs);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::degenerate);
    }
    // All points on one line: rank deficient for any count.
    std::vector<CorrespondencePair> line;
    for (int i = 0; i < 8; ++i) line.push_back({i + 1, {i * 10.0, i * 5.0}, {i * 3.0, i * 1.0}, {}});
    EXPECT_THROW(estimate_dlt(line), Error);
    pairs.pop_back();
    try {
        estimate_dlt(pairs);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::precondition);
    }
}

TEST(Warp, IdentityCopiesAndOutsideIsTransparent) {
    Raster cam(6, 4, 3);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 6; ++x)
            for (int c = 0; c < 3; ++c) cam.at(x, y, c) = static_cast<std::uint8_t>(x * 40 + y * 10 + c);
    const Raster out = warp_image(Homography(), cam, 8, 5);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 6; ++x) {
            for (int c = 0; c < 3; ++c) ASSERT_EQ(out.at(x, y, c), cam.at(x, y, c));
            ASSERT_EQ(out.at(x, y, 3), 255);
        }
    EXPECT_EQ(out.at(7, 0, 3), 0);
    EXPECT_EQ(out.at(0, 4, 3), 0);
}

TEST(Warp, TranslationSamplesBilinearly) {
    Raster cam(3, 1, 1);
    cam.at(0, 0, 0) = 0;
    cam.at(1, 0, 0) = 100;
    cam.at(2, 0, 0) = 200;
    Matrix3 m = Matrix3::Identity();
    m(0, 2) = 0.5;  // ortho x = u + 0.5, so target x samples u = x - 0.5
    const Raster out = warp_image(Homography(m), cam, 3, 1);
    EXPECT_EQ(out.at(0, 0, 3), 0);
    EXPECT_EQ(out.at(1, 0, 0), 50);
    EXPECT_EQ(out.at(2, 0, 0), 150);
}

TEST(Blend, OpacityEndpoints) {
    Raster base(4, 4, 3, 10);
    Raster over(4, 4, 4, 0);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 2; ++x) {
            for (int c = 0; c < 3; ++c) over.at(x, y, c) = 200;
            over.at(x, y, 3) = 255;
        }
    const Raster zero = blend_over(base, over, 0.0);
    const Raster one = blend_over(base, over, 1.0);
    const Raster half = blend_over(base, over, 0.5);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            EXPECT_EQ(zero.at(x, y, 0), 10);
            EXPECT_EQ(one.at(x, y, 0), x < 2 ? 200 : 10);
            EXPECT_EQ(half.at(x, y, 0), x < 2 ? 105 : 10);
        }
    EXPECT_THROW(blend_over(base, Raster(3, 4, 4), 0.5), Error);
}

TEST(Registry, SpecificityAndWindows) {
    auto entry = [](std::string id, std::optional<std::string> from, std::optional<std::string> to,
                    std::optional<std::string> pat) {
        RegistryEntry e;
        e.id = std::move(id);
        if (from) e.valid_from_s = parse_time_of_day(*from);
        if (to) e.valid_to_s = parse_time_of_day(*to);
        e.filename_pattern = std::move(pat);
        return e;
    };
    const std::vector<RegistryEntry> reg = {
        entry("default", {}, {}, {}),
        entry("night", "20:00", "06:00", {}),
        entry("cam2", {}, {}, "cam02_*"),
        entry("cam2-morning", "06:00", "12:00", "cam02_*"),
    };
    const int off = -5 * 3600;
    auto at = [&](const char* iso, const char* file) {
        return select_homography(reg, {parse_iso8601(iso).epoch_s, off, file}).id;
    };
    EXPECT_EQ(at("2024-03-05T14:00:00-05:00", "cam01_x.mp4"), "default");
    EXPECT_EQ(at("2024-03-05T23:30:00-05:00", "cam01_x.mp4"), "night");
    EXPECT_EQ(at("2024-03-05T05:59:59-05:00", "cam01_x.mp4"), "night");
    EXPECT_EQ(at("2024-03-05T06:00:00-05:00", "cam01_x.mp4"), "default");
    EXPECT_EQ(at("2024-03-05T23:30:00-05:00", "cam02_x.mp4"), "cam2");
    EXPECT_EQ(at("2024-03-05T07:00:00-05:00", "cam02_x.mp4"), "cam2-morning");

    const std::vector<RegistryEntry> windowed = {entry("day", "07:00", "19:00", {})};
    try {
        select_homography(windowed, {parse_iso8601("2024-03-05T20:00:00-05:00").epoch_s, off, "a.mp4"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::configuration);
    }
}

TEST(Registry, JsonRoundTrip) {
    RegistryEntry e;
    e.id = "am";
    e.h = sample_h();
    e.valid_from_s = 6 * 3600.0;
    e.valid_to_s = 12 * 3600.0;
    e.filename_pattern = "cam*";
    const auto back = registry_entry_from_json(nlohmann::json::parse(to_json(e).dump()));
    EXPECT_EQ(back.h, e.h);
    EXPECT_EQ(back.valid_from_s, e.valid_from_s);
    EXPECT_EQ(back.filename_pattern, e.filename_pattern);
    EXPECT_EQ(matrix_json(back.h), matrix_json(e.h));
    EXPECT_THROW(registry_entry_from_json({{"id", "x"}, {"matrix", {1, 2, 3}}}), Error);
    EXPECT_THROW(registry_entry_from_json({{"matrix", matrix_json(e.h)}, {"valid_from", "06:00"}}), Error);
}

// ---------------------------------------------------------------- robust

TEST(Gamma, ClosedFormsMatchBoost) {
    for (double x = 1e-6; x < 40.0; x *= 1.37) {
        EXPECT_NEAR(gamma::upper_3_2(x), boost::math::tgamma(1.5, x), 1e-12 * boost::math::tgamma(1.5)) << x;
        EXPECT_NEAR(gamma::lower_3_2(x), boost::math::tgamma_lower(1.5, x), 1e-12) << x;
        EXPECT_NEAR(gamma::lower_5_2(x), boost::math::tgamma_lower(2.5, x), 1e-12) << x;
    }
}

TEST(MagsacLossTest, ShapeProperties) {
    const MagsacLoss loss(10.0);
    EXPECT_NEAR(loss(0.0), 0.0, 1e-15);
    double prev = loss(0.0);
    for (double r2 = 0.01; r2 < loss.max_residual_sq() * 1.5; r2 *= 1.05) {
        const double v = loss(r2);
        ASSERT_GE(v, prev - 1e-12) << r2;
        ASSERT_LE(v, loss.outlier_loss() + 1e-12);
        prev = v;
    }
    const double edge = loss.max_residual_sq();
    EXPECT_NEAR(loss(edge * (1 - 1e-12)), loss.outlier_loss(), 1e-9);
    EXPECT_EQ(loss(std::numeric_limits<double>::infinity()), loss.outlier_loss());
    EXPECT_DOUBLE_EQ(edge, 3.64 * 3.64 * 100.0);
}

TEST(Robust, RequiredIterations) {
    EXPECT_EQ(required_iterations(1.0, 0.999, 10000), 1);
    EXPECT_EQ(required_iterations(0.0, 0.999, 10000), 10000);
    const double w = 20.0 / 28.0;
    EXPECT_EQ(required_iterations(w, 0.999, 10000),
              static_cast<int>(std::ceil(std::log(0.001) / std::log(1.0 - w * w * w * w))));
    EXPECT_EQ(required_iterations(0.05, 0.999, 500), 500);
}

TEST(Robust, MinimalSampleDistinctAndDeterministic) {
    for (std::uint64_t it = 0; it < 1000; ++it) {
        const auto a = draw_minimal_sample(42, it, 7);
        EXPECT_EQ(a, draw_minimal_sample(42, it, 7));
        for (int i = 0; i < 4; ++i)
            for (int j = i + 1; j < 4; ++j) ASSERT_NE(a[i], a[j]);
        for (auto k : a) ASSERT_LT(k, 7u);
    }
}

TEST(Robust, NoisyContaminatedSetAtDefaultSeed) {
    const auto fx = synth::gen_correspondences(synth::gen_homography(42), 20, 0.5, 8, 42);
    const auto r = estimate_robust(fx.pairs, {});
    std::size_t recall = 0;
    for (std::size_t i = 0; i < fx.pairs.size(); ++i) recall += fx.is_inlier[i] && r.inlier_mask[i];
    EXPECT_GE(recall, 18u);
    EXPECT_LT(r.mean_inlier_error, 1.0);
    EXPECT_LE(r.mean_inlier_error, RobustParams{}.inlier_threshold);
}

// Rates over many seeds, for both scoring modes.
TEST(Robust, RecallAndMeanErrorRatesOverSeeds) {
    for (Scoring scoring : {Scoring::sigma_marginalized, Scoring::msac}) {
        int recall_ok = 0, mean_ok = 0, false_pos = 0;
        const int n = 100;
        for (std::uint64_t s = 1; s <= n; ++s) {
            const auto fx = synth::gen_correspondences(synth::gen_homography(s), 20, 0.5, 8, s * 7919);
            RobustParams p;
            p.scoring = scoring;
            const auto r = estimate_robust(fx.pairs, p);
            std::size_t recall = 0;
            for (std::size_t i = 0; i < fx.pairs.size(); ++i) {
                recall += fx.is_inlier[i] && r.inlier_mask[i];
                false_pos += !fx.is_inlier[i] && r.inlier_mask[i];
            }
            recall_ok += recall >= 18;
            mean_ok += r.mean_inlier_error < 1.0;
        }
        EXPECT_GE(recall_ok, 90) << to_string(scoring);
        EXPECT_GE(mean_ok, 90) << to_string(scoring);
        EXPECT_EQ(false_pos, 0) << to_string(scoring);
    }
}

// Adding outliers (below half) moves the estimate no further than the
// inlier noise already does.
TEST(Robust, OutliersDoNotMoveTheEstimateMuch) {
    int within = 0;
    for (std::uint64_t s = 1; s <= 100; ++s) {
        const Homography truth = synth::gen_homography(s);
        const auto clean = synth::gen_correspondences(truth, 20, 0.5, 0, s);
        auto dirty = clean.pairs;
        const auto extra = synth::gen_correspondences(truth, 0, 0.0, 8, s + 100000);
        for (auto p : extra.pairs) {
            p.id += 1000;
            dirty.push_back(p);
        }
        const auto a = estimate_robust(clean.pairs, {});
        const auto b = estimate_robust(dirty, {});
        double worst = 0.0;
        for (const auto& t : clean.truth)
            worst = std::max(worst, std::hypot(project(a.homography, t.cam).x - project(b.homography, t.cam).x,
                                               project(a.homography, t.cam).y - project(b.homography, t.cam).y));
        within += worst < 1.0;
    }
    EXPECT_GE(within, 90);
}

TEST(Robust, DeterministicAtFixedSeed) {
    const auto fx = synth::gen_correspondences(synth::gen_homography(3), 20, 0.5, 8, 3);
    const auto a = estimate_robust(fx.pairs, {});
    const auto b = estimate_robust(fx.pairs, {});
    EXPECT_EQ(a.homography, b.homography);
    EXPECT_EQ(a.inlier_mask, b.inlier_mask);
    EXPECT_EQ(a.iterations_run, b.iterations_run);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(Robust, MinimalSetEqualsDlt) {
    const auto fx = synth::gen_correspondences(synth::gen_homography(4), 4, 0.0, 0, 4);
    const auto r = estimate_robust(fx.pairs, {});
    EXPECT_EQ(r.homography, estimate_dlt(fx.pairs));
    EXPECT_EQ(r.inlier_count(), 4u);
}

TEST(Robust, CleanPairsAreAllInliers) {
    const auto fx = synth::gen_correspondences(synth::gen_homography(9), 12, 0.0, 0, 9);
    const auto r = estimate_robust(fx.pairs, {});
    EXPECT_EQ(r.inlier_count(), 12u);
    EXPECT_LT(r.mean_inlier_error, 1e-6);
}

TEST(Robust, FailureModes) {
    const auto fx = synth::gen_correspondences(synth::gen_homography(2), 3, 0.0, 0, 2);
    try {
        estimate_robust(fx.pairs, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::precondition);
    }
    // Collinear camera points: every minimal sample is degenerate.
    std::vector<CorrespondencePair> contradictory;
    for (int i = 0; i < 8; ++i) {
        const double a = i * 0.7;
        contradictory.push_back({i + 1, {100.0 * i, 50.0 * i + 10.0}, {500 * std::cos(a), 500 * std::sin(a)}, {}});
    }
    RobustParams p;
    p.max_iterations = 200;
    try {
        estimate_robust(contradictory, p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::estimation_failed);
        EXPECT_TRUE(e.details().contains("iterations"));
    }
    p.confidence = 1.0;
    EXPECT_THROW(estimate_robust(contradictory, p), Error);
}

TEST(Robust, ParamsJson) {
    RobustParams p;
    p.seed = 7;
    p.scoring = Scoring::msac;
    const auto back = robust_params_from_json(to_json(p));
    EXPECT_EQ(back.seed, 7u);
    EXPECT_EQ(back.scoring, Scoring::msac);
    EXPECT_EQ(parse_scoring("magsac++"), Scoring::sigma_marginalized);
    EXPECT_THROW(parse_scoring("lmeds"), Error);
}
