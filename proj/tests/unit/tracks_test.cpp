#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "trafficrect/correspond.hpp"
#include "trafficrect/tracks.hpp"

using namespace trafficrect;

namespace {

CorrespondenceSet sample_set() {
    CorrespondenceSet s;
    s.site_id = "duval-truman";
    s.camera_image_ref = "frame.png";
    s.ortho_ref = "ortho.png";
    add_pair(s, {10.5, 20.25}, {100.0, 200.0}, "stop bar west");
    add_pair(s, {0.1, 0.2}, {0.3 + 1e-13, 1.0 / 3.0});
    SiteAnnotations a;
    a.stop_bar = {{0.0, 0.0}, {10.0, 0.0}};
    a.median_line = {{0.0, -50.0}, {0.0, 0.0}, {5.0, 50.0}};
    a.analysis_side = AnalysisSide::right;
    a.stop_bar_camera = std::vector<CameraPoint>{{1, 2}, {3, 4}};
    s.annotations = a;
    return s;
}

Detection det(int frame, int track, double conf = 0.9, const std::string& cls = "car") {
    return {"v1", frame, track, cls, {100.0 + frame, 50.0, 20.0, 10.0}, conf};
}

VideoMeta meta() { return {"v1", 1'700'000'000.0, -18000, 30.0, "cam1_0800.mp4"}; }

}  // namespace

TEST(Correspondences, JsonRoundTripIsExact) {
    const auto s = sample_set();
    EXPECT_EQ(parse_set(to_json(s).dump()), s);
    EXPECT_EQ(parse_set(to_json(s).dump(2)), s);
}

TEST(Correspondences, SchemaVersionChecked) {
    auto j = to_json(sample_set());
    j["schema_version"] = 2;
    try {
        correspondence_set_from_json(j);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::schema_version);
    }
    j.erase("schema_version");
    EXPECT_THROW(correspondence_set_from_json(j), Error);
    try {
        parse_set("{not json");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::parse);
    }
}

TEST(Correspondences, DuplicateIdsRejected) {
    auto j = to_json(sample_set());
    j["pairs"][1]["id"] = 1;
    try {
        correspondence_set_from_json(j);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::schema);
    }
}

TEST(Correspondences, IdsAreNotReused) {
    CorrespondenceSet s;
    for (int i = 0; i < 3; ++i) add_pair(s, {double(i), 0}, {0, double(i)});
    EXPECT_TRUE(remove_pair(s, 2));
    EXPECT_FALSE(remove_pair(s, 2));
    EXPECT_EQ(add_pair(s, {5, 5}, {5, 5}).id, 4);
    EXPECT_EQ(s.pairs[1].id, 3);
    EXPECT_THROW(add_pair(s, {std::nan(""), 0}, {0, 0}), Error);
}

TEST(Correspondences, EstimableAndWarnings) {
    CorrespondenceSet s;
    for (int i = 0; i < 3; ++i) add_pair(s, {double(i), 0}, {0, double(i)});
    EXPECT_FALSE(s.estimable());
    EXPECT_EQ(s.warnings().size(), 1u);
    add_pair(s, {9, 9}, {9, 9});
    EXPECT_TRUE(s.estimable());
    EXPECT_EQ(s.warnings().size(), 1u);
    for (int i = 0; i < 6; ++i) add_pair(s, {double(i), 1}, {1, double(i)});
    EXPECT_TRUE(s.warnings().empty());
}

TEST(Annotations, SideOfMedian) {
    const auto a = *sample_set().annotations;
    // Walking north along x=0, +x is to the right.
    EXPECT_EQ(side_of_median(a, {3.0, -20.0}), MedianSide::right);
    EXPECT_EQ(side_of_median(a, {-3.0, -20.0}), MedianSide::left);
    EXPECT_EQ(side_of_median(a, {0.0, -20.0}), MedianSide::on);
    EXPECT_EQ(side_of_median(a, {0.0, 40.0}), MedianSide::left);
    SiteAnnotations bad = a;
    bad.median_line.resize(1);
    EXPECT_THROW(side_of_median(bad, {0, 0}), Error);
    EXPECT_THROW(bad.validate(), Error);
    bad = a;
    bad.stop_bar.b = bad.stop_bar.a;
    try {
        bad.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::geometry);
    }
    EXPECT_THROW(parse_analysis_side("north"), Error);
}

TEST(Detections, ParseCollectsBadLines) {
    const std::string text =
        R"({"video_id":"v1","frame":0,"track_id":1,"class":"car","bbox":[1,2,3,4],"conf":0.5})"
        "\n\n"
        R"({"video_id":"v1","frame":1,"track_id":1,"class":"car","bbox":[1,2,0,4],"conf":0.5})"
        "\n"
        "garbage\r\n"
        R"({"video_id":"v1","frame":2,"track_id":1,"class":"car","bbox":[1,2,3],"conf":0.5})"
        "\n";
    const auto parsed = parse_detections(text);
    ASSERT_EQ(parsed.detections.size(), 1u);
    ASSERT_EQ(parsed.errors.size(), 3u);
    EXPECT_EQ(parsed.errors[0].line, 3u);
    EXPECT_EQ(parsed.errors[1].line, 4u);
    EXPECT_EQ(parsed.errors[2].line, 5u);
    try {
        parse_detections(text, true);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::parse);
        EXPECT_EQ(e.details().at("line"), 3);
    }
    const auto d = parsed.detections[0];
    EXPECT_EQ(detection_from_json(to_json(d)), d);
    EXPECT_EQ(ground_point(d), (CameraPoint{2.5, 6.0}));
}

TEST(VideoMetaTest, ParseAndAnchor) {
    const auto m = parse_video_meta(R"({"video_id":"v1","start_time":"2024-03-05T08:00:00-05:00","fps":30})");
    EXPECT_EQ(m.tz_offset_s, -18000);
    EXPECT_EQ(anchor_timestamp(90, m), m.start_time + 3.0);
    EXPECT_EQ(video_meta_from_json(to_json(m)).start_time, m.start_time);
    EXPECT_THROW(parse_video_meta(R"({"video_id":"v1","start_time":"2024-03-05T08:00:00Z","fps":0})"), Error);
    EXPECT_THROW(parse_video_meta(R"({"video_id":"v1","fps":30})"), Error);
}

TEST(Assembly, GroupsFiltersAndDeduplicates) {
    std::vector<Detection> ds;
    for (int f = 11; f >= 0; --f) ds.push_back(det(f, 1));
    ds.push_back(det(5, 1, 0.95));                        // duplicate, more confident
    ds.push_back(det(6, 1, 0.1));                         // duplicate, less confident
    for (int f = 0; f < 5; ++f) ds.push_back(det(f, 2));  // too short
    for (int f = 0; f < 12; ++f) ds.push_back(det(f, 3, 0.9, "person"));
    for (int f = 0; f < 12; ++f) ds.push_back(det(f, 4, f == 3 ? 0.99 : 0.5, f == 3 ? "truck" : "person"));

    const auto out = assemble_tracks(ds, meta());
    ASSERT_EQ(out.trajectories.size(), 2u);
    const auto& t = out.trajectories[0];
    EXPECT_EQ(t.track_id, 1);
    ASSERT_EQ(t.points.size(), 12u);
    for (std::size_t k = 0; k < t.points.size(); ++k) {
        EXPECT_EQ(t.points[k].frame_idx, int(k));
        EXPECT_EQ(t.points[k].t, meta().start_time + k / 30.0);
    }
    EXPECT_EQ(out.trajectories[1].class_label, "truck");
    EXPECT_EQ(out.report.duplicates_dropped, 2u);
    EXPECT_EQ(out.report.short_dropped, 5u);
    EXPECT_EQ(out.report.class_dropped, 12u);
    EXPECT_EQ(out.report.points_kept, 24u);

    auto wrong = ds;
    wrong[0].video_id = "other";
    EXPECT_THROW(assemble_tracks(wrong, meta()), Error);
}

TEST(Assembly, DuplicateKeepsMostConfident) {
    std::vector<Detection> ds;
    for (int f = 0; f < 10; ++f) ds.push_back(det(f, 7));
    Detection better = det(4, 7, 0.99);
    better.bbox.x = 500.0;
    ds.push_back(better);
    const auto out = assemble_tracks(ds, meta());
    EXPECT_EQ(out.trajectories[0].points[4].cam, ground_point(better));
}

TEST(Smoothing, EmaMatchesRecurrence) {
    const std::vector<double> x{1, 5, 2, 8, 3};
    const auto y = ema(x, 0.3);
    double prev = x[0];
    EXPECT_EQ(y[0], x[0]);
    for (std::size_t k = 1; k < x.size(); ++k) {
        prev = 0.3 * x[k] + 0.7 * prev;
        EXPECT_EQ(y[k], prev);
    }
    EXPECT_EQ(ema(x, 1.0), x);
    EXPECT_THROW(ema(x, 0.0), Error);
    EXPECT_THROW(ema(x, 1.5), Error);
}

TEST(WorldProjectionTest, DropsHorizonPoints) {
    Matrix3 m = Matrix3::Identity();
    m(2, 0) = -0.01;  // w = 1 - 0.01 u
    const Homography h(m);
    const GeoTransform gt{1000.0, 2000.0, 0.5, 0.5, "EPSG:32617"};
    Trajectory tr{1, "v1", "car", {}, false, 1.0};
    for (int k = 0; k < 6; ++k) tr.points.push_back({double(k), k, {k < 2 ? 100.0 : 10.0 * k, 5.0}, {}, {}});
    const auto r = to_world(tr, h, gt);
    ASSERT_TRUE(r.trajectory);
    EXPECT_EQ(r.horizon_drops, 2u);
    EXPECT_EQ(r.trajectory->points.size(), 4u);
    const auto& p = r.trajectory->points[0];
    EXPECT_EQ(p.world, pixel_to_world(gt, project(h, p.cam)));

    for (auto& q : tr.points) q.cam.u = 100.0;
    const auto rejected = to_world(tr, h, gt);
    EXPECT_FALSE(rejected.trajectory);
    EXPECT_FALSE(rejected.diagnostic.empty());
}

TEST(StationaryClamp, SnapsStillRunsOnly) {
    const GeoTransform gt{0.0, 0.0, 1.0, 1.0, "EPSG:32617"};
    Trajectory tr{1, "v1", "car", {}, false, 1.0};
    // 2 s still with 0.1 m jitter, then moving at 10 m/s.
    for (int k = 0; k <= 60; ++k) {
        TrackPoint p;
        p.t = k / 30.0;
        p.world = {5.0 + 0.1 * ((k % 3) - 1), -5.0};
        tr.points.push_back(p);
    }
    for (int k = 1; k <= 30; ++k) {
        TrackPoint p;
        p.t = 2.0 + k / 30.0;
        p.world = {5.0 + 10.0 * k / 30.0, -5.0};
        tr.points.push_back(p);
    }
    const auto c = stationary_clamp(tr, gt);
    const WorldPoint anchor = tr.points[0].world;
    for (int k = 0; k <= 60; ++k) EXPECT_EQ(c.points[k].world, anchor) << k;
    EXPECT_EQ(c.points[61].world, anchor);  // 0.333 m from the anchor, still inside the radius
    for (std::size_t k = 63; k < c.points.size(); ++k) EXPECT_EQ(c.points[k].world, tr.points[k].world) << k;
    EXPECT_EQ(c.points[10].ortho, world_to_pixel(gt, anchor));

    Trajectory moving{2, "v1", "car", {}, false, 1.0};
    for (int k = 0; k < 60; ++k) moving.points.push_back({k / 30.0, k, {}, {}, {0.05 * k, 0.0}});
    EXPECT_EQ(stationary_clamp(moving, gt), moving);
}

TEST(PointsBlob, Columnar) {
    Trajectory tr{1, "v1", "car", {{1.0, 0, {}, {}, {2.0, 3.0}}, {1.5, 1, {}, {}, {4.0, 5.0}}}, false, 1.0};
    const auto b = points_blob(tr);
    EXPECT_EQ(b.at("t"), nlohmann::json::array({1.0, 1.5}));
    EXPECT_EQ(b.at("x"), nlohmann::json::array({2.0, 4.0}));
    EXPECT_EQ(b.at("y"), nlohmann::json::array({3.0, 5.0}));
}
