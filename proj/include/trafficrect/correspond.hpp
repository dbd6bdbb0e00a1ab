#pragma once

#include <algorithm>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trafficrect/error.hpp"
#include "trafficrect/geometry.hpp"

namespace trafficrect {

inline constexpr int kCorrespondenceSchemaVersion = 1;
inline constexpr std::size_t kMinimalPairs = 4;
inline constexpr std::size_t kRecommendedPairs = 10;

struct CorrespondencePair {
    int id = 0;
    CameraPoint cam;
    OrthoPoint ortho;
    std::optional<std::string> label;
    friend bool operator==(const CorrespondencePair&, const CorrespondencePair&) = default;
};

enum class AnalysisSide { left, right, both };
enum class MedianSide { left, right, on };

inline std::string_view to_string(AnalysisSide s) {
    switch (s) {
        case AnalysisSide::left: return "left";
        case AnalysisSide::right: return "right";
        case AnalysisSide::both: return "both";
    }
    return "both";
}

inline std::string_view to_string(MedianSide s) {
    switch (s) {
        case MedianSide::left: return "left";
        case MedianSide::right: return "right";
        case MedianSide::on: return "on";
    }
    return "on";
}

inline AnalysisSide parse_analysis_side(std::string_view s) {
    if (s == "left") return AnalysisSide::left;
    if (s == "right") return AnalysisSide::right;
    if (s == "both") return AnalysisSide::both;
    fail(ErrorCode::validation, "analysis_side must be left, right or both");
}

/// Stop bar and median in world meters. `*_camera` members are advisory
/// echoes of where the user clicked, kept for redrawing only.
struct SiteAnnotations {
    Segment stop_bar;
    std::vector<WorldPoint> median_line;
    AnalysisSide analysis_side = AnalysisSide::both;
    std::optional<std::vector<CameraPoint>> stop_bar_camera;
    std::optional<std::vector<CameraPoint>> median_line_camera;

    void validate() const {
        if (!is_finite(stop_bar.a) || !is_finite(stop_bar.b))
            fail(ErrorCode::validation, "stop bar endpoints must be finite");
        if (stop_bar.a == stop_bar.b) fail(ErrorCode::geometry, "stop bar endpoints must be distinct");
        if (median_line.size() < 2) fail(ErrorCode::geometry, "median line needs at least 2 vertices");
        for (const auto& p : median_line)
            if (!is_finite(p)) fail(ErrorCode::validation, "median vertices must be finite");
    }

    friend bool operator==(const SiteAnnotations&, const SiteAnnotations&) = default;
};

struct CorrespondenceSet {
    std::string site_id;
    std::string camera_image_ref;
    std::string ortho_ref;
    std::vector<CorrespondencePair> pairs;
    std::optional<SiteAnnotations> annotations;

    bool estimable() const noexcept { return pairs.size() >= kMinimalPairs; }

    /// Non-fatal advice about the set, e.g. fewer pairs than recommended.
    std::vector<std::string> warnings() const {
        std::vector<std::string> out;
        if (pairs.size() < kMinimalPairs)
            out.push_back("fewer than 4 pairs: homography cannot be estimated");
        else if (pairs.size() < kRecommendedPairs)
            out.push_back("fewer than 10 pairs: 10 to 20 well-spread pairs are recommended");
        return out;
    }

    friend bool operator==(const CorrespondenceSet&, const CorrespondenceSet&) = default;
};

/// Appends a pair with the next free id. Ids are never reused, so deleting
/// a pair does not renumber the rest.
inline const CorrespondencePair& add_pair(CorrespondenceSet& set, CameraPoint cam, OrthoPoint ortho,
                                          std::optional<std::string> label = std::nullopt) {
    if (!is_finite(cam) || !is_finite(ortho)) fail(ErrorCode::validation, "correspondence coordinates must be finite");
    int next = 1;
    for (const auto& p : set.pairs) next = std::max(next, p.id + 1);
    set.pairs.push_back({next, cam, ortho, std::move(label)});
    return set.pairs.back();
}

inline bool remove_pair(CorrespondenceSet& set, int id) {
    const auto it = std::find_if(set.pairs.begin(), set.pairs.end(), [&](const auto& p) { return p.id == id; });
    if (it == set.pairs.end()) return false;
    set.pairs.erase(it);
    return true;
}

/// Side of the median polyline (walked in vertex order) on which pt lies,
/// judged against the nearest segment.
inline MedianSide side_of_median(const SiteAnnotations& annotations, const WorldPoint& pt) {
    const auto& line = annotations.median_line;
    if (line.size() < 2) fail(ErrorCode::geometry, "median line needs at least 2 vertices");
    double best = std::numeric_limits<double>::infinity();
    std::size_t nearest = 0;
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
        const double d = distance_to_segment({line[i], line[i + 1]}, pt);
        if (d < best) {
            best = d;
            nearest = i;
        }
    }
    const Segment seg{line[nearest], line[nearest + 1]};
    if (seg.a == seg.b) fail(ErrorCode::geometry, "nearest median segment has zero length");
    const double c = cross(seg, pt);
    if (std::abs(c) < 1e-9) return MedianSide::on;
    return c > 0.0 ? MedianSide::left : MedianSide::right;
}

// ---------------------------------------------------------------- JSON

inline nlohmann::json point_json(double a, double b) { return nlohmann::json::array({a, b}); }

inline WorldPoint world_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) fail(ErrorCode::schema, "point must be a 2-element array");
    return {j.at(0).get<double>(), j.at(1).get<double>()};
}

inline CameraPoint camera_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) fail(ErrorCode::schema, "point must be a 2-element array");
    return {j.at(0).get<double>(), j.at(1).get<double>()};
}

inline nlohmann::json annotations_to_json(const SiteAnnotations& a) {
    nlohmann::json median = nlohmann::json::array();
    for (const auto& p : a.median_line) median.push_back(point_json(p.easting, p.northing));
    nlohmann::json j = {
        {"stop_bar", {point_json(a.stop_bar.a.easting, a.stop_bar.a.northing),
                      point_json(a.stop_bar.b.easting, a.stop_bar.b.northing)}},
        {"median_line", median},
        {"analysis_side", to_string(a.analysis_side)},
    };
    auto cams = [](const std::vector<CameraPoint>& pts) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& p : pts) arr.push_back(point_json(p.u, p.v));
        return arr;
    };
    if (a.stop_bar_camera) j["stop_bar_camera"] = cams(*a.stop_bar_camera);
    if (a.median_line_camera) j["median_line_camera"] = cams(*a.median_line_camera);
    return j;
}

inline SiteAnnotations annotations_from_json(const nlohmann::json& j) {
    try {
        SiteAnnotations a;
        const auto& sb = j.at("stop_bar");
        if (!sb.is_array() || sb.size() != 2) fail(ErrorCode::schema, "stop_bar must have exactly 2 points");
        a.stop_bar = {world_from_json(sb.at(0)), world_from_json(sb.at(1))};
        for (const auto& p : j.at("median_line")) a.median_line.push_back(world_from_json(p));
        a.analysis_side = parse_analysis_side(j.value("analysis_side", "both"));
        auto cams = [](const nlohmann::json& arr) {
            std::vector<CameraPoint> out;
            for (const auto& p : arr) out.push_back(camera_from_json(p));
            return out;
        };
        if (j.contains("stop_bar_camera")) a.stop_bar_camera = cams(j.at("stop_bar_camera"));
        if (j.contains("median_line_camera")) a.median_line_camera = cams(j.at("median_line_camera"));
        a.validate();
        return a;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema, std::string("invalid annotations: ") + e.what());
    }
}

inline nlohmann::json to_json(const CorrespondenceSet& set) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : set.pairs) {
        nlohmann::json jp = {{"id", p.id}, {"cam", point_json(p.cam.u, p.cam.v)},
                             {"ortho", point_json(p.ortho.x, p.ortho.y)}};
        if (p.label) jp["label"] = *p.label;
        pairs.push_back(std::move(jp));
    }
    nlohmann::json j = {
        {"schema_version", kCorrespondenceSchemaVersion},
        {"site_id", set.site_id},
        {"camera_image_ref", set.camera_image_ref},
        {"ortho_ref", set.ortho_ref},
        {"pairs", pairs},
        {"annotations", set.annotations ? annotations_to_json(*set.annotations) : nlohmann::json()},
    };
    return j;
}

inline CorrespondenceSet correspondence_set_from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorCode::schema, "correspondence document must be a JSON object");
    if (!j.contains("schema_version")) fail(ErrorCode::schema, "missing schema_version");
    const auto& version = j.at("schema_version");
    if (!version.is_number_integer() || version.get<int>() != kCorrespondenceSchemaVersion)
        fail(ErrorCode::schema_version, "unsupported correspondence schema_version",
             {{"expected", kCorrespondenceSchemaVersion}, {"got", version}});
    try {
        CorrespondenceSet set;
        set.site_id = j.at("site_id").get<std::string>();
        set.camera_image_ref = j.value("camera_image_ref", "");
        set.ortho_ref = j.value("ortho_ref", "");
        for (const auto& jp : j.at("pairs")) {
            CorrespondencePair p;
            p.id = jp.at("id").get<int>();
            const auto cam = camera_from_json(jp.at("cam"));
            const auto o = camera_from_json(jp.at("ortho"));
            p.cam = cam;
            p.ortho = {o.u, o.v};
            if (jp.contains("label") && !jp.at("label").is_null()) p.label = jp.at("label").get<std::string>();
            if (!is_finite(p.cam) || !is_finite(p.ortho)) fail(ErrorCode::validation, "non-finite pair coordinate");
            for (const auto& q : set.pairs)
                if (q.id == p.id) fail(ErrorCode::schema, "duplicate pair id " + std::to_string(p.id));
            set.pairs.push_back(std::move(p));
        }
        if (j.contains("annotations") && !j.at("annotations").is_null())
            set.annotations = annotations_from_json(j.at("annotations"));
        return set;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema, std::string("invalid correspondence document: ") + e.what());
    }
}

inline void save_set(const CorrespondenceSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + path);
    out << to_json(set).dump(2) << '\n';
    if (!out) fail(ErrorCode::io, "short write to " + path);
}

inline CorrespondenceSet parse_set(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::parse, std::string("correspondence file is not valid JSON: ") + e.what());
    }
    return correspondence_set_from_json(j);
}

inline CorrespondenceSet load_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_set(ss.str());
}

}  // namespace trafficrect
