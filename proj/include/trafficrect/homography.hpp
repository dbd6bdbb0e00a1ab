#pragma once

#include <array>
#include <cmath>
#include <fnmatch.h>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "trafficrect/correspond.hpp"
#include "trafficrect/error.hpp"
#include "trafficrect/geometry.hpp"
#include "trafficrect/image.hpp"
#include "trafficrect/time.hpp"

namespace trafficrect {

using Matrix3 = Eigen::Matrix3d;

inline constexpr double kHorizonEpsilon = 1e-12;
inline constexpr double kSingularDeterminant = 1e-12;

/// Third homogeneous coordinate and friends from H * (u, v, 1).
struct HomogeneousPoint {
    double xt = 0.0;
    double yt = 0.0;
    double w = 0.0;
};

/// Camera-to-ortho plane projective map, stored canonically: Frobenius norm
/// 1 and h33 >= 0 (first nonzero entry >= 0 when h33 == 0). The inverse is
/// computed once at construction.
class Homography {
public:
    Homography() : Homography(Matrix3::Identity()) {}

    explicit Homography(const Matrix3& m) {
        if (!m.allFinite()) fail(ErrorCode::validation, "homography entries must be finite");
        const double peak = m.cwiseAbs().maxCoeff();
        if (peak == 0.0) fail(ErrorCode::degenerate, "homography is the zero matrix");
        // Dividing by the largest entry first makes the result identical for
        // any exactly representable multiple of m; the Frobenius scaling is
        // then a function of that shared intermediate.
        const Matrix3 unit_peak = m / peak;
        h_ = unit_peak / unit_peak.norm();
        double pivot = h_(2, 2);
        for (int i = 0; pivot == 0.0 && i < 9; ++i) pivot = h_(i / 3, i % 3);
        if (pivot < 0.0) h_ = -h_;
        const double det = h_.determinant();
        if (!(std::abs(det) > kSingularDeterminant))
            fail(ErrorCode::degenerate, "homography is singular", {{"determinant", det}});
        inv_ = h_.inverse();
    }

    /// Row-major h11..h33.
    static Homography from_row_major(std::span<const double, 9> v) {
        Matrix3 m;
        m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
        return Homography(m);
    }

    /// Like from_row_major, but a matrix that is already canonical (unit
    /// norm to rounding, sign convention met) is kept bit-for-bit, so
    /// serialized matrices load back unchanged.
    static Homography from_stored(std::span<const double, 9> v) {
        Matrix3 m;
        m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
        if (!m.allFinite() || std::abs(m.norm() - 1.0) > 1e-12) return Homography(m);
        double pivot = m(2, 2);
        for (int i = 0; pivot == 0.0 && i < 9; ++i) pivot = m(i / 3, i % 3);
        if (pivot < 0.0) return Homography(m);
        Homography h;
        h.h_ = m;
        const double det = m.determinant();
        if (!(std::abs(det) > kSingularDeterminant))
            fail(ErrorCode::degenerate, "homography is singular", {{"determinant", det}});
        h.inv_ = m.inverse();
        return h;
    }

    std::array<double, 9> row_major() const {
        return {h_(0, 0), h_(0, 1), h_(0, 2), h_(1, 0), h_(1, 1), h_(1, 2), h_(2, 0), h_(2, 1), h_(2, 2)};
    }

    const Matrix3& matrix() const noexcept { return h_; }
    const Matrix3& inverse_matrix() const noexcept { return inv_; }
    Homography inverse() const { return Homography(inv_); }
    double determinant() const { return h_.determinant(); }

    /// Largest absolute entry difference after both are canonical.
    double max_abs_difference(const Homography& other) const { return (h_ - other.h_).cwiseAbs().maxCoeff(); }

    friend bool operator==(const Homography& a, const Homography& b) { return a.h_ == b.h_; }

private:
    Matrix3 h_;
    Matrix3 inv_;
};

namespace detail {

inline HomogeneousPoint apply(const Matrix3& m, double x, double y) {
    return {m(0, 0) * x + m(0, 1) * y + m(0, 2), m(1, 0) * x + m(1, 1) * y + m(1, 2),
            m(2, 0) * x + m(2, 1) * y + m(2, 2)};
}

inline void divide_checked(const HomogeneousPoint& hp, double& x, double& y) {
    if (!(std::abs(hp.w) >= kHorizonEpsilon))
        fail(ErrorCode::horizon, "point maps to the line at infinity (w = 0)", {{"w", hp.w}});
    x = hp.xt / hp.w;
    y = hp.yt / hp.w;
}

}  // namespace detail

inline HomogeneousPoint homogeneous(const Homography& h, const CameraPoint& p) {
    return detail::apply(h.matrix(), p.u, p.v);
}

/// (xt, yt, w) = H (u, v, 1); returns (xt / w, yt / w).
inline OrthoPoint project(const Homography& h, const CameraPoint& p) {
    OrthoPoint out;
    detail::divide_checked(detail::apply(h.matrix(), p.u, p.v), out.x, out.y);
    return out;
}

inline CameraPoint project_inverse(const Homography& h, const OrthoPoint& p) {
    CameraPoint out;
    detail::divide_checked(detail::apply(h.inverse_matrix(), p.x, p.y), out.u, out.v);
    return out;
}

/// Forward plus backward squared reprojection residual, px^2. Returns
/// +infinity when either direction hits the horizon.
inline double symmetric_transfer_error(const Homography& h, const CameraPoint& cam, const OrthoPoint& ortho) {
    const auto fwd = detail::apply(h.matrix(), cam.u, cam.v);
    const auto bwd = detail::apply(h.inverse_matrix(), ortho.x, ortho.y);
    if (!(std::abs(fwd.w) >= kHorizonEpsilon) || !(std::abs(bwd.w) >= kHorizonEpsilon))
        return std::numeric_limits<double>::infinity();
    const double dx = fwd.xt / fwd.w - ortho.x;
    const double dy = fwd.yt / fwd.w - ortho.y;
    const double du = bwd.xt / bwd.w - cam.u;
    const double dv = bwd.yt / bwd.w - cam.v;
    const double e = dx * dx + dy * dy + du * du + dv * dv;
    return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
}

inline double symmetric_transfer_error(const Homography& h, const CorrespondencePair& pair) {
    return symmetric_transfer_error(h, pair.cam, pair.ortho);
}

// ---------------------------------------------------------------- DLT

namespace detail {

struct Similarity2 {
    double cx = 0.0, cy = 0.0, s = 1.0;
    Matrix3 matrix() const {
        Matrix3 t;
        t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
        return t;
    }
};

/// Translate centroid to origin, scale mean distance to sqrt(2).
inline Similarity2 hartley(const std::vector<Eigen::Vector2d>& pts) {
    Similarity2 t;
    for (const auto& p : pts) {
        t.cx += p.x();
        t.cy += p.y();
    }
    t.cx /= static_cast<double>(pts.size());
    t.cy /= static_cast<double>(pts.size());
    double mean = 0.0;
    for (const auto& p : pts) mean += std::hypot(p.x() - t.cx, p.y() - t.cy);
    mean /= static_cast<double>(pts.size());
    if (!(mean > 0.0)) fail(ErrorCode::degenerate, "all points coincide");
    t.s = std::sqrt(2.0) / mean;
    return t;
}

inline bool any_three_collinear(const std::vector<Eigen::Vector2d>& p, double tol) {
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = i + 1; j < p.size(); ++j)
            for (std::size_t k = j + 1; k < p.size(); ++k) {
                const Eigen::Vector2d a = p[j] - p[i], b = p[k] - p[i];
                if (std::abs(a.x() * b.y() - a.y() * b.x()) < tol) return true;
            }
    return false;
}

}  // namespace detail

inline constexpr double kCollinearTolerance = 1e-9;

/// Hartley-normalized direct linear transform over >= 4 pairs. Exact (to
/// rounding) on consistent noise-free input.
inline Homography estimate_dlt(std::span<const CorrespondencePair> pairs) {
    const std::size_t n = pairs.size();
    if (n < kMinimalPairs)
        fail(ErrorCode::precondition, "homography estimation needs at least 4 pairs", {{"pairs", n}});

    std::vector<Eigen::Vector2d> cam(n), ortho(n);
    for (std::size_t i = 0; i < n; ++i) {
        cam[i] = {pairs[i].cam.u, pairs[i].cam.v};
        ortho[i] = {pairs[i].ortho.x, pairs[i].ortho.y};
    }
    const auto tc = detail::hartley(cam);
    const auto to = detail::hartley(ortho);
    for (std::size_t i = 0; i < n; ++i) {
        cam[i] = {(cam[i].x() - tc.cx) * tc.s, (cam[i].y() - tc.cy) * tc.s};
        ortho[i] = {(ortho[i].x() - to.cx) * to.s, (ortho[i].y() - to.cy) * to.s};
    }
    if (n == kMinimalPairs &&
        (detail::any_three_collinear(cam, kCollinearTolerance) || detail::any_three_collinear(ortho, kCollinearTolerance)))
        fail(ErrorCode::degenerate, "minimal sample has three collinear points");

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(2 * n), 9);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = cam[i].x(), v = cam[i].y(), x = ortho[i].x(), y = ortho[i].y();
        const auto r = static_cast<Eigen::Index>(2 * i);
        a.row(r) << -u, -v, -1, 0, 0, 0, x * u, x * v, x;
        a.row(r + 1) << 0, 0, 0, -u, -v, -1, y * u, y * v, y;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    // A rank below 8 leaves a multi-dimensional null space: no unique H.
    if (sv.size() >= 8 && sv(7) <= 1e-10 * sv(0))
        fail(ErrorCode::degenerate, "correspondences do not determine a unique homography");

    const Eigen::VectorXd h = svd.matrixV().col(8);
    Matrix3 hn;
    hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    const Matrix3 full = to.matrix().inverse() * hn * tc.matrix();
    return Homography(full);
}

// ---------------------------------------------------------------- warping

/// Inverse-mapped bilinear warp of a camera frame into a target raster of
/// the given size. Output is RGBA; target pixels whose source falls outside
/// the camera frame are fully transparent.
inline Raster warp_image(const Homography& h, const Raster& camera_frame, int target_width, int target_height) {
    camera_frame.validate();
    if (target_width <= 0 || target_height <= 0) fail(ErrorCode::precondition, "target size must be positive");
    Raster out(target_width, target_height, 4, 0);
    const Matrix3& inv = h.inverse_matrix();
    const int sw = camera_frame.width, sh = camera_frame.height, ch = camera_frame.channels;
    constexpr double slack = 1e-9;

    auto sample = [&](int x, int y, int c) -> double {
        if (ch == 1) return c < 3 ? camera_frame.at(x, y, 0) : 255.0;
        if (c == 3) return ch == 4 ? camera_frame.at(x, y, 3) : 255.0;
        return camera_frame.at(x, y, c);
    };

    for (int ty = 0; ty < target_height; ++ty) {
        for (int tx = 0; tx < target_width; ++tx) {
            const auto hp = detail::apply(inv, tx, ty);
            if (!(std::abs(hp.w) >= kHorizonEpsilon)) continue;
            double u = hp.xt / hp.w, v = hp.yt / hp.w;
            if (!(u >= -slack && v >= -slack && u <= sw - 1 + slack && v <= sh - 1 + slack)) continue;
            u = std::clamp(u, 0.0, static_cast<double>(sw - 1));
            v = std::clamp(v, 0.0, static_cast<double>(sh - 1));
            const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
            const int x1 = std::min(x0 + 1, sw - 1), y1 = std::min(y0 + 1, sh - 1);
            const double fx = u - x0, fy = v - y0;
            for (int c = 0; c < 4; ++c) {
                const double top = sample(x0, y0, c) * (1 - fx) + sample(x1, y0, c) * fx;
                const double bot = sample(x0, y1, c) * (1 - fx) + sample(x1, y1, c) * fx;
                out.at(tx, ty, c) = static_cast<std::uint8_t>(std::lround(std::clamp(top * (1 - fy) + bot * fy, 0.0, 255.0)));
            }
        }
    }
    return out;
}

/// Alpha-composites `overlay` (RGBA) over `base` at the given opacity.
inline Raster blend_over(const Raster& base, const Raster& overlay, double opacity) {
    if (base.width != overlay.width || base.height != overlay.height)
        fail(ErrorCode::precondition, "blend operands differ in size");
    if (overlay.channels != 4) fail(ErrorCode::precondition, "overlay must be RGBA");
    opacity = std::clamp(opacity, 0.0, 1.0);
    Raster out(base.width, base.height, 4, 255);
    for (int y = 0; y < base.height; ++y)
        for (int x = 0; x < base.width; ++x) {
            const double a = opacity * overlay.at(x, y, 3) / 255.0;
            for (int c = 0; c < 3; ++c) {
                const double b = base.channels >= 3 ? base.at(x, y, c) : base.at(x, y, 0);
                out.at(x, y, c) = static_cast<std::uint8_t>(std::lround((1 - a) * b + a * overlay.at(x, y, c)));
            }
        }
    return out;
}

// ---------------------------------------------------------------- registry

/// One homography with optional time-of-day window and filename glob.
/// Windows are local clock times, [from, to), and may wrap midnight.
struct RegistryEntry {
    std::string id;
    Homography h;
    std::optional<double> valid_from_s;
    std::optional<double> valid_to_s;
    std::optional<std::string> filename_pattern;

    bool has_window() const { return valid_from_s.has_value() && valid_to_s.has_value(); }
    bool is_default() const { return !has_window() && !filename_pattern; }

    int specificity() const { return (filename_pattern ? 2 : 0) + (has_window() ? 1 : 0); }

    bool window_contains(double sod) const {
        if (!has_window()) return true;
        const double from = *valid_from_s, to = *valid_to_s;
        return from <= to ? (sod >= from && sod < to) : (sod >= from || sod < to);
    }

    bool pattern_matches(const std::string& filename) const {
        return !filename_pattern || ::fnmatch(filename_pattern->c_str(), filename.c_str(), 0) == 0;
    }
};

/// What select_homography needs to know about a video.
struct VideoClock {
    double start_time = 0.0;
    int utc_offset_s = 0;
    std::string filename;
};

/// Most specific matching entry: pattern+window, then pattern, then window,
/// then default. Registry order breaks ties.
inline const RegistryEntry& select_homography(std::span<const RegistryEntry> registry, const VideoClock& video) {
    if (registry.empty()) fail(ErrorCode::configuration, "homography registry is empty");
    const double sod = seconds_of_day(video.start_time, video.utc_offset_s);
    const RegistryEntry* best = nullptr;
    for (const auto& e : registry) {
        if (!e.window_contains(sod) || !e.pattern_matches(video.filename)) continue;
        if (!best || e.specificity() > best->specificity()) best = &e;
    }
    if (!best)
        fail(ErrorCode::configuration, "no homography covers this video and no default entry exists",
             {{"filename", video.filename}, {"local_time", format_time_of_day(sod)}});
    return *best;
}

// ---------------------------------------------------------------- JSON

inline nlohmann::json matrix_json(const Homography& h) {
    nlohmann::json arr = nlohmann::json::array();
    for (double v : h.row_major()) arr.push_back(v);
    return arr;
}

inline Homography homography_from_json(const nlohmann::json& j) {
    const nlohmann::json& arr = j.is_object() ? j.at("matrix") : j;
    if (!arr.is_array() || arr.size() != 9) fail(ErrorCode::schema, "homography matrix must have 9 elements");
    std::array<double, 9> v{};
    for (std::size_t i = 0; i < 9; ++i) {
        if (!arr.at(i).is_number()) fail(ErrorCode::schema, "homography entries must be numbers");
        v[i] = arr.at(i).get<double>();
    }
    return Homography::from_stored(v);
}

inline nlohmann::json to_json(const RegistryEntry& e) {
    nlohmann::json j = {{"id", e.id}, {"matrix", matrix_json(e.h)}};
    j["valid_from"] = e.valid_from_s ? nlohmann::json(format_time_of_day(*e.valid_from_s)) : nlohmann::json();
    j["valid_to"] = e.valid_to_s ? nlohmann::json(format_time_of_day(*e.valid_to_s)) : nlohmann::json();
    j["filename_pattern"] = e.filename_pattern ? nlohmann::json(*e.filename_pattern) : nlohmann::json();
    return j;
}

inline RegistryEntry registry_entry_from_json(const nlohmann::json& j) {
    try {
        RegistryEntry e;
        e.id = j.value("id", "");
        e.h = homography_from_json(j.at("matrix"));
        auto tod = [&](const char* key) -> std::optional<double> {
            if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
            return parse_time_of_day(j.at(key).get<std::string>());
        };
        e.valid_from_s = tod("valid_from");
        e.valid_to_s = tod("valid_to");
        if (e.valid_from_s.has_value() != e.valid_to_s.has_value())
            fail(ErrorCode::schema, "valid_from and valid_to must be given together");
        if (j.contains("filename_pattern") && !j.at("filename_pattern").is_null())
            e.filename_pattern = j.at("filename_pattern").get<std::string>();
        return e;
    } catch (const nlohmann::json::exception& ex) {
        fail(ErrorCode::schema, std::string("invalid homography entry: ") + ex.what());
    }
}

}  // namespace trafficrect
