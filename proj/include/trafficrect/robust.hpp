#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trafficrect/correspond.hpp"
#include "trafficrect/error.hpp"
#include "trafficrect/homography.hpp"
#include "trafficrect/rng.hpp"

namespace trafficrect {

enum class Scoring { msac, sigma_marginalized };

inline std::string_view to_string(Scoring s) { return s == Scoring::msac ? "msac" : "sigma_marginalized"; }

inline Scoring parse_scoring(std::string_view s) {
    if (s == "msac") return Scoring::msac;
    if (s == "sigma_marginalized" || s == "magsac++" || s == "magsac") return Scoring::sigma_marginalized;
    fail(ErrorCode::validation, "unknown scoring: " + std::string(s));
}

struct RobustParams {
    int max_iterations = 10000;
    double inlier_threshold = 3.0;  // px, on sqrt(symmetric transfer error)
    Scoring scoring = Scoring::sigma_marginalized;
    double sigma_max = 10.0;  // px
    double confidence = 0.999;
    std::uint64_t seed = 42;

    void validate() const {
        if (max_iterations < 1) fail(ErrorCode::validation, "max_iterations must be >= 1");
        if (!(inlier_threshold > 0.0)) fail(ErrorCode::validation, "inlier_threshold must be positive");
        if (!(sigma_max > 0.0)) fail(ErrorCode::validation, "sigma_max must be positive");
        if (!(confidence > 0.0 && confidence < 1.0)) fail(ErrorCode::validation, "confidence must lie in (0, 1)");
    }
};

struct EstimateResult {
    Homography homography;
    std::vector<bool> inlier_mask;
    double score = 0.0;
    int iterations_run = 0;
    double mean_inlier_error = 0.0;  // px

    std::size_t inlier_count() const {
        std::size_t n = 0;
        for (bool b : inlier_mask) n += b;
        return n;
    }
};

// ---------------------------------------------------------------- MAGSAC++ loss

/// Incomplete gamma functions at the half-integer orders the 4-DoF loss
/// needs, in closed form via erf/erfc.
namespace gamma {

inline double upper_3_2(double x) {
    const double sx = std::sqrt(x);
    return sx * std::exp(-x) + 0.5 * std::sqrt(std::numbers::pi) * std::erfc(sx);
}

inline double lower_3_2(double x) {
    const double sx = std::sqrt(x);
    return 0.5 * std::sqrt(std::numbers::pi) * std::erf(sx) - sx * std::exp(-x);
}

inline double lower_5_2(double x) { return 1.5 * lower_3_2(x) - x * std::sqrt(x) * std::exp(-x); }

}  // namespace gamma

/// Sigma-marginalized (MAGSAC++) loss for a residual whose square is a sum
/// of four Gaussian components, as the symmetric transfer error is. Noise
/// scale is marginalized uniformly over (0, sigma_max]. Residuals beyond
/// k * sigma_max pay the constant outlier loss, which is the limit of the
/// inlier branch, so the loss is continuous.
class MagsacLoss {
public:
    static constexpr double kDegreesOfFreedom = 4.0;
    static constexpr double kSigmaQuantile = 3.64;  // chi(4) 0.99 quantile
    static constexpr double kNormalizer = 0.25;     // 1 / (2^(dof/2) Gamma(dof/2))

    explicit MagsacLoss(double sigma_max) : sigma_max_(sigma_max) {
        const double k2_half = kSigmaQuantile * kSigmaQuantile / 2.0;
        upper_at_quantile_ = gamma::upper_3_2(k2_half);
        max_residual_sq_ = kSigmaQuantile * kSigmaQuantile * sigma_max * sigma_max;
        sigma_sq_half_ = sigma_max * sigma_max / 2.0;
        two_sigma_sq_ = 2.0 * sigma_max * sigma_max;
        scale_ = kNormalizer * std::pow(2.0, (kDegreesOfFreedom + 1.0) / 2.0) / sigma_max;
        outlier_loss_ = scale_ * sigma_sq_half_ * gamma::lower_5_2(k2_half);
    }

    double operator()(double residual_sq) const {
        if (!(residual_sq < max_residual_sq_)) return outlier_loss_;
        const double x = residual_sq / two_sigma_sq_;
        return scale_ * (sigma_sq_half_ * gamma::lower_5_2(x) + residual_sq / 4.0 * (gamma::upper_3_2(x) - upper_at_quantile_));
    }

    double outlier_loss() const noexcept { return outlier_loss_; }
    double max_residual_sq() const noexcept { return max_residual_sq_; }

private:
    double sigma_max_;
    double upper_at_quantile_ = 0.0;
    double max_residual_sq_ = 0.0;
    double sigma_sq_half_ = 0.0;
    double two_sigma_sq_ = 0.0;
    double scale_ = 1.0;
    double outlier_loss_ = 0.0;
};

// ---------------------------------------------------------------- scoring

struct ModelScore {
    double score = std::numeric_limits<double>::infinity();
    std::size_t inliers = 0;
};

inline ModelScore score_model(const Homography& h, std::span<const CorrespondencePair> pairs, const RobustParams& params,
                              const MagsacLoss& loss) {
    const double thr2 = params.inlier_threshold * params.inlier_threshold;
    ModelScore s{0.0, 0};
    for (const auto& p : pairs) {
        const double e2 = symmetric_transfer_error(h, p);
        if (e2 < thr2) ++s.inliers;
        s.score += params.scoring == Scoring::msac ? std::min(e2, thr2) : loss(e2);
    }
    return s;
}

/// Iterations needed so that an all-inlier 4-sample is drawn with the
/// requested confidence.
inline int required_iterations(double inlier_ratio, double confidence, int cap) {
    const double p_good = std::pow(inlier_ratio, 4.0);
    if (p_good >= 1.0) return 1;
    if (p_good <= 0.0) return cap;
    const double k = std::log(1.0 - confidence) / std::log(1.0 - p_good);
    if (!std::isfinite(k) || k >= cap) return cap;
    return std::max(1, static_cast<int>(std::ceil(k)));
}

/// Draws 4 distinct indices from substream `iteration`.
inline std::array<std::size_t, 4> draw_minimal_sample(std::uint64_t seed, std::uint64_t iteration, std::size_t n) {
    CounterRng rng(seed, iteration);
    std::array<std::size_t, 4> idx{};
    for (std::size_t k = 0; k < 4; ++k) {
        bool fresh = false;
        while (!fresh) {
            idx[k] = static_cast<std::size_t>(rng.below(n));
            fresh = true;
            for (std::size_t j = 0; j < k; ++j) fresh = fresh && idx[j] != idx[k];
        }
    }
    return idx;
}

inline constexpr int kLocalOptimizationRounds = 10;

/// Hypothesize-and-verify homography fit: minimal DLT samples, MSAC or
/// MAGSAC++ scoring, adaptive termination, then DLT re-fits alternating
/// with consensus until the inlier set settles. Deterministic for a given
/// seed.
inline EstimateResult estimate_robust(std::span<const CorrespondencePair> pairs, const RobustParams& params) {
    params.validate();
    const std::size_t n = pairs.size();
    if (n < kMinimalPairs)
        fail(ErrorCode::precondition, "homography estimation needs at least 4 pairs", {{"pairs", n}});

    const MagsacLoss loss(params.sigma_max);
    std::optional<Homography> best;
    ModelScore best_score;
    int iterations = 0;
    int needed = params.max_iterations;
    int degenerate_samples = 0;

    for (; iterations < needed; ++iterations) {
        const auto idx = draw_minimal_sample(params.seed, static_cast<std::uint64_t>(iterations), n);
        const std::array<CorrespondencePair, 4> sample{pairs[idx[0]], pairs[idx[1]], pairs[idx[2]], pairs[idx[3]]};
        std::optional<Homography> h;
        try {
            h = estimate_dlt(sample);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::degenerate) throw;
            ++degenerate_samples;
            continue;
        }
        const ModelScore s = score_model(*h, pairs, params, loss);
        if (s.score < best_score.score) {
            best = h;
            best_score = s;
            if (s.inliers >= kMinimalPairs) {
                const double ratio = static_cast<double>(s.inliers) / static_cast<double>(n);
                needed = std::min(params.max_iterations,
                                  std::max(iterations + 1, required_iterations(ratio, params.confidence, params.max_iterations)));
            }
        }
    }

    if (!best || best_score.inliers < kMinimalPairs)
        fail(ErrorCode::estimation_failed, "no hypothesis reached 4 inliers",
             {{"iterations", iterations},
              {"degenerate_samples", degenerate_samples},
              {"best_inliers", best ? best_score.inliers : 0},
              {"pairs", n}});

    const double thr2 = params.inlier_threshold * params.inlier_threshold;
    auto consensus = [&](const Homography& h) {
        std::vector<CorrespondencePair> in;
        for (const auto& p : pairs)
            if (symmetric_transfer_error(h, p) < thr2) in.push_back(p);
        return in;
    };

    // Local optimization: alternate DLT re-fit and consensus until the
    // inlier set stops changing or would shrink.
    Homography final_h = *best;
    auto inliers = consensus(final_h);
    for (int round = 0; round < kLocalOptimizationRounds; ++round) {
        std::optional<Homography> refit;
        try {
            refit = estimate_dlt(inliers);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::degenerate) throw;
            break;
        }
        auto next = consensus(*refit);
        if (next.size() < inliers.size() || next.size() < kMinimalPairs) break;
        final_h = *refit;
        const bool stable = next == inliers;
        inliers = std::move(next);
        if (stable) break;
    }

    EstimateResult result{final_h, std::vector<bool>(n, false), 0.0, iterations, 0.0};
    double err_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e2 = symmetric_transfer_error(final_h, pairs[i]);
        if (e2 < thr2) {
            result.inlier_mask[i] = true;
            err_sum += std::sqrt(e2);
            ++count;
        }
    }
    result.score = score_model(final_h, pairs, params, loss).score;
    result.mean_inlier_error = count ? err_sum / static_cast<double>(count) : 0.0;
    return result;
}

inline nlohmann::json to_json(const RobustParams& p) {
    return {{"max_iterations", p.max_iterations}, {"inlier_threshold", p.inlier_threshold},
            {"scoring", to_string(p.scoring)},    {"sigma_max", p.sigma_max},
            {"confidence", p.confidence},         {"seed", p.seed}};
}

/// Overlays any fields present in j onto `base`.
inline RobustParams robust_params_from_json(const nlohmann::json& j, RobustParams base = {}) {
    try {
        if (j.contains("max_iterations")) base.max_iterations = j.at("max_iterations").get<int>();
        if (j.contains("inlier_threshold")) base.inlier_threshold = j.at("inlier_threshold").get<double>();
        if (j.contains("scoring")) base.scoring = parse_scoring(j.at("scoring").get<std::string>());
        if (j.contains("sigma_max")) base.sigma_max = j.at("sigma_max").get<double>();
        if (j.contains("confidence")) base.confidence = j.at("confidence").get<double>();
        if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema, std::string("invalid robust parameters: ") + e.what());
    }
    base.validate();
    return base;
}

inline nlohmann::json to_json(const EstimateResult& r) {
    nlohmann::json mask = nlohmann::json::array();
    for (bool b : r.inlier_mask) mask.push_back(b);
    return {{"matrix", matrix_json(r.homography)},
            {"inlier_mask", mask},
            {"inlier_count", r.inlier_count()},
            {"score", r.score},
            {"iterations_run", r.iterations_run},
            {"mean_inlier_error", r.mean_inlier_error}};
}

}  // namespace trafficrect
