#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "trafficrect/error.hpp"

namespace trafficrect {

/// Quantile by linear interpolation between closest ranks: position
/// q * (n - 1) on the ascending order statistics. Selection uses
/// nth_element, so the input is copied but never fully sorted.
inline double quantile(std::span<const double> values, double q) {
    if (values.empty()) fail(ErrorCode::precondition, "quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) fail(ErrorCode::validation, "quantile level outside [0, 1]");

    std::vector<double> work(values.begin(), values.end());
    const double pos = q * static_cast<double>(work.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);

    std::nth_element(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(lo), work.end());
    const double lower = work[lo];
    if (frac == 0.0 || lo + 1 >= work.size()) return lower;
    const double upper = *std::min_element(work.begin() + static_cast<std::ptrdiff_t>(lo) + 1, work.end());
    return lower + frac * (upper - lower);
}

/// Empirical CDF over a sample: F(x) = #{s <= x} / n.
class Ecdf {
public:
    explicit Ecdf(std::vector<double> samples) : sorted_(std::move(samples)) {
        if (sorted_.empty()) fail(ErrorCode::precondition, "ECDF of an empty sample");
        std::sort(sorted_.begin(), sorted_.end());
    }

    double operator()(double x) const {
        const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), x);
        return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
    }

    double quantile(double q) const { return trafficrect::quantile(sorted_, q); }

    const std::vector<double>& sorted() const noexcept { return sorted_; }

private:
    std::vector<double> sorted_;
};

}  // namespace trafficrect
