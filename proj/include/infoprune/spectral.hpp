#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "infoprune/error.hpp"
#include "infoprune/matrix.hpp"
#include "infoprune/svd.hpp"

namespace infoprune {

/// Right-continuous empirical CDF over a sample set.
class EmpiricalCdf {
public:
    explicit EmpiricalCdf(const std::vector<double>& samples) : points_(samples) {
        if (points_.empty()) {
            raise(Error::Kind::EmptySpectrum, "empirical CDF needs at least one sample");
        }
        std::sort(points_.begin(), points_.end());
    }

    /// Fraction of samples <= x.
    double evaluate(double x) const {
        const auto it = std::upper_bound(points_.begin(), points_.end(), x);
        return static_cast<double>(it - points_.begin()) / static_cast<double>(points_.size());
    }

    const std::vector<double>& samplePoints() const noexcept { return points_; }

private:
    std::vector<double> points_; // ascending
};

/// Logistic-smoothed CDF: indicator I(s <= x) replaced by
/// logistic((x - s)/tau). Converges pointwise to EmpiricalCdf as tau -> 0.
class SmoothedCdf {
public:
    SmoothedCdf(const std::vector<double>& samples, double temperature)
        : points_(samples), tau_(temperature) {
        if (points_.empty()) {
            raise(Error::Kind::EmptySpectrum, "smoothed CDF needs at least one sample");
        }
        if (!(temperature > 0.0)) {
            raise(Error::Kind::InvalidConfig, "smoothed CDF temperature must be > 0");
        }
    }

    double evaluate(double x) const {
        double acc = 0.0;
        for (double s : points_) acc += logistic((x - s) / tau_);
        return acc / static_cast<double>(points_.size());
    }

    const std::vector<double>& samplePoints() const noexcept { return points_; }
    double temperature() const noexcept { return tau_; }

    static double logistic(double t) {
        if (t >= 0.0) {
            return 1.0 / (1.0 + std::exp(-t));
        }
        const double e = std::exp(t);
        return e / (1.0 + e);
    }

private:
    std::vector<double> points_;
    double tau_;
};

/// Effective rank: exp of the Shannon entropy of p_i = sigma_i / sum(sigma).
/// Terms with p_i = 0 contribute nothing (entropy limit convention).
inline double eRank(const Spectrum& spectrum) {
    if (spectrum.values.empty()) {
        raise(Error::Kind::ZeroSpectrum, "eRank: empty spectrum");
    }
    const double total = spectrum.sum();
    if (total <= 0.0) {
        raise(Error::Kind::ZeroSpectrum, "eRank: all singular values are zero");
    }
    double entropy = 0.0;
    for (double s : spectrum.values) {
        if (s <= 0.0) continue;
        const double p = s / total;
        entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

inline double eRankOfMatrix(const Matrix& a) {
    return eRank(svd(a).spectrum);
}

/// d eRank / d sigma_k = eRank * (H - ln p_k) / sum(sigma); zero singular
/// values get a zero subgradient. With logForm, the gradient of ln eRank.
inline std::vector<double> eRankGradient(const Spectrum& spectrum, bool logForm = false) {
    const double total = spectrum.sum();
    if (total <= 0.0) {
        raise(Error::Kind::ZeroSpectrum, "eRankGradient: all singular values are zero");
    }
    double entropy = 0.0;
    for (double s : spectrum.values) {
        if (s <= 0.0) continue;
        const double p = s / total;
        entropy -= p * std::log(p);
    }
    const double erank = std::exp(entropy);
    std::vector<double> grad(spectrum.count(), 0.0);
    for (std::size_t k = 0; k < spectrum.count(); ++k) {
        const double s = spectrum.values[k];
        if (s <= 0.0) continue;
        const double p = s / total;
        const double dEntropy = (entropy - std::log(p)) / total;
        grad[k] = logForm ? dEntropy : erank * dEntropy;
    }
    return grad;
}

/// Exact two-sample KS distance between singular-value spectra. The sup of a
/// difference of step functions is attained at a sample point, so scanning
/// the union of sample points is exact.
inline double ksDistance(const Spectrum& full, const Spectrum& pruned) {
    if (full.values.empty() || pruned.values.empty()) {
        raise(Error::Kind::EmptySpectrum, "ksDistance: empty spectrum");
    }
    EmpiricalCdf f1(full.values);
    EmpiricalCdf f2(pruned.values);
    double best = 0.0;
    for (double x : f1.samplePoints()) best = std::max(best, std::abs(f1.evaluate(x) - f2.evaluate(x)));
    for (double x : f2.samplePoints()) best = std::max(best, std::abs(f1.evaluate(x) - f2.evaluate(x)));
    return best;
}

/// Closed form for the KS distance between a strictly-decreasing spectrum of
/// n distinct values and its top-k truncation: (n - k) / n.
inline double ksTruncationClosedForm(std::size_t n, std::size_t k) {
    if (k < 1 || k > n) {
        raise(Error::Kind::InvalidRankPair,
              "ksTruncationClosedForm: need 1 <= k <= n, got k=" + std::to_string(k) +
                  " n=" + std::to_string(n));
    }
    return static_cast<double>(n - k) / static_cast<double>(n);
}

struct SmoothedKsValue {
    double value = 0.0;    // max |F1 - F2| found
    double supPoint = 0.0; // where it is attained
};

/// Differentiable KS surrogate: both CDFs logistic-smoothed at temperature
/// tau; sup searched over a 256-point grid spanning [0, 1.05*max sigma] plus
/// all sample points, then refined locally so the returned supPoint is a
/// stationary point of the gap (which makes the Danskin gradient exact).
inline SmoothedKsValue smoothedKs(const Spectrum& full, const Spectrum& pruned, double temperature) {
    if (full.values.empty() || pruned.values.empty()) {
        raise(Error::Kind::EmptySpectrum, "smoothedKs: empty spectrum");
    }
    if (!(temperature > 0.0)) {
        raise(Error::Kind::InvalidConfig, "smoothedKs: temperature must be > 0");
    }
    SmoothedCdf f1(full.values, temperature);
    SmoothedCdf f2(pruned.values, temperature);

    const double maxSigma = std::max(full.values.front(), pruned.values.front());
    const double hi = 1.05 * maxSigma;

    std::vector<double> grid;
    grid.reserve(256 + full.count() + pruned.count());
    for (int i = 0; i < 256; ++i) {
        grid.push_back(hi * static_cast<double>(i) / 255.0);
    }
    grid.insert(grid.end(), full.values.begin(), full.values.end());
    grid.insert(grid.end(), pruned.values.begin(), pruned.values.end());
    std::sort(grid.begin(), grid.end());

    const auto gap = [&](double x) { return std::abs(f1.evaluate(x) - f2.evaluate(x)); };

    std::size_t bestIdx = 0;
    double bestVal = -1.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double g = gap(grid[i]);
        if (g > bestVal) {
            bestVal = g;
            bestIdx = i;
        }
    }

    // golden-section refinement between the grid neighbors of the argmax
    double lo = (bestIdx > 0) ? grid[bestIdx - 1] : grid[bestIdx];
    double hiB = (bestIdx + 1 < grid.size()) ? grid[bestIdx + 1] : grid[bestIdx];
    double bestX = grid[bestIdx];
    if (hiB > lo) {
        constexpr double invPhi = 0.6180339887498949;
        double a = lo, b = hiB;
        double x1 = b - invPhi * (b - a);
        double x2 = a + invPhi * (b - a);
        double g1 = gap(x1), g2 = gap(x2);
        for (int iter = 0; iter < 200 && (b - a) > 1e-15 * std::max(1.0, hi); ++iter) {
            if (g1 < g2) {
                a = x1;
                x1 = x2;
                g1 = g2;
                x2 = a + invPhi * (b - a);
                g2 = gap(x2);
            } else {
                b = x2;
                x2 = x1;
                g2 = g1;
                x1 = b - invPhi * (b - a);
                g1 = gap(x1);
            }
        }
        const double mid = 0.5 * (a + b);
        if (gap(mid) > bestVal) {
            bestVal = gap(mid);
            bestX = mid;
        }
    }
    return {bestVal, bestX};
}

struct SmoothedKsGradient {
    double value = 0.0;
    double supPoint = 0.0;
    std::vector<double> dFull;   // d value / d full.values[i]
    std::vector<double> dPruned; // d value / d pruned.values[j]
};

/// Gradient of smoothedKs w.r.t. every singular value of both spectra,
/// by Danskin's theorem at the sup point.
inline SmoothedKsGradient smoothedKsGradient(const Spectrum& full, const Spectrum& pruned,
                                             double temperature) {
    const SmoothedKsValue v = smoothedKs(full, pruned, temperature);
    SmoothedCdf f1(full.values, temperature);
    SmoothedCdf f2(pruned.values, temperature);
    const double diff = f1.evaluate(v.supPoint) - f2.evaluate(v.supPoint);
    const double sign = (diff > 0.0) ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);

    SmoothedKsGradient out;
    out.value = v.value;
    out.supPoint = v.supPoint;
    out.dFull.resize(full.count(), 0.0);
    out.dPruned.resize(pruned.count(), 0.0);

    const double n1 = static_cast<double>(full.count());
    const double n2 = static_cast<double>(pruned.count());
    for (std::size_t i = 0; i < full.count(); ++i) {
        const double s = SmoothedCdf::logistic((v.supPoint - full.values[i]) / temperature);
        out.dFull[i] = sign * (-1.0 / (n1 * temperature)) * s * (1.0 - s);
    }
    for (std::size_t j = 0; j < pruned.count(); ++j) {
        const double s = SmoothedCdf::logistic((v.supPoint - pruned.values[j]) / temperature);
        out.dPruned[j] = sign * (1.0 / (n2 * temperature)) * s * (1.0 - s);
    }
    return out;
}

} // namespace infoprune
