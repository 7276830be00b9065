#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "infoprune/error.hpp"
#include "infoprune/matrix.hpp"

namespace infoprune {

/// sigma_i > kRankTolerance * sigma_1 counts toward the numerical rank.
inline constexpr double kRankTolerance = 1e-12;

/// Gap below kDegeneracyTolerance * sigma_1 makes a singular value
/// degenerate for gradient purposes.
inline constexpr double kDegeneracyTolerance = 1e-8;

/// Descending non-negative singular values with the derived numerical rank.
struct Spectrum {
    std::vector<double> values;  // non-increasing, each >= 0
    std::size_t originRank = 0;  // count of values > kRankTolerance * values[0]

    static Spectrum fromValues(std::vector<double> v) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (v[i] < 0.0 || !std::isfinite(v[i])) {
                raise(Error::Kind::NonFiniteValue, "spectrum values must be finite and >= 0");
            }
            if (i > 0 && v[i] > v[i - 1]) {
                raise(Error::Kind::InvalidConfig, "spectrum values must be non-increasing");
            }
        }
        Spectrum s;
        s.values = std::move(v);
        s.originRank = 0;
        if (!s.values.empty()) {
            const double cutoff = kRankTolerance * s.values.front();
            for (double x : s.values) {
                if (x > cutoff) ++s.originRank;
            }
        }
        return s;
    }

    std::size_t count() const noexcept { return values.size(); }

    double sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

    double sumSquares() const {
        double s = 0.0;
        for (double v : values) s += v * v;
        return s;
    }

    /// Top-k truncation (k <= count).
    Spectrum truncated(std::size_t k) const {
        Spectrum s;
        s.values.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k));
        if (!s.values.empty()) {
            const double cutoff = kRankTolerance * s.values.front();
            for (double x : s.values)
                if (x > cutoff) ++s.originRank;
        }
        return s;
    }
};

/// Thin SVD: a = u * diag(spectrum) * vt with q = min(rows, cols).
struct SvdResult {
    Matrix u;          // m x q, orthonormal columns
    Spectrum spectrum; // q values, descending
    Matrix vt;         // q x n, orthonormal rows

    Matrix reconstruct() const {
        Matrix scaled = u; // m x q
        for (std::size_t c = 0; c < scaled.cols(); ++c) {
            const double s = spectrum.values[c];
            for (std::size_t r = 0; r < scaled.rows(); ++r) scaled(r, c) *= s;
        }
        return matmul(scaled, vt);
    }

    /// Best rank-k approximation (Eckart-Young truncation).
    Matrix reconstructRank(std::size_t k) const {
        Matrix scaled = u.colBlock(0, k);
        for (std::size_t c = 0; c < k; ++c) {
            const double s = spectrum.values[c];
            for (std::size_t r = 0; r < scaled.rows(); ++r) scaled(r, c) *= s;
        }
        return matmul(scaled, vt.rowBlock(0, k));
    }
};

namespace detail {

// One-sided Jacobi on a tall (m >= n) work matrix: orthogonalize column
// pairs until convergence; columns become u_j * sigma_j and V accumulates
// the right rotations. Fixed sweep order keeps the result deterministic.
inline bool jacobiSweeps(Matrix& work, Matrix& v) {
    const std::size_t m = work.rows();
    const std::size_t n = work.cols();
    constexpr double tol = 1e-15;
    constexpr int maxSweeps = 60;

    for (int sweep = 0; sweep < maxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = work(i, p);
                    const double wq = work(i, q);
                    app += wp * wp;
                    aqq += wq * wq;
                    apq += wp * wq;
                }
                if (apq == 0.0) continue;
                if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
                rotated = true;

                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;

                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = work(i, p);
                    const double wq = work(i, q);
                    work(i, p) = c * wp - s * wq;
                    work(i, q) = s * wp + c * wq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p);
                    const double vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) return true;
    }
    return false;
}

// Replace the (near-)zero columns of u with an orthonormal completion so the
// returned factor has orthonormal columns even for rank-deficient input.
inline void completeOrthonormalBasis(Matrix& u, const std::vector<double>& sigma, double sigmaMax) {
    const std::size_t m = u.rows();
    const std::size_t q = u.cols();
    const double cutoff = (sigmaMax > 0.0) ? 1e-13 * sigmaMax : 0.0;

    std::vector<std::size_t> live;
    for (std::size_t j = 0; j < q; ++j) {
        if (sigma[j] > cutoff) live.push_back(j);
    }
    for (std::size_t j = 0; j < q; ++j) {
        if (sigma[j] > cutoff) continue;
        // try standard basis vectors until one survives projection
        for (std::size_t cand = 0; cand < m; ++cand) {
            std::vector<double> vec(m, 0.0);
            vec[cand] = 1.0;
            for (std::size_t c : live) {
                double dot = 0.0;
                for (std::size_t i = 0; i < m; ++i) dot += u(i, c) * vec[i];
                for (std::size_t i = 0; i < m; ++i) vec[i] -= dot * u(i, c);
            }
            double norm = 0.0;
            for (double x : vec) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 0.5) {
                for (std::size_t i = 0; i < m; ++i) u(i, j) = vec[i] / norm;
                live.push_back(j);
                break;
            }
        }
    }
}

} // namespace detail

/// Thin SVD via one-sided Jacobi. Deterministic for a fixed input; accuracy
/// contract: reconstruction error <= 1e-10 * max(1, ||a||_F) and factor
/// orthonormality within 1e-8.
inline SvdResult svd(const Matrix& a) {
    if (a.empty()) {
        raise(Error::Kind::DimensionMismatch, "svd: matrix is empty");
    }
    for (double x : a.data()) {
        if (!std::isfinite(x)) raise(Error::Kind::NonFiniteValue, "svd: entry is not finite");
    }

    const bool transposed = a.rows() < a.cols();
    Matrix work = transposed ? transpose(a) : a;
    const std::size_t m = work.rows();
    const std::size_t n = work.cols();

    Matrix v = Matrix::identity(n);
    if (!detail::jacobiSweeps(work, v)) {
        raise(Error::Kind::ConvergenceFailure, "svd: Jacobi sweeps exceeded iteration cap");
    }

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += work(i, j) * work(i, j);
        sigma[j] = std::sqrt(s);
    }

    // sort descending, permuting columns of work and v alike
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

    Matrix uSorted(m, n), vSorted(n, n);
    std::vector<double> sigmaSorted(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        sigmaSorted[j] = sigma[src];
        for (std::size_t i = 0; i < m; ++i) uSorted(i, j) = work(i, src);
        for (std::size_t i = 0; i < n; ++i) vSorted(i, j) = v(i, src);
    }

    const double sigmaMax = sigmaSorted.empty() ? 0.0 : sigmaSorted.front();
    for (std::size_t j = 0; j < n; ++j) {
        if (sigmaSorted[j] > (sigmaMax > 0.0 ? 1e-13 * sigmaMax : 0.0)) {
            for (std::size_t i = 0; i < m; ++i) uSorted(i, j) /= sigmaSorted[j];
        } else {
            sigmaSorted[j] = 0.0;
        }
    }
    detail::completeOrthonormalBasis(uSorted, sigmaSorted, sigmaMax);

    SvdResult result;
    result.spectrum = Spectrum::fromValues(std::move(sigmaSorted));
    if (transposed) {
        result.u = std::move(vSorted);           // m x q with q = m here
        result.vt = transpose(uSorted);          // q x n
    } else {
        result.u = std::move(uSorted);           // m x q
        result.vt = transpose(vSorted);          // q x n
    }
    return result;
}

/// d sigma_index / dA = u_index * v_index^T. Requires sigma_index to be
/// simple: gap to both neighbors > kDegeneracyTolerance * sigma_1.
inline Matrix singularValueGradient(const SvdResult& svdResult, std::size_t index) {
    const std::size_t q = svdResult.spectrum.count();
    if (index >= q) {
        raise(Error::Kind::InvalidRank, "singularValueGradient: index out of range");
    }
    const double sigmaMax = svdResult.spectrum.values.front();
    const double gapTol = kDegeneracyTolerance * sigmaMax;
    const auto& vals = svdResult.spectrum.values;
    const double here = vals[index];
    if (index > 0 && std::abs(vals[index - 1] - here) <= gapTol) {
        raise(Error::Kind::DegenerateSingularValue,
              "singular value " + std::to_string(index) + " is degenerate with its predecessor");
    }
    if (index + 1 < q && std::abs(here - vals[index + 1]) <= gapTol) {
        raise(Error::Kind::DegenerateSingularValue,
              "singular value " + std::to_string(index) + " is degenerate with its successor");
    }

    const std::size_t m = svdResult.u.rows();
    const std::size_t n = svdResult.vt.cols();
    Matrix grad(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const double ui = svdResult.u(i, index);
        for (std::size_t j = 0; j < n; ++j) {
            grad(i, j) = ui * svdResult.vt(index, j);
        }
    }
    return grad;
}

} // namespace infoprune
