#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "infoprune/activation.hpp"
#include "infoprune/error.hpp"
#include "infoprune/matrix.hpp"
#include "infoprune/svd.hpp"

namespace infoprune {

/// Smallest epsilon accepted by the rank rule; exact equality at epsilon = 0
/// is numerically fragile.
inline constexpr double kMinEpsilon = 1e-12;

/// FFN projection pair in row-apply convention: y = phi(x * w1) * w2 with
/// w1 d x m, w2 m x d (square d x d composite).
struct FfnPair {
    Matrix w1;
    Matrix w2;
    Activation activation = Activation::Identity;

    static FfnPair create(Matrix w1, Matrix w2, Activation activation = Activation::Identity) {
        if (w1.cols() != w2.rows()) {
            raise(Error::Kind::DimensionMismatch, "FfnPair: w1.cols must equal w2.rows");
        }
        if (w1.rows() != w2.cols()) {
            raise(Error::Kind::DimensionMismatch,
                  "FfnPair: composite must be square (w1.rows must equal w2.cols)");
        }
        return FfnPair{std::move(w1), std::move(w2), activation};
    }

    std::size_t modelDim() const noexcept { return w1.rows(); }
    std::size_t hiddenDim() const noexcept { return w1.cols(); }
};

struct CompressionResult {
    Matrix w1Hat;             // d x k
    Matrix w2Hat;             // k x d
    std::size_t retainedRank; // k
    double epsilon;           // requested bound
    double achievedRelError;  // sqrt(tail energy / total energy), <= epsilon
    std::size_t originalRank; // numerical rank of the composite
};

/// Composite weight of the pair. Without an anchor (or with Identity
/// activation) this is the plain product w1 * w2; with an anchor x0 (d x 1)
/// the first-order linearization w1 * diag(phi'(x0^T w1)) * w2.
inline Matrix compositeWeight(const FfnPair& ffn, const std::optional<Matrix>& anchor = std::nullopt) {
    if (!anchor.has_value() || ffn.activation == Activation::Identity) {
        return matmul(ffn.w1, ffn.w2);
    }
    const Matrix& x0 = *anchor;
    if (x0.cols() != 1 || x0.rows() != ffn.modelDim()) {
        raise(Error::Kind::DimensionMismatch,
              "compositeWeight: anchor must be a column of length " +
                  std::to_string(ffn.modelDim()));
    }
    // pre-activations of the anchor: x0^T * w1 (length m)
    const std::size_t d = ffn.modelDim();
    const std::size_t m = ffn.hiddenDim();
    std::vector<double> pre(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += x0(i, 0) * ffn.w1(i, j);
        pre[j] = acc;
    }
    Matrix scaled = ffn.w1;
    for (std::size_t j = 0; j < m; ++j) {
        const double dphi = activationDerivative(ffn.activation, pre[j]);
        for (std::size_t i = 0; i < d; ++i) scaled(i, j) *= dphi;
    }
    return matmul(scaled, ffn.w2);
}

/// Minimal k with sum_{i<=k} sigma_i^2 >= (1 - eps^2) * sum_i sigma_i^2.
/// The total and the cumulative sums use the same left-to-right order so the
/// comparison is consistent at the boundary.
inline std::size_t adaptiveRank(const Spectrum& spectrum, double epsilon) {
    if (!(epsilon >= kMinEpsilon && epsilon <= 1.0)) {
        raise(Error::Kind::InvalidConfig,
              "adaptiveRank: epsilon must be in [1e-12, 1], got " + std::to_string(epsilon));
    }
    if (spectrum.values.empty()) {
        raise(Error::Kind::ZeroSpectrum, "adaptiveRank: empty spectrum");
    }
    double total = 0.0;
    for (double s : spectrum.values) total += s * s;
    if (total <= 0.0) {
        raise(Error::Kind::ZeroSpectrum, "adaptiveRank: all singular values are zero");
    }
    const double threshold = (1.0 - epsilon * epsilon) * total;
    double cumulative = 0.0;
    for (std::size_t k = 0; k < spectrum.count(); ++k) {
        cumulative += spectrum.values[k] * spectrum.values[k];
        if (cumulative >= threshold) return k + 1;
    }
    return spectrum.count(); // unreachable in exact arithmetic
}

/// ||original - approx||_F / ||original||_F.
inline double reconstructionError(const Matrix& original, const Matrix& approx) {
    if (!original.sameShape(approx)) {
        raise(Error::Kind::DimensionMismatch, "reconstructionError: shape mismatch");
    }
    const double norm = frobeniusNorm(original);
    if (norm == 0.0) {
        raise(Error::Kind::ZeroNorm, "reconstructionError: original has zero norm");
    }
    return frobeniusNorm(original - approx) / norm;
}

/// Adaptive low-rank compression of the composite weight: rank chosen by the
/// energy rule, factors split as w1Hat = U_k sqrt(S_k), w2Hat = sqrt(S_k) Vt_k
/// so both factors carry equal energy.
inline CompressionResult compress(const FfnPair& ffn, double epsilon,
                                  const std::optional<Matrix>& anchor = std::nullopt) {
    const Matrix composite = compositeWeight(ffn, anchor);
    const SvdResult dec = svd(composite);
    const std::size_t k = adaptiveRank(dec.spectrum, epsilon);

    const std::size_t d = composite.rows();
    Matrix w1Hat(d, k);
    Matrix w2Hat(k, d);
    for (std::size_t j = 0; j < k; ++j) {
        const double root = std::sqrt(dec.spectrum.values[j]);
        for (std::size_t i = 0; i < d; ++i) w1Hat(i, j) = dec.u(i, j) * root;
        for (std::size_t i = 0; i < d; ++i) w2Hat(j, i) = root * dec.vt(j, i);
    }

    double total = 0.0;
    for (double s : dec.spectrum.values) total += s * s;
    double cumulative = 0.0;
    for (std::size_t j = 0; j < k; ++j) cumulative += dec.spectrum.values[j] * dec.spectrum.values[j];
    const double tail = std::max(0.0, total - cumulative);
    const double achieved = std::sqrt(tail / total);

    return CompressionResult{std::move(w1Hat), std::move(w2Hat), k,
                             epsilon, achieved, dec.spectrum.originRank};
}

} // namespace infoprune
