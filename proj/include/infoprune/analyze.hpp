#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "infoprune/error.hpp"
#include "infoprune/gatetrain.hpp"
#include "infoprune/matrix.hpp"
#include "infoprune/toymodel.hpp"

namespace infoprune {

enum class ImportanceScope { PerLayer, Global };

/// Min-max normalized head importance scores in [0,1], layers x heads.
struct HeadImportanceMap {
    std::vector<std::vector<double>> scores;
};

/// Raw per-head attention entropies: mean Shannon entropy (base e) of the
/// attention probability rows of each head.
inline std::vector<std::vector<double>> headEntropies(const ForwardTrace& trace) {
    std::vector<std::vector<double>> out(trace.layers.size());
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
        const auto& probs = trace.layers[l].attnProbs;
        if (probs.empty()) {
            raise(Error::Kind::InvalidConfig, "headEntropies: trace has no attention probabilities");
        }
        out[l].resize(probs.size());
        for (std::size_t h = 0; h < probs.size(); ++h) {
            const Matrix& p = probs[h];
            double acc = 0.0;
            for (std::size_t r = 0; r < p.rows(); ++r) {
                double rowEntropy = 0.0;
                for (std::size_t c = 0; c < p.cols(); ++c) {
                    const double v = p(r, c);
                    if (v > 0.0) rowEntropy -= v * std::log(v);
                }
                acc += rowEntropy;
            }
            out[l][h] = acc / static_cast<double>(p.rows());
        }
    }
    return out;
}

/// Normalize negated entropies to [0,1] over the chosen scope. If every head
/// in a scope has identical entropy the whole scope maps to 0.5.
inline HeadImportanceMap headImportanceFromEntropies(
    const std::vector<std::vector<double>>& entropies, ImportanceScope scope) {
    HeadImportanceMap map;
    map.scores.resize(entropies.size());

    const auto normalize = [](std::vector<double*>& cells) {
        double lo = *cells.front(), hi = *cells.front();
        for (double* c : cells) {
            lo = std::min(lo, *c);
            hi = std::max(hi, *c);
        }
        if (hi - lo <= 0.0) {
            for (double* c : cells) *c = 0.5;
            return;
        }
        for (double* c : cells) *c = (*c - lo) / (hi - lo);
    };

    for (std::size_t l = 0; l < entropies.size(); ++l) {
        map.scores[l].resize(entropies[l].size());
        for (std::size_t h = 0; h < entropies[l].size(); ++h) {
            map.scores[l][h] = -entropies[l][h];
        }
    }
    if (scope == ImportanceScope::Global) {
        std::vector<double*> cells;
        for (auto& row : map.scores)
            for (double& v : row) cells.push_back(&v);
        if (!cells.empty()) normalize(cells);
    } else {
        for (auto& row : map.scores) {
            std::vector<double*> cells;
            for (double& v : row) cells.push_back(&v);
            if (!cells.empty()) normalize(cells);
        }
    }
    return map;
}

inline HeadImportanceMap headImportance(const ForwardTrace& trace, ImportanceScope scope) {
    return headImportanceFromEntropies(headEntropies(trace), scope);
}

/// Fraction of rows whose L1 norm falls below thresholdFraction * cols.
inline double rowDensity(const Matrix& w, double thresholdFraction = 0.05) {
    if (!(thresholdFraction > 0.0)) {
        raise(Error::Kind::InvalidConfig, "rowDensity: thresholdFraction must be > 0");
    }
    const double threshold = thresholdFraction * static_cast<double>(w.cols());
    std::size_t sparse = 0;
    for (std::size_t r = 0; r < w.rows(); ++r) {
        double l1 = 0.0;
        for (std::size_t c = 0; c < w.cols(); ++c) l1 += std::abs(w(r, c));
        if (l1 < threshold) ++sparse;
    }
    return static_cast<double>(sparse) / static_cast<double>(w.rows());
}

struct DensityRow {
    double w1 = 0.0;
    double w2 = 0.0;
    double composite = 0.0; // w1 * w2
};

struct DensityReport {
    std::vector<DensityRow> layers;
};

inline DensityReport densityReport(const Parameters& params, double thresholdFraction = 0.05) {
    DensityReport report;
    report.layers.reserve(params.layers.size());
    for (const auto& layer : params.layers) {
        DensityRow row;
        row.w1 = rowDensity(layer.w1, thresholdFraction);
        row.w2 = rowDensity(layer.w2, thresholdFraction);
        row.composite = rowDensity(matmul(layer.w1, layer.w2), thresholdFraction);
        report.layers.push_back(row);
    }
    return report;
}

struct FlopsReport {
    std::uint64_t attentionFlops = 0;
    std::uint64_t ffnFlops = 0;
    std::uint64_t totalFlops = 0;
    double speedupVsBaseline = 1.0;
};

/// FLOPs per forward pass. Per layer:
///   attention = retainedHeads*(3*s*d*dk + 2*s^2*dk) + s*d*d
///   ffn       = 2*s*d*m uncompressed, 2*s*(d*k + k*d) at retained rank k
/// ranks entries of 0 mean "layer not compressed". Softmax and normalization
/// costs are excluded.
inline FlopsReport countFlops(const ModelConfig& config, const PruneDecision* decision = nullptr,
                              const std::vector<std::size_t>* ranks = nullptr) {
    config.validate();
    const std::uint64_t s = static_cast<std::uint64_t>(config.seqLen);
    const std::uint64_t d = static_cast<std::uint64_t>(config.modelDim);
    const std::uint64_t dk = static_cast<std::uint64_t>(config.headDim());
    const std::uint64_t m = static_cast<std::uint64_t>(config.ffnHidden);
    const std::uint64_t headTerm = 3 * s * d * dk + 2 * s * s * dk;

    if (decision && static_cast<int>(decision->perLayerCounts.size()) != config.layers) {
        raise(Error::Kind::ShapeMismatch, "countFlops: decision layer count mismatch");
    }
    if (ranks && static_cast<int>(ranks->size()) != config.layers) {
        raise(Error::Kind::ShapeMismatch, "countFlops: ranks layer count mismatch");
    }

    FlopsReport report;
    std::uint64_t baseline = 0;
    for (int l = 0; l < config.layers; ++l) {
        const std::uint64_t retained =
            decision ? static_cast<std::uint64_t>(decision->perLayerCounts[static_cast<std::size_t>(l)])
                     : static_cast<std::uint64_t>(config.heads);
        report.attentionFlops += retained * headTerm + s * d * d;

        std::uint64_t ffn = 2 * s * d * m;
        if (ranks && (*ranks)[static_cast<std::size_t>(l)] > 0) {
            const std::uint64_t k = (*ranks)[static_cast<std::size_t>(l)];
            if (k > std::min(d, m)) {
                raise(Error::Kind::InvalidRank,
                      "countFlops: rank " + std::to_string(k) + " exceeds min(d, m)");
            }
            ffn = 2 * s * (d * k + k * d);
        }
        report.ffnFlops += ffn;

        baseline += static_cast<std::uint64_t>(config.heads) * headTerm + s * d * d + 2 * s * d * m;
    }
    report.totalFlops = report.attentionFlops + report.ffnFlops;
    report.speedupVsBaseline =
        static_cast<double>(baseline) / static_cast<double>(report.totalFlops);
    return report;
}

} // namespace infoprune
