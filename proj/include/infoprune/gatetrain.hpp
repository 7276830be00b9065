#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "infoprune/error.hpp"
#include "infoprune/matrix.hpp"
#include "infoprune/rng.hpp"
#include "infoprune/spectral.hpp"
#include "infoprune/svd.hpp"
#include "infoprune/toymodel.hpp"

namespace infoprune {

enum class LrDecay { None, Cosine, StepHalving };
enum class IbScope { Step, Batch };
enum class IbAggregate { Sum, Mean };

struct TrainConfig {
    double alpha = 0.01;  // L1 weight on zeta
    double beta = 0.01;   // effective-rank term weight
    double gamma = 0.1;   // KS term weight
    double learningRate = 1e-2;
    int epochs = 1;
    LrDecay lrDecay = LrDecay::None;
    double pruneThreshold = 0.5;   // z in (0,1)
    double ksTemperature = 0.0;    // <= 0 selects the automatic schedule
    bool trainWeightsToo = true;
    int batchSize = 1;
    int stepsPerEpoch = 1;
    std::uint64_t seed = 0;
    bool erankLog = false;         // use log-eRank differences
    IbScope ibScope = IbScope::Step;
    IbAggregate ibAggregate = IbAggregate::Sum;

    void validate() const {
        if (!(pruneThreshold > 0.0 && pruneThreshold < 1.0)) {
            raise(Error::Kind::InvalidThreshold, "pruneThreshold must lie strictly in (0,1)");
        }
        if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) {
            raise(Error::Kind::InvalidConfig, "loss weights must be non-negative");
        }
        if (epochs < 0 || batchSize < 1 || stepsPerEpoch < 1) {
            raise(Error::Kind::InvalidConfig, "epochs must be >= 0, batchSize/stepsPerEpoch >= 1");
        }
        if (!(learningRate > 0.0)) {
            raise(Error::Kind::InvalidConfig, "learningRate must be > 0");
        }
    }
};

struct LossBreakdown {
    double task = 0.0;
    double l1 = 0.0;
    double eRankTerm = 0.0; // sum over layers of eRank(Z_S) - eRank(Z)
    double ksTerm = 0.0;    // sum over layers of smoothed KS
    double total = 0.0;
};

struct TrainStepRecord {
    int step = 0;
    LossBreakdown loss;
    double lr = 0.0;
};

namespace detail {

struct IbTerms {
    double eRankTerm = 0.0;
    double ksTerm = 0.0;
    std::vector<Matrix> gZ;  // d(beta*eRank + gamma*KS)/dZ per layer
    std::vector<Matrix> gZs; // same w.r.t. Z_S
};

// Spectral loss terms over a forward trace, with optional gradients chained
// through d sigma_i / dM = u_i v_i^T. The full sum over singular directions
// is well defined even for repeated singular values because the per-value
// coefficients depend on sigma alone.
inline IbTerms computeIbTerms(const ForwardTrace& trace, const TrainConfig& cfg,
                              bool withGradients) {
    IbTerms terms;
    const std::size_t layerCount = trace.layers.size();
    const double aggScale =
        (cfg.ibAggregate == IbAggregate::Mean && layerCount > 0)
            ? 1.0 / static_cast<double>(layerCount)
            : 1.0;
    if (withGradients) {
        terms.gZ.resize(layerCount);
        terms.gZs.resize(layerCount);
    }
    const bool wantERank = cfg.beta != 0.0;
    const bool wantKs = cfg.gamma != 0.0;
    if (!wantERank && !wantKs) return terms;
    if (wantKs && !(cfg.ksTemperature > 0.0)) {
        raise(Error::Kind::InvalidConfig, "ksTemperature must be > 0 when gamma != 0");
    }

    for (std::size_t l = 0; l < layerCount; ++l) {
        const Matrix& z = trace.layers[l].ungatedConcat;
        const Matrix& zs = trace.layers[l].gatedConcat;
        const SvdResult svdZ = svd(z);
        const SvdResult svdZs = svd(zs);

        std::vector<double> coefZ(svdZ.spectrum.count(), 0.0);
        std::vector<double> coefZs(svdZs.spectrum.count(), 0.0);

        if (wantERank) {
            const double eZ = cfg.erankLog ? std::log(eRank(svdZ.spectrum)) : eRank(svdZ.spectrum);
            const double eZs = cfg.erankLog ? std::log(eRank(svdZs.spectrum)) : eRank(svdZs.spectrum);
            terms.eRankTerm += aggScale * (eZs - eZ);
            if (withGradients) {
                const auto gradZ = eRankGradient(svdZ.spectrum, cfg.erankLog);
                const auto gradZs = eRankGradient(svdZs.spectrum, cfg.erankLog);
                for (std::size_t i = 0; i < coefZ.size(); ++i) {
                    coefZ[i] -= cfg.beta * aggScale * gradZ[i];
                }
                for (std::size_t i = 0; i < coefZs.size(); ++i) {
                    coefZs[i] += cfg.beta * aggScale * gradZs[i];
                }
            }
        }
        if (wantKs) {
            if (withGradients) {
                const auto ks = smoothedKsGradient(svdZ.spectrum, svdZs.spectrum, cfg.ksTemperature);
                terms.ksTerm += aggScale * ks.value;
                for (std::size_t i = 0; i < coefZ.size(); ++i) {
                    coefZ[i] += cfg.gamma * aggScale * ks.dFull[i];
                }
                for (std::size_t i = 0; i < coefZs.size(); ++i) {
                    coefZs[i] += cfg.gamma * aggScale * ks.dPruned[i];
                }
            } else {
                terms.ksTerm += aggScale * smoothedKs(svdZ.spectrum, svdZs.spectrum, cfg.ksTemperature).value;
            }
        }

        if (withGradients) {
            const auto accumulate = [](const SvdResult& dec, const std::vector<double>& coef) {
                Matrix g(dec.u.rows(), dec.vt.cols());
                for (std::size_t idx = 0; idx < coef.size(); ++idx) {
                    if (coef[idx] == 0.0) continue;
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                        const double cu = coef[idx] * dec.u(r, idx);
                        for (std::size_t c = 0; c < g.cols(); ++c) {
                            g(r, c) += cu * dec.vt(idx, c);
                        }
                    }
                }
                return g;
            };
            terms.gZ[l] = accumulate(svdZ, coefZ);
            terms.gZs[l] = accumulate(svdZs, coefZs);
        }
    }
    return terms;
}

// AdamW with decoupled weight decay 0 (the L1 term regularizes zeta
// explicitly); beta1 0.9, beta2 0.999, eps 1e-8.
struct AdamBuffer {
    std::vector<double> m, v;

    void step(std::vector<double>& param, const std::vector<double>& grad, double lr, int t) {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        if (m.empty()) {
            m.assign(param.size(), 0.0);
            v.assign(param.size(), 0.0);
        }
        const double c1 = 1.0 - std::pow(b1, t);
        const double c2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < param.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

struct LayerAdamState {
    AdamBuffer wq, wk, wv, wo, w1, w2, ln1Gain, ln1Bias, ln2Gain, ln2Bias;
};

inline double scheduledLr(const TrainConfig& cfg, int step, int totalSteps) {
    switch (cfg.lrDecay) {
    case LrDecay::None:
        return cfg.learningRate;
    case LrDecay::Cosine: {
        const double progress =
            (totalSteps > 0) ? static_cast<double>(step) / static_cast<double>(totalSteps) : 0.0;
        return cfg.learningRate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
    }
    case LrDecay::StepHalving: {
        const int epoch = (cfg.stepsPerEpoch > 0) ? step / cfg.stepsPerEpoch : 0;
        return cfg.learningRate * std::pow(0.5, epoch);
    }
    }
    return cfg.learningRate;
}

} // namespace detail

/// Assemble the combined loss from a forward trace and an already-computed
/// task loss: total = task + alpha*||zeta||_1 + beta*eRankTerm + gamma*ksTerm.
/// Spectral terms are evaluated on the SVD spectra of Z and Z_S per layer.
inline LossBreakdown computeLoss(const ForwardTrace& trace, double taskLoss, const GateSet& gates,
                                 const TrainConfig& cfg) {
    LossBreakdown loss;
    loss.task = taskLoss;
    loss.l1 = gates.l1Norm();
    const detail::IbTerms ib = detail::computeIbTerms(trace, cfg, false);
    loss.eRankTerm = ib.eRankTerm;
    loss.ksTerm = ib.ksTerm;
    loss.total = loss.task + cfg.alpha * loss.l1 + cfg.beta * loss.eRankTerm + cfg.gamma * loss.ksTerm;
    return loss;
}

struct TrainResult {
    Parameters params;
    GateSet gates;
    std::vector<TrainStepRecord> history;
};

/// Analytic gradient of the full combined loss w.r.t. every zeta (and, when
/// requested, the model weights) for a single sample. Exposed for the
/// gradient-fidelity checks; trainGates uses the same path.
struct SampleGradients {
    LossBreakdown loss;
    std::vector<std::vector<double>> zetaGrads;
    std::vector<LayerGrads> paramGrads;
};

inline SampleGradients sampleLossGradients(const Parameters& params, const GateSet& gates,
                                           const Matrix& input, const Matrix& target,
                                           const TrainConfig& cfg) {
    const auto gvals = gateValues(params, gates);
    const ForwardResult fwd = forwardWithGateValues(params, gvals, input);
    const double task = mseLoss(fwd.output, target);
    const Matrix dOut = mseLossGradient(fwd.output, target);

    const bool wantIb = (cfg.beta != 0.0 || cfg.gamma != 0.0);
    const detail::IbTerms ib = detail::computeIbTerms(fwd.trace, cfg, wantIb);
    const BackwardResult back =
        backwardWithInjected(params, gvals, input, dOut, ib.gZ, ib.gZs);

    SampleGradients out;
    out.loss.task = task;
    out.loss.l1 = gates.l1Norm();
    out.loss.eRankTerm = ib.eRankTerm;
    out.loss.ksTerm = ib.ksTerm;
    out.loss.total = task + cfg.alpha * out.loss.l1 + cfg.beta * ib.eRankTerm + cfg.gamma * ib.ksTerm;
    out.zetaGrads = back.zetaGrads;
    for (std::size_t l = 0; l < out.zetaGrads.size(); ++l) {
        for (std::size_t h = 0; h < out.zetaGrads[l].size(); ++h) {
            const double z = gates.zetaAt(static_cast<int>(l), static_cast<int>(h));
            const double sgn = (z > 0.0) ? 1.0 : (z < 0.0 ? -1.0 : 0.0);
            out.zetaGrads[l][h] += cfg.alpha * sgn;
        }
    }
    out.paramGrads = std::move(back.paramGrads);
    return out;
}

/// Optimize the head gates (and optionally the weights) against the combined
/// loss with AdamW. Deterministic for a fixed config and dataset.
inline TrainResult trainGates(const Parameters& model, const GateSet& initialGates,
                              const Dataset& dataset, const TrainConfig& cfg) {
    cfg.validate();
    if (dataset.inputs.empty() || dataset.inputs.size() != dataset.targets.size()) {
        raise(Error::Kind::InvalidConfig, "trainGates: dataset is empty or inconsistent");
    }

    TrainResult result;
    result.params = model;
    result.gates = initialGates;

    const int totalSteps = cfg.epochs * cfg.stepsPerEpoch;
    if (totalSteps == 0) return result;

    const std::size_t layerCount = result.params.layers.size();

    // automatic KS temperature: 0.05 * (max sigma of Z at step 0), halved
    // each epoch down to a floor of 1e-4 * that sigma
    double sigmaMax0 = 0.0;
    TrainConfig stepCfg = cfg;
    if (cfg.gamma != 0.0 && !(cfg.ksTemperature > 0.0)) {
        const auto gvals = gateValues(result.params, result.gates);
        const ForwardResult probe = forwardWithGateValues(result.params, gvals, dataset.inputs[0]);
        for (const auto& lt : probe.trace.layers) {
            const Spectrum s = svd(lt.ungatedConcat).spectrum;
            if (!s.values.empty()) sigmaMax0 = std::max(sigmaMax0, s.values.front());
        }
        if (sigmaMax0 <= 0.0) {
            raise(Error::Kind::ZeroSpectrum, "trainGates: zero activations at step 0");
        }
    }

    detail::AdamBuffer zetaAdam;
    std::vector<detail::LayerAdamState> weightAdam(layerCount);

    // deterministic epoch shuffles of the sample order
    Rng shuffleRng(cfg.seed);
    std::vector<std::size_t> order(dataset.inputs.size());
    std::iota(order.begin(), order.end(), 0);

    const auto adamMatrix = [](Matrix& param, const Matrix& grad, detail::AdamBuffer& buf,
                               double lr, int t) {
        buf.step(param.data(), grad.data(), lr, t);
    };

    result.history.reserve(static_cast<std::size_t>(totalSteps));
    for (int step = 0; step < totalSteps; ++step) {
        if (cfg.stepsPerEpoch > 0 && step % cfg.stepsPerEpoch == 0) {
            for (std::size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[shuffleRng.nextBounded(i)]);
            }
            if (cfg.gamma != 0.0 && !(cfg.ksTemperature > 0.0)) {
                const int epoch = step / cfg.stepsPerEpoch;
                stepCfg.ksTemperature =
                    std::max(0.05 * sigmaMax0 * std::pow(0.5, epoch), 1e-4 * sigmaMax0);
            }
        }

        std::vector<std::vector<double>> zetaGrad(layerCount);
        for (std::size_t l = 0; l < layerCount; ++l) {
            zetaGrad[l].assign(static_cast<std::size_t>(result.params.layers[l].headCount), 0.0);
        }
        std::vector<LayerGrads> weightGrad;
        double taskSum = 0.0, eRankTerm = 0.0, ksTerm = 0.0;

        const auto gvals = gateValues(result.params, result.gates);
        const double invBatch = 1.0 / static_cast<double>(cfg.batchSize);

        for (int j = 0; j < cfg.batchSize; ++j) {
            const std::size_t pick =
                order[(static_cast<std::size_t>(step) * cfg.batchSize + j) % order.size()];
            const Matrix& input = dataset.inputs[pick];
            const Matrix& target = dataset.targets[pick];

            const ForwardResult fwd = forwardWithGateValues(result.params, gvals, input);
            taskSum += mseLoss(fwd.output, target);
            Matrix dOut = mseLossGradient(fwd.output, target);
            for (double& e : dOut.data()) e *= invBatch;

            const bool ibHere =
                (cfg.beta != 0.0 || cfg.gamma != 0.0) &&
                (cfg.ibScope == IbScope::Batch || j == cfg.batchSize - 1);
            detail::IbTerms ib;
            if (ibHere) {
                ib = detail::computeIbTerms(fwd.trace, stepCfg, true);
                const double ibScale = (cfg.ibScope == IbScope::Batch) ? invBatch : 1.0;
                eRankTerm += ibScale * ib.eRankTerm;
                ksTerm += ibScale * ib.ksTerm;
                if (ibScale != 1.0) {
                    for (auto& g : ib.gZ)
                        for (double& e : g.data()) e *= ibScale;
                    for (auto& g : ib.gZs)
                        for (double& e : g.data()) e *= ibScale;
                }
            }

            const BackwardResult back =
                backwardWithInjected(result.params, gvals, input, dOut, ib.gZ, ib.gZs);
            for (std::size_t l = 0; l < layerCount; ++l) {
                for (std::size_t h = 0; h < zetaGrad[l].size(); ++h) {
                    zetaGrad[l][h] += back.zetaGrads[l][h];
                }
            }
            if (cfg.trainWeightsToo) {
                if (weightGrad.empty()) {
                    weightGrad = back.paramGrads;
                } else {
                    for (std::size_t l = 0; l < layerCount; ++l) {
                        LayerGrads& acc = weightGrad[l];
                        const LayerGrads& add = back.paramGrads[l];
                        addInPlace(acc.wq, add.wq);
                        addInPlace(acc.wk, add.wk);
                        addInPlace(acc.wv, add.wv);
                        addInPlace(acc.wo, add.wo);
                        addInPlace(acc.w1, add.w1);
                        addInPlace(acc.w2, add.w2);
                        for (std::size_t i = 0; i < acc.ln1Gain.size(); ++i) {
                            acc.ln1Gain[i] += add.ln1Gain[i];
                            acc.ln1Bias[i] += add.ln1Bias[i];
                            acc.ln2Gain[i] += add.ln2Gain[i];
                            acc.ln2Bias[i] += add.ln2Bias[i];
                        }
                    }
                }
            }
        }

        LossBreakdown loss;
        loss.task = taskSum * invBatch;
        loss.l1 = result.gates.l1Norm();
        loss.eRankTerm = eRankTerm;
        loss.ksTerm = ksTerm;
        loss.total =
            loss.task + cfg.alpha * loss.l1 + cfg.beta * loss.eRankTerm + cfg.gamma * loss.ksTerm;
        if (!std::isfinite(loss.total)) {
            raise(Error::Kind::NonFiniteLoss, "non-finite loss at step " + std::to_string(step));
        }

        const double lr = detail::scheduledLr(cfg, step, totalSteps);
        const int t = step + 1;

        // L1 subgradient acts directly on zeta
        std::vector<double> flatZeta;
        std::vector<double> flatGrad;
        flatZeta.reserve(result.gates.zeta.size());
        for (std::size_t l = 0; l < layerCount; ++l) {
            for (std::size_t h = 0; h < zetaGrad[l].size(); ++h) {
                const double z = result.gates.zetaAt(static_cast<int>(l), static_cast<int>(h));
                const double sgn = (z > 0.0) ? 1.0 : (z < 0.0 ? -1.0 : 0.0);
                flatZeta.push_back(z);
                flatGrad.push_back(zetaGrad[l][h] + cfg.alpha * sgn);
            }
        }
        zetaAdam.step(flatZeta, flatGrad, lr, t);
        std::size_t flatIdx = 0;
        for (std::size_t l = 0; l < layerCount; ++l) {
            for (std::size_t h = 0; h < zetaGrad[l].size(); ++h) {
                result.gates.zetaAt(static_cast<int>(l), static_cast<int>(h)) = flatZeta[flatIdx++];
            }
        }

        if (cfg.trainWeightsToo) {
            for (std::size_t l = 0; l < layerCount; ++l) {
                LayerParams& lp = result.params.layers[l];
                LayerGrads& g = weightGrad[l];
                detail::LayerAdamState& st = weightAdam[l];
                adamMatrix(lp.wq, g.wq, st.wq, lr, t);
                adamMatrix(lp.wk, g.wk, st.wk, lr, t);
                adamMatrix(lp.wv, g.wv, st.wv, lr, t);
                adamMatrix(lp.wo, g.wo, st.wo, lr, t);
                adamMatrix(lp.w1, g.w1, st.w1, lr, t);
                adamMatrix(lp.w2, g.w2, st.w2, lr, t);
                st.ln1Gain.step(lp.ln1Gain, g.ln1Gain, lr, t);
                st.ln1Bias.step(lp.ln1Bias, g.ln1Bias, lr, t);
                st.ln2Gain.step(lp.ln2Gain, g.ln2Gain, lr, t);
                st.ln2Bias.step(lp.ln2Bias, g.ln2Bias, lr, t);
            }
        }

        result.history.push_back(TrainStepRecord{step, loss, lr});
    }
    return result;
}

struct PruneDecision {
    int layers = 0;
    int heads = 0;
    std::set<std::pair<int, int>> retained;
    double prunedRatio = 0.0;
    std::vector<int> perLayerCounts;
    std::vector<std::vector<double>> gateValues; // sigmoid(zeta), all heads
};

/// Threshold rule: head (l,h) is retained iff sigmoid(zeta_{l,h}) >= z.
inline PruneDecision pruneHeads(const GateSet& gates, double z) {
    if (!(z > 0.0 && z < 1.0)) {
        raise(Error::Kind::InvalidThreshold, "prune threshold must lie strictly in (0,1)");
    }
    PruneDecision decision;
    decision.layers = gates.layers;
    decision.heads = gates.heads;
    decision.perLayerCounts.assign(static_cast<std::size_t>(gates.layers), 0);
    decision.gateValues.assign(static_cast<std::size_t>(gates.layers),
                               std::vector<double>(static_cast<std::size_t>(gates.heads), 0.0));
    for (int l = 0; l < gates.layers; ++l) {
        for (int h = 0; h < gates.heads; ++h) {
            const double g = gates.gate(l, h);
            decision.gateValues[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)] = g;
            if (g >= z) {
                decision.retained.insert({l, h});
                ++decision.perLayerCounts[static_cast<std::size_t>(l)];
            }
        }
    }
    const double total = static_cast<double>(gates.layers) * gates.heads;
    decision.prunedRatio = 1.0 - static_cast<double>(decision.retained.size()) / total;
    return decision;
}

/// Physically shrink the attention projections to the retained heads,
/// folding each retained head's gate into its output-projection rows. If a
/// layer would lose every head, its single highest-gate head is kept.
inline Parameters applyPruning(const Parameters& model, const PruneDecision& decision) {
    if (decision.layers != static_cast<int>(model.layers.size())) {
        raise(Error::Kind::ShapeMismatch, "applyPruning: decision layer count mismatch");
    }
    const std::size_t dk = static_cast<std::size_t>(model.config.headDim());
    Parameters pruned;
    pruned.config = model.config;
    pruned.layers.reserve(model.layers.size());

    for (int l = 0; l < decision.layers; ++l) {
        const LayerParams& src = model.layers[static_cast<std::size_t>(l)];
        if (src.headCount != decision.heads) {
            raise(Error::Kind::ShapeMismatch, "applyPruning: model already pruned or head mismatch");
        }
        std::vector<int> keep;
        for (int h = 0; h < decision.heads; ++h) {
            if (decision.retained.count({l, h})) keep.push_back(h);
        }
        if (keep.empty()) {
            // empty-layer guard: keep the strongest gate
            int best = 0;
            for (int h = 1; h < decision.heads; ++h) {
                if (decision.gateValues[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)] >
                    decision.gateValues[static_cast<std::size_t>(l)][static_cast<std::size_t>(best)]) {
                    best = h;
                }
            }
            keep.push_back(best);
        }

        LayerParams dst;
        dst.headCount = static_cast<int>(keep.size());
        dst.wq = Matrix(src.wq.rows(), keep.size() * dk);
        dst.wk = Matrix(src.wk.rows(), keep.size() * dk);
        dst.wv = Matrix(src.wv.rows(), keep.size() * dk);
        dst.wo = Matrix(keep.size() * dk, src.wo.cols());
        for (std::size_t slot = 0; slot < keep.size(); ++slot) {
            const std::size_t h = static_cast<std::size_t>(keep[slot]);
            dst.wq.setColBlock(slot * dk, src.wq.colBlock(h * dk, dk));
            dst.wk.setColBlock(slot * dk, src.wk.colBlock(h * dk, dk));
            dst.wv.setColBlock(slot * dk, src.wv.colBlock(h * dk, dk));
            Matrix woBlock = src.wo.rowBlock(h * dk, dk);
            const double g = decision.gateValues[static_cast<std::size_t>(l)][h];
            for (double& e : woBlock.data()) e *= g;
            dst.wo.setRowBlock(slot * dk, woBlock);
        }
        dst.ln1Gain = src.ln1Gain;
        dst.ln1Bias = src.ln1Bias;
        dst.ln2Gain = src.ln2Gain;
        dst.ln2Bias = src.ln2Bias;
        dst.w1 = src.w1;
        dst.w2 = src.w2;
        dst.ffnFactored = src.ffnFactored;
        pruned.layers.push_back(std::move(dst));
    }
    return pruned;
}

} // namespace infoprune
