#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "infoprune/activation.hpp"
#include "infoprune/error.hpp"
#include "infoprune/matrix.hpp"
#include "infoprune/rng.hpp"

namespace infoprune {

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct ModelConfig {
    int layers = 2;
    int heads = 2;
    int modelDim = 16;
    int ffnHidden = 32;
    int seqLen = 8;
    std::uint64_t seed = 0;
    Activation activation = Activation::ReLU;

    int headDim() const { return modelDim / heads; }

    void validate() const {
        if (layers < 1 || heads < 1 || modelDim < 1 || ffnHidden < 1 || seqLen < 1) {
            raise(Error::Kind::InvalidConfig, "model dimensions must be >= 1");
        }
        if (modelDim % heads != 0) {
            raise(Error::Kind::InvalidConfig, "modelDim must be divisible by heads");
        }
    }
};

/// Learnable head-importance parameters; gate(l,h) = sigmoid(zeta[l,h]).
struct GateSet {
    int layers = 0;
    int heads = 0;
    std::vector<double> zeta; // layers * heads, row-major

    static GateSet init(int layers, int heads, double zeta0 = 4.0) {
        GateSet g;
        g.layers = layers;
        g.heads = heads;
        g.zeta.assign(static_cast<std::size_t>(layers) * heads, zeta0);
        return g;
    }

    double& zetaAt(int l, int h) { return zeta[static_cast<std::size_t>(l) * heads + h]; }
    double zetaAt(int l, int h) const { return zeta[static_cast<std::size_t>(l) * heads + h]; }
    double gate(int l, int h) const { return sigmoid(zetaAt(l, h)); }

    double l1Norm() const {
        double s = 0.0;
        for (double z : zeta) s += std::abs(z);
        return s;
    }
};

/// One transformer block's parameters. Pruned models carry headCount < the
/// config's head count; factored FFNs apply linearly without the activation.
struct LayerParams {
    Matrix wq, wk, wv;            // d x (headCount * headDim)
    Matrix wo;                    // (headCount * headDim) x d
    std::vector<double> ln1Gain, ln1Bias; // length d
    std::vector<double> ln2Gain, ln2Bias;
    Matrix w1, w2;                // FFN pair (possibly factored d x k, k x d)
    bool ffnFactored = false;
    int headCount = 0;
};

struct Parameters {
    ModelConfig config;
    std::vector<LayerParams> layers;

    std::size_t parameterCount() const {
        std::size_t n = 0;
        for (const auto& layer : layers) {
            n += layer.wq.size() + layer.wk.size() + layer.wv.size() + layer.wo.size();
            n += layer.ln1Gain.size() + layer.ln1Bias.size();
            n += layer.ln2Gain.size() + layer.ln2Bias.size();
            n += layer.w1.size() + layer.w2.size();
        }
        return n;
    }
};

/// Per-layer forward observations used by the loss terms and diagnostics.
struct LayerTrace {
    std::vector<Matrix> headOutputs; // headCount matrices, seqLen x headDim
    Matrix ungatedConcat;            // Z, seqLen x d
    Matrix gatedConcat;              // Z_S, seqLen x d
    std::vector<Matrix> attnProbs;   // headCount matrices, seqLen x seqLen
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;
};

struct ForwardResult {
    Matrix output;
    ForwardTrace trace;
};

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

struct LnCache {
    std::vector<double> mean;   // per row
    std::vector<double> invStd; // per row
};

inline Matrix layerNorm(const Matrix& x, const std::vector<double>& gain,
                        const std::vector<double>& bias, LnCache& cache) {
    const std::size_t rows = x.rows(), cols = x.cols();
    Matrix out(rows, cols);
    cache.mean.resize(rows);
    cache.invStd.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mean += x(r, c);
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double d = x(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double invStd = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.mean[r] = mean;
        cache.invStd[r] = invStd;
        for (std::size_t c = 0; c < cols; ++c) {
            out(r, c) = gain[c] * (x(r, c) - mean) * invStd + bias[c];
        }
    }
    return out;
}

inline Matrix layerNormBackward(const Matrix& x, const LnCache& cache,
                                const std::vector<double>& gain, const Matrix& dOut,
                                std::vector<double>& dGain, std::vector<double>& dBias) {
    const std::size_t rows = x.rows(), cols = x.cols();
    Matrix dX(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const double invStd = cache.invStd[r];
        const double mean = cache.mean[r];
        double meanDxhat = 0.0, meanDxhatXhat = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double xhat = (x(r, c) - mean) * invStd;
            const double dy = dOut(r, c);
            dGain[c] += dy * xhat;
            dBias[c] += dy;
            const double dxhat = dy * gain[c];
            meanDxhat += dxhat;
            meanDxhatXhat += dxhat * xhat;
        }
        meanDxhat /= static_cast<double>(cols);
        meanDxhatXhat /= static_cast<double>(cols);
        for (std::size_t c = 0; c < cols; ++c) {
            const double xhat = (x(r, c) - mean) * invStd;
            const double dxhat = dOut(r, c) * gain[c];
            dX(r, c) = invStd * (dxhat - meanDxhat - xhat * meanDxhatXhat);
        }
    }
    return dX;
}

inline Matrix softmaxRows(const Matrix& scores) {
    Matrix out(scores.rows(), scores.cols());
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        double rowMax = scores(r, 0);
        for (std::size_t c = 1; c < scores.cols(); ++c) rowMax = std::max(rowMax, scores(r, c));
        double sum = 0.0;
        for (std::size_t c = 0; c < scores.cols(); ++c) {
            const double e = std::exp(scores(r, c) - rowMax);
            out(r, c) = e;
            sum += e;
        }
        for (std::size_t c = 0; c < scores.cols(); ++c) out(r, c) /= sum;
    }
    return out;
}

struct LayerCache {
    Matrix xIn;
    Matrix a; // post-LN1
    LnCache ln1;
    Matrix q, k, v; // seqLen x (headCount * headDim), concatenated per head
    std::vector<Matrix> probs;
    std::vector<Matrix> heads;
    Matrix z, zs;
    Matrix xMid;
    Matrix b; // post-LN2
    LnCache ln2;
    Matrix hPre, hAct;
};

struct FullCache {
    std::vector<LayerCache> layers;
    Matrix output;
};

inline void runForward(const Parameters& params, const std::vector<std::vector<double>>& gates,
                       const Matrix& input, ForwardTrace* trace, FullCache* cache) {
    const auto& cfg = params.config;
    if (input.rows() != static_cast<std::size_t>(cfg.seqLen) ||
        input.cols() != static_cast<std::size_t>(cfg.modelDim)) {
        raise(Error::Kind::DimensionMismatch, "forward: input must be seqLen x modelDim");
    }
    const std::size_t dk = static_cast<std::size_t>(cfg.headDim());
    const std::size_t seq = input.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    Matrix x = input;
    if (trace) trace->layers.clear();
    if (cache) cache->layers.clear();

    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const LayerParams& lp = params.layers[l];
        const std::size_t hc = static_cast<std::size_t>(lp.headCount);

        LayerCache lc;
        lc.xIn = x;
        lc.a = layerNorm(x, lp.ln1Gain, lp.ln1Bias, lc.ln1);
        lc.q = matmul(lc.a, lp.wq);
        lc.k = matmul(lc.a, lp.wk);
        lc.v = matmul(lc.a, lp.wv);

        lc.z = Matrix(seq, hc * dk);
        lc.zs = Matrix(seq, hc * dk);
        lc.probs.resize(hc);
        lc.heads.resize(hc);
        for (std::size_t h = 0; h < hc; ++h) {
            const Matrix qh = lc.q.colBlock(h * dk, dk);
            const Matrix kh = lc.k.colBlock(h * dk, dk);
            const Matrix vh = lc.v.colBlock(h * dk, dk);
            Matrix scores = matmul(qh, transpose(kh));
            for (double& s : scores.data()) s *= scale;
            lc.probs[h] = softmaxRows(scores);
            lc.heads[h] = matmul(lc.probs[h], vh);
            const double g = gates[l][h];
            lc.z.setColBlock(h * dk, lc.heads[h]);
            Matrix gated = lc.heads[h];
            for (double& e : gated.data()) e *= g;
            lc.zs.setColBlock(h * dk, gated);
        }

        const Matrix attnOut = matmul(lc.zs, lp.wo);
        lc.xMid = x + attnOut;
        lc.b = layerNorm(lc.xMid, lp.ln2Gain, lp.ln2Bias, lc.ln2);
        lc.hPre = matmul(lc.b, lp.w1);
        if (lp.ffnFactored) {
            lc.hAct = lc.hPre;
        } else {
            lc.hAct = lc.hPre;
            for (double& e : lc.hAct.data()) e = applyActivation(cfg.activation, e);
        }
        const Matrix ffnOut = matmul(lc.hAct, lp.w2);
        x = lc.xMid + ffnOut;

        if (trace) {
            LayerTrace lt;
            lt.headOutputs = lc.heads;
            lt.ungatedConcat = lc.z;
            lt.gatedConcat = lc.zs;
            lt.attnProbs = lc.probs;
            trace->layers.push_back(std::move(lt));
        }
        if (cache) cache->layers.push_back(std::move(lc));
    }
    if (cache) cache->output = std::move(x);
}

} // namespace detail

inline std::vector<std::vector<double>> gateValues(const Parameters& params, const GateSet& gates) {
    if (gates.layers != static_cast<int>(params.layers.size())) {
        raise(Error::Kind::DimensionMismatch, "gate set layer count does not match model");
    }
    std::vector<std::vector<double>> out(params.layers.size());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        if (params.layers[l].headCount != gates.heads) {
            raise(Error::Kind::DimensionMismatch, "gate set head count does not match layer");
        }
        out[l].resize(gates.heads);
        for (int h = 0; h < gates.heads; ++h) out[l][h] = gates.gate(static_cast<int>(l), h);
    }
    return out;
}

inline std::vector<std::vector<double>> unitGateValues(const Parameters& params) {
    std::vector<std::vector<double>> out(params.layers.size());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        out[l].assign(static_cast<std::size_t>(params.layers[l].headCount), 1.0);
    }
    return out;
}

/// Forward pass with explicit gate multipliers (one per retained head per
/// layer). Used for pruned models and masking oracles.
inline ForwardResult forwardWithGateValues(const Parameters& params,
                                           const std::vector<std::vector<double>>& gates,
                                           const Matrix& input) {
    ForwardResult result;
    detail::FullCache cache;
    detail::runForward(params, gates, input, &result.trace, &cache);
    result.output = std::move(cache.output);
    return result;
}

inline ForwardResult forward(const Parameters& params, const GateSet& gates, const Matrix& input) {
    return forwardWithGateValues(params, gateValues(params, gates), input);
}

struct LayerGrads {
    Matrix wq, wk, wv, wo, w1, w2;
    std::vector<double> ln1Gain, ln1Bias, ln2Gain, ln2Bias;
};

struct BackwardResult {
    std::vector<LayerGrads> paramGrads;
    std::vector<std::vector<double>> zetaGrads; // per layer, per head
    Matrix inputGrad;
};

/// Exact reverse-mode gradients. Beyond the loss gradient at the output,
/// callers may inject per-layer gradients w.r.t. the ungated concat Z and the
/// gated concat Z_S (the spectral loss terms attach there); either vector may
/// be empty.
inline BackwardResult backwardWithInjected(const Parameters& params,
                                           const std::vector<std::vector<double>>& gates,
                                           const Matrix& input, const Matrix& lossGradAtOutput,
                                           const std::vector<Matrix>& zGrads = {},
                                           const std::vector<Matrix>& zsGrads = {}) {
    const auto& cfg = params.config;
    detail::FullCache cache;
    detail::runForward(params, gates, input, nullptr, &cache);
    if (!lossGradAtOutput.sameShape(cache.output)) {
        raise(Error::Kind::DimensionMismatch, "backward: loss gradient shape mismatch");
    }

    const std::size_t dk = static_cast<std::size_t>(cfg.headDim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    BackwardResult result;
    result.paramGrads.resize(params.layers.size());
    result.zetaGrads.resize(params.layers.size());

    Matrix dX = lossGradAtOutput;
    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const LayerParams& lp = params.layers[li];
        const detail::LayerCache& lc = cache.layers[li];
        const std::size_t hc = static_cast<std::size_t>(lp.headCount);
        LayerGrads& lg = result.paramGrads[li];
        result.zetaGrads[li].assign(hc, 0.0);

        // FFN: x = xMid + ffnOut, ffnOut = hAct * w2
        const Matrix& dXOut = dX;
        lg.w2 = matmul(transpose(lc.hAct), dXOut);
        Matrix dHAct = matmul(dXOut, transpose(lp.w2));
        Matrix dHPre = dHAct;
        if (!lp.ffnFactored) {
            for (std::size_t i = 0; i < dHPre.size(); ++i) {
                dHPre.data()[i] *= activationDerivative(cfg.activation, lc.hPre.data()[i]);
            }
        }
        lg.w1 = matmul(transpose(lc.b), dHPre);
        const Matrix dB = matmul(dHPre, transpose(lp.w1));

        lg.ln2Gain.assign(lp.ln2Gain.size(), 0.0);
        lg.ln2Bias.assign(lp.ln2Bias.size(), 0.0);
        Matrix dXMid = detail::layerNormBackward(lc.xMid, lc.ln2, lp.ln2Gain, dB,
                                                 lg.ln2Gain, lg.ln2Bias);
        addInPlace(dXMid, dXOut); // residual path

        // attention: xMid = xIn + zs * wo
        const Matrix& dAttnOut = dXMid;
        lg.wo = matmul(transpose(lc.zs), dAttnOut);
        Matrix dZs = matmul(dAttnOut, transpose(lp.wo));
        if (li < zsGrads.size() && !zsGrads[li].empty()) {
            addInPlace(dZs, zsGrads[li]);
        }

        Matrix dA(lc.a.rows(), lc.a.cols());
        lg.wq = Matrix(lp.wq.rows(), lp.wq.cols());
        lg.wk = Matrix(lp.wk.rows(), lp.wk.cols());
        lg.wv = Matrix(lp.wv.rows(), lp.wv.cols());

        for (std::size_t h = 0; h < hc; ++h) {
            const double g = gates[li][h];
            const Matrix dZsBlock = dZs.colBlock(h * dk, dk);

            // gate multiplier: zs block = g * head
            double dGate = 0.0;
            for (std::size_t i = 0; i < dZsBlock.size(); ++i) {
                dGate += dZsBlock.data()[i] * lc.heads[h].data()[i];
            }
            result.zetaGrads[li][h] = dGate * g * (1.0 - g);

            Matrix dHead = dZsBlock;
            for (double& e : dHead.data()) e *= g;
            if (li < zGrads.size() && !zGrads[li].empty()) {
                addInPlace(dHead, zGrads[li].colBlock(h * dk, dk));
            }

            const Matrix qh = lc.q.colBlock(h * dk, dk);
            const Matrix kh = lc.k.colBlock(h * dk, dk);
            const Matrix vh = lc.v.colBlock(h * dk, dk);
            const Matrix& probs = lc.probs[h];

            const Matrix dProbs = matmul(dHead, transpose(vh));
            const Matrix dVh = matmul(transpose(probs), dHead);

            // softmax backward, row-wise
            Matrix dScores(probs.rows(), probs.cols());
            for (std::size_t r = 0; r < probs.rows(); ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < probs.cols(); ++c) dot += dProbs(r, c) * probs(r, c);
                for (std::size_t c = 0; c < probs.cols(); ++c) {
                    dScores(r, c) = probs(r, c) * (dProbs(r, c) - dot);
                }
            }
            for (double& e : dScores.data()) e *= scale;

            const Matrix dQh = matmul(dScores, kh);
            const Matrix dKh = matmul(transpose(dScores), qh);

            lg.wq.setColBlock(h * dk, matmul(transpose(lc.a), dQh));
            lg.wk.setColBlock(h * dk, matmul(transpose(lc.a), dKh));
            lg.wv.setColBlock(h * dk, matmul(transpose(lc.a), dVh));

            addInPlace(dA, matmul(dQh, transpose(lp.wq.colBlock(h * dk, dk))));
            addInPlace(dA, matmul(dKh, transpose(lp.wk.colBlock(h * dk, dk))));
            addInPlace(dA, matmul(dVh, transpose(lp.wv.colBlock(h * dk, dk))));
        }

        lg.ln1Gain.assign(lp.ln1Gain.size(), 0.0);
        lg.ln1Bias.assign(lp.ln1Bias.size(), 0.0);
        Matrix dXIn = detail::layerNormBackward(lc.xIn, lc.ln1, lp.ln1Gain, dA,
                                                lg.ln1Gain, lg.ln1Bias);
        addInPlace(dXIn, dXMid); // residual path
        dX = std::move(dXIn);
    }
    result.inputGrad = std::move(dX);
    return result;
}

inline BackwardResult backward(const Parameters& params, const GateSet& gates, const Matrix& input,
                               const Matrix& lossGradAtOutput) {
    return backwardWithInjected(params, gateValues(params, gates), input, lossGradAtOutput);
}

/// Deterministic init: every weight U(-sqrt(3/fanIn), sqrt(3/fanIn)) (std
/// 1/sqrt(fanIn)), layer-norm gains 1 and biases 0.
inline Parameters initModel(const ModelConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const std::size_t d = static_cast<std::size_t>(config.modelDim);
    const std::size_t m = static_cast<std::size_t>(config.ffnHidden);

    const auto fill = [&rng](Matrix& w, std::size_t fanIn) {
        const double a = std::sqrt(3.0 / static_cast<double>(fanIn));
        for (double& e : w.data()) e = rng.nextUniform(-a, a);
    };

    Parameters params;
    params.config = config;
    params.layers.resize(static_cast<std::size_t>(config.layers));
    for (auto& layer : params.layers) {
        layer.headCount = config.heads;
        layer.wq = Matrix(d, d);
        layer.wk = Matrix(d, d);
        layer.wv = Matrix(d, d);
        layer.wo = Matrix(d, d);
        fill(layer.wq, d);
        fill(layer.wk, d);
        fill(layer.wv, d);
        fill(layer.wo, d);
        layer.ln1Gain.assign(d, 1.0);
        layer.ln1Bias.assign(d, 0.0);
        layer.ln2Gain.assign(d, 1.0);
        layer.ln2Bias.assign(d, 0.0);
        layer.w1 = Matrix(d, m);
        layer.w2 = Matrix(m, d);
        fill(layer.w1, d);
        fill(layer.w2, m);
    }
    return params;
}

/// Teacher-student regression dataset: the teacher is a frozen copy of the
/// seeded model with the output-projection rows of the listed heads zeroed,
/// run ungated on random inputs.
struct Dataset {
    std::vector<Matrix> inputs;
    std::vector<Matrix> targets;
    Parameters teacher;
};

inline Dataset makeSyntheticTask(const ModelConfig& config, std::uint64_t teacherSeed,
                                 const std::set<std::pair<int, int>>& redundantHeads,
                                 std::size_t sampleCount = 64) {
    ModelConfig teacherConfig = config;
    teacherConfig.seed = teacherSeed;
    Parameters teacher = initModel(teacherConfig);

    const std::size_t dk = static_cast<std::size_t>(config.headDim());
    for (const auto& [l, h] : redundantHeads) {
        if (l < 0 || l >= config.layers || h < 0 || h >= config.heads) {
            raise(Error::Kind::InvalidHeadIndex,
                  "redundant head (" + std::to_string(l) + "," + std::to_string(h) +
                      ") out of range");
        }
        Matrix& wo = teacher.layers[static_cast<std::size_t>(l)].wo;
        for (std::size_t r = static_cast<std::size_t>(h) * dk; r < (static_cast<std::size_t>(h) + 1) * dk; ++r) {
            for (std::size_t c = 0; c < wo.cols(); ++c) wo(r, c) = 0.0;
        }
    }

    Dataset ds;
    ds.teacher = teacher;
    const auto ones = unitGateValues(teacher);
    Rng rng(teacherSeed ^ 0x9E3779B97F4A7C15ull);
    ds.inputs.reserve(sampleCount);
    ds.targets.reserve(sampleCount);
    for (std::size_t i = 0; i < sampleCount; ++i) {
        Matrix input(static_cast<std::size_t>(config.seqLen), static_cast<std::size_t>(config.modelDim));
        for (double& e : input.data()) e = rng.nextGaussian();
        ds.targets.push_back(forwardWithGateValues(teacher, ones, input).output);
        ds.inputs.push_back(std::move(input));
    }
    return ds;
}

/// Mean squared error over all entries; gradient is 2*(out - target)/count.
inline double mseLoss(const Matrix& output, const Matrix& target) {
    if (!output.sameShape(target)) {
        raise(Error::Kind::DimensionMismatch, "mseLoss: shape mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < output.size(); ++i) {
        const double d = output.data()[i] - target.data()[i];
        acc += d * d;
    }
    return acc / static_cast<double>(output.size());
}

inline Matrix mseLossGradient(const Matrix& output, const Matrix& target) {
    Matrix grad(output.rows(), output.cols());
    const double scale = 2.0 / static_cast<double>(output.size());
    for (std::size_t i = 0; i < output.size(); ++i) {
        grad.data()[i] = scale * (output.data()[i] - target.data()[i]);
    }
    return grad;
}

} // namespace infoprune
