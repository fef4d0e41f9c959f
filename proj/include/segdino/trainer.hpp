#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segdino/decoder.hpp"
#include "segdino/encoder.hpp"
#include "segdino/error.hpp"
#include "segdino/mask.hpp"
#include "segdino/rng.hpp"
#include "segdino/tensor.hpp"

namespace segdino {

/// Where the cross-entropy is evaluated: on token logits against
/// majority-pooled labels, or on bilinearly upsampled pixel logits.
enum class LossResolution { token, pixel };

inline const char* to_string(LossResolution r) { return r == LossResolution::token ? "token" : "pixel"; }

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::size_t batch_size = 4;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    LossResolution loss_resolution = LossResolution::token;
    bool inverse_frequency_weights = false;
    std::size_t max_steps = 0;  // 0: run every epoch to completion

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (!(learning_rate > 0)) v.emplace_back("train.learning_rate must be > 0");
        if (!(weight_decay >= 0)) v.emplace_back("train.weight_decay must be >= 0");
        if (!(beta1 >= 0 && beta1 < 1)) v.emplace_back("train.beta1 must be in [0, 1)");
        if (!(beta2 >= 0 && beta2 < 1)) v.emplace_back("train.beta2 must be in [0, 1)");
        if (!(eps_adam > 0)) v.emplace_back("train.eps_adam must be > 0");
        if (batch_size < 1) v.emplace_back("train.batch_size must be >= 1");
        if (epochs < 1) v.emplace_back("train.epochs must be >= 1");
        return v;
    }
};

template <Real T>
struct LossAndGrad {
    double loss = 0;
    Tensor<T> grad;  // d loss / d logits, same shape as the logits
};

/// Mean (or class-weighted mean) of −log softmax(logits)[label] over the M
/// rows, with log-sum-exp stabilization. The gradient row for sample i is
/// w_i·(softmax − onehot)/Σw.
template <Real T>
LossAndGrad<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                             std::span<const T> class_weights = {}) {
    detail::require_rank(logits, 2, "cross_entropy");
    const std::size_t m = logits.dim(0), n = logits.dim(1);
    if (labels.size() != m)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(m) +
                         " logit rows");
    if (!class_weights.empty() && class_weights.size() != n)
        throw ShapeError("cross_entropy: class weight count does not match class count");
    for (std::size_t i = 0; i < m; ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n)
            throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                            " outside [0, " + std::to_string(n) + ")");

    LossAndGrad<T> out{0.0, Tensor<T>(logits.shape())};
    double total_w = 0;
    for (std::size_t i = 0; i < m; ++i) total_w += class_weights.empty() ? 1.0 : double(class_weights[labels[i]]);
    if (!(total_w > 0)) throw DataError("cross_entropy: total sample weight is zero");

    double loss = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = logits.data().data() + i * n;
        T* g = out.grad.data().data() + i * n;
        const T mx = *std::max_element(row, row + n);
        T sum = 0;
        for (std::size_t c = 0; c < n; ++c) sum += std::exp(row[c] - mx);
        const T lse = mx + std::log(sum);
        const double w = class_weights.empty() ? 1.0 : double(class_weights[labels[i]]);
        loss += w * double(lse - row[labels[i]]);
        const T scale = static_cast<T>(w / total_w);
        for (std::size_t c = 0; c < n; ++c) g[c] = std::exp(row[c] - lse) * scale;
        g[labels[i]] -= scale;
    }
    out.loss = loss / total_w;
    return out;
}

/// Majority label inside each (H/h_c)×(W/w_c) cell; ties go to the lowest
/// label. Returns h_c·w_c labels in row-major cell order.
inline std::vector<std::int32_t> pool_labels(const Mask& mask, Grid grid) {
    if (grid.h == 0 || grid.w == 0 || mask.height % grid.h || mask.width % grid.w)
        throw ShapeError("pool_labels: mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                         " is not divisible into a " + std::to_string(grid.h) + "x" + std::to_string(grid.w) +
                         " grid");
    const std::size_t ch = mask.height / grid.h, cw = mask.width / grid.w;
    std::int32_t max_label = 0;
    for (auto v : mask.labels) max_label = std::max(max_label, v);
    std::vector<std::size_t> counts(static_cast<std::size_t>(max_label) + 1);
    std::vector<std::int32_t> out(grid.cells());
    for (std::size_t gy = 0; gy < grid.h; ++gy)
        for (std::size_t gx = 0; gx < grid.w; ++gx) {
            std::fill(counts.begin(), counts.end(), 0);
            for (std::size_t y = gy * ch; y < (gy + 1) * ch; ++y)
                for (std::size_t x = gx * cw; x < (gx + 1) * cw; ++x) ++counts[mask.at(y, x)];
            out[gy * grid.w + gx] =
                static_cast<std::int32_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        }
    return out;
}

/// Gradients have exactly the layout of the parameters.
template <Real T>
using DecoderGrads = DecoderParams<T>;

namespace detail {

template <Real T>
Tensor<T> column_sums(const Tensor<T>& g) {
    const std::size_t n = g.dim(1);
    Tensor<T> s({n});
    for (std::size_t i = 0; i < g.dim(0); ++i)
        for (std::size_t j = 0; j < n; ++j) s[j] += g.at(i, j);
    return s;
}

}  // namespace detail

/// Hand-derived backward pass through head, fuse and reassemble. `dlogits`
/// is the token-level upstream gradient [N_c, n_class]. The encoder taps
/// are constants; nothing flows into the backbone.
template <Real T>
DecoderGrads<T> backward_decoder(const std::vector<Tensor<T>>& taps, const DecoderTrace<T>& trace,
                                 const DecoderParams<T>& params, const Tensor<T>& dlogits, Grid encoder_grid,
                                 Grid common_grid) {
    if (dlogits.shape() != Shape{trace.fused.dim(0), params.w2.dim(1)})
        throw ShapeError("backward_decoder: upstream gradient " + shape_str(dlogits.shape()) +
                         " does not match logits");
    if (taps.size() != params.tap_count()) throw ShapeError("backward_decoder: tap count mismatch");

    DecoderGrads<T> g;
    g.w2 = matmul_tn(trace.head.hidden, dlogits);
    g.b2 = detail::column_sums(dlogits);
    Tensor<T> dpre = matmul_nt(dlogits, params.w2);
    for (std::size_t i = 0; i < dpre.size(); ++i) dpre[i] *= gelu_grad(trace.head.pre[i]);
    g.w1 = matmul_tn(trace.fused, dpre);
    g.b1 = detail::column_sums(dpre);
    const Tensor<T> dfused = matmul_nt(dpre, params.w1);

    const std::size_t K = taps.size(), nc = dfused.dim(0), C = params.proj_w.front().dim(1);
    for (std::size_t k = 0; k < K; ++k) {
        Tensor<T> block({nc, C});
        for (std::size_t i = 0; i < nc; ++i)
            std::copy_n(dfused.data().data() + i * K * C + k * C, C, block.data().data() + i * C);
        if (!(encoder_grid == common_grid))
            block = bilinear_resize_adjoint(std::move(block).reshaped({common_grid.h, common_grid.w, C}),
                                            encoder_grid.h, encoder_grid.w)
                        .reshaped({encoder_grid.cells(), C});
        g.proj_w.push_back(matmul_tn(taps[k], block));
        g.proj_b.push_back(detail::column_sums(block));
    }
    return g;
}

/// Training target for one sample. Token labels are only used in token
/// mode and the pixel mask only in pixel mode.
template <Real T>
struct FeatureSample {
    std::vector<Tensor<T>> taps;
    std::vector<std::int32_t> token_labels;
    Mask mask;
};

/// Loss and decoder gradients for one sample under the given resolution.
template <Real T>
std::pair<double, DecoderGrads<T>> sample_loss_and_grad(const FeatureSample<T>& s, const DecoderParams<T>& params,
                                                        Grid encoder_grid, Grid common_grid, LossResolution mode,
                                                        std::span<const T> class_weights = {}) {
    DecoderTrace<T> trace;
    const Tensor<T> logits = decode(s.taps, params, encoder_grid, common_grid, &trace);
    LossAndGrad<T> ce;
    Tensor<T> dlogits;
    if (mode == LossResolution::token) {
        ce = cross_entropy(logits, std::span<const std::int32_t>(s.token_labels), class_weights);
        dlogits = std::move(ce.grad);
    } else {
        const std::size_t H = s.mask.height, W = s.mask.width, n = logits.dim(1);
        const Tensor<T> field = upsample_logits(logits, common_grid, H, W);
        ce = cross_entropy(field.reshaped({H * W, n}), std::span<const std::int32_t>(s.mask.labels), class_weights);
        dlogits = bilinear_resize_adjoint(std::move(ce.grad).reshaped({H, W, n}), common_grid.h, common_grid.w)
                      .reshaped({common_grid.cells(), n});
    }
    return {ce.loss, backward_decoder(s.taps, trace, params, dlogits, encoder_grid, common_grid)};
}

/// Loss only (no backward), used by the finite-difference oracle.
template <Real T>
double sample_loss(const FeatureSample<T>& s, const DecoderParams<T>& params, Grid encoder_grid, Grid common_grid,
                   LossResolution mode, std::span<const T> class_weights = {}) {
    const Tensor<T> logits = decode(s.taps, params, encoder_grid, common_grid);
    if (mode == LossResolution::token)
        return cross_entropy(logits, std::span<const std::int32_t>(s.token_labels), class_weights).loss;
    const std::size_t H = s.mask.height, W = s.mask.width, n = logits.dim(1);
    const Tensor<T> field = upsample_logits(logits, common_grid, H, W);
    return cross_entropy(field.reshaped({H * W, n}), std::span<const std::int32_t>(s.mask.labels), class_weights)
        .loss;
}

/// Central difference (loss(θ + h·e_i) − loss(θ − h·e_i)) / 2h. `loss`
/// reads the parameters through whatever it captured; the element is
/// restored bit-for-bit before returning.
template <typename Loss>
double finite_diff_grad(Loss&& loss, std::span<double> params, std::size_t index, double step) {
    if (!(step > 0)) throw ParameterError("finite_diff_grad: step must be > 0");
    if (index >= params.size()) throw ShapeError("finite_diff_grad: index out of range");
    const double saved = params[index];
    params[index] = saved + step;
    const double up = loss();
    params[index] = saved - step;
    const double down = loss();
    params[index] = saved;
    return (up - down) / (2.0 * step);
}

template <Real T>
struct AdamWState {
    DecoderParams<T> m;
    DecoderParams<T> v;
    std::uint64_t t = 0;

    static AdamWState zeros_like(const DecoderParams<T>& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

/// One AdamW step. Weight decay is decoupled: θ ← θ·(1 − lr·wd) first,
/// then θ ← θ − lr·m̂/(√v̂ + eps) with bias-corrected moments.
template <Real T>
void adamw_step(DecoderParams<T>& params, const DecoderGrads<T>& grads, AdamWState<T>& state,
                const TrainConfig& cfg) {
    auto ps = params.tensors();
    const auto gs = grads.tensors();
    auto ms = state.m.tensors();
    auto vs = state.v.tensors();
    if (ps.size() != gs.size() || ps.size() != ms.size() || ps.size() != vs.size())
        throw ShapeError("adamw_step: parameter group count mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
    const T lr = static_cast<T>(cfg.learning_rate);
    const T decay = static_cast<T>(1.0 - cfg.learning_rate * cfg.weight_decay);
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2), eps = static_cast<T>(cfg.eps_adam);
    const T c1 = static_cast<T>(bc1), c2 = static_cast<T>(bc2);
    for (std::size_t k = 0; k < ps.size(); ++k) {
        if (ps[k]->shape() != gs[k]->shape())
            throw ShapeError("adamw_step: gradient shape " + shape_str(gs[k]->shape()) + " vs parameter " +
                             shape_str(ps[k]->shape()));
        auto p = ps[k]->data();
        auto g = gs[k]->data();
        auto m = ms[k]->data();
        auto v = vs[k]->data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] *= decay;
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = m[i] / c1;
            const T vhat = v[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

/// Adds `src` into `dst` elementwise, group by group.
template <Real T>
void accumulate(DecoderGrads<T>& dst, const DecoderGrads<T>& src, T scale = T(1)) {
    auto d = dst.tensors();
    const auto s = src.tensors();
    for (std::size_t k = 0; k < d.size(); ++k)
        for (std::size_t i = 0; i < d[k]->size(); ++i) (*d[k])[i] += scale * (*s[k])[i];
}

/// Inverse-frequency class weights n_total / (n_class · count_c) over the
/// targets used by the configured loss; absent classes get weight 1.
template <Real T>
std::vector<T> inverse_frequency_weights(const std::vector<FeatureSample<T>>& samples, std::size_t n_class,
                                         LossResolution mode) {
    std::vector<double> counts(n_class, 0.0);
    double total = 0;
    for (const auto& s : samples) {
        const auto& labels = mode == LossResolution::token ? s.token_labels : s.mask.labels;
        for (auto l : labels) {
            counts.at(static_cast<std::size_t>(l)) += 1;
            total += 1;
        }
    }
    std::vector<T> w(n_class, T(1));
    for (std::size_t c = 0; c < n_class; ++c)
        if (counts[c] > 0) w[c] = static_cast<T>(total / (double(n_class) * counts[c]));
    return w;
}

struct LossRecord {
    std::size_t step;
    std::size_t epoch;
    double loss;
};

template <Real T>
struct TrainResult {
    DecoderParams<T> params;
    std::vector<LossRecord> curve;
};

/// Precomputes encoder taps and pooled labels for a labelled image. Token
/// labels stay empty when the mask does not tile the common grid; only the
/// pixel loss can train on such samples.
template <Real T>
FeatureSample<T> extract_features(const Tensor<T>& image, const Mask& mask, const EncoderParams<T>& encoder,
                                  const EncoderConfig& ecfg, Grid common_grid) {
    if (mask.height != ecfg.image_h || mask.width != ecfg.image_w)
        throw ShapeError("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                         " does not match encoder input " + std::to_string(ecfg.image_h) + "x" +
                         std::to_string(ecfg.image_w));
    std::vector<std::int32_t> labels;
    if (common_grid.h && common_grid.w && mask.height % common_grid.h == 0 && mask.width % common_grid.w == 0)
        labels = pool_labels(mask, common_grid);
    return {forward_collect(image, encoder, ecfg), std::move(labels), mask};
}

/// Decoder-only training loop.
///
/// The encoder contributes constant features, so taps are computed once per
/// sample up front. Each epoch shuffles sample order with a SplitMix64
/// stream keyed by (seed, epoch); the last batch of an epoch may be short.
/// Per-sample gradients are summed in batch order and averaged. The
/// encoder checksum is compared against its initial value after every
/// epoch.
template <Real T>
TrainResult<T> train(const std::vector<FeatureSample<T>>& samples, const EncoderParams<T>& encoder,
                     const EncoderConfig& ecfg, const DecoderConfig& dcfg, const TrainConfig& tcfg,
                     DecoderParams<T> params, const std::function<void(const LossRecord&)>& on_step = {}) {
    if (samples.empty()) throw DataError("train: dataset is empty");
    const Grid eg{ecfg.grid_h(), ecfg.grid_w()};
    const Grid cg = dcfg.common_grid(ecfg);
    const std::uint64_t encoder_sum = encoder.checksum();
    std::vector<T> weights;
    if (tcfg.inverse_frequency_weights)
        weights = inverse_frequency_weights(samples, dcfg.n_class, tcfg.loss_resolution);

    AdamWState<T> state = AdamWState<T>::zeros_like(params);
    TrainResult<T> result;
    std::vector<std::size_t> order(samples.size());
    const SplitMix64 shuffle_root = SplitMix64(tcfg.seed).split("shuffle");
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        SplitMix64 rng = shuffle_root.split(static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
            if (tcfg.max_steps && step >= tcfg.max_steps) break;
            const std::size_t end = std::min(order.size(), start + tcfg.batch_size);
            DecoderGrads<T> grads = params.zeros_like();
            double loss = 0;
            const T inv = T(1) / static_cast<T>(end - start);
            for (std::size_t b = start; b < end; ++b) {
                const auto& s = samples[order[b]];
                try {
                    auto [l, g] = sample_loss_and_grad(s, params, eg, cg, tcfg.loss_resolution,
                                                       std::span<const T>(weights));
                    loss += l;
                    accumulate(grads, g, inv);
                } catch (const DataError& e) {
                    throw DataError("sample " + std::to_string(order[b]) + ": " + e.what());
                } catch (const ShapeError& e) {
                    throw ShapeError("sample " + std::to_string(order[b]) + ": " + e.what());
                }
            }
            loss /= double(end - start);
            if (!std::isfinite(loss)) throw NumericError("non-finite loss at step " + std::to_string(step));
            adamw_step(params, grads, state, tcfg);
            LossRecord rec{step, epoch, loss};
            result.curve.push_back(rec);
            if (on_step) on_step(rec);
            ++step;
        }
        if (encoder.checksum() != encoder_sum)
            throw NumericError("encoder parameters changed during epoch " + std::to_string(epoch));
        if (tcfg.max_steps && step >= tcfg.max_steps) break;
    }
    result.params = std::move(params);
    return result;
}

/// Result of comparing analytic and finite-difference gradients for one
/// parameter group.
struct GroupCheck {
    std::string name;
    std::size_t checked = 0;
    double max_rel_error = 0;
};

/// |a − n| / max(|a|, |n|, floor). The floor keeps elements whose true
/// gradient is numerically zero from dominating.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward_decoder against central differences on `per_group`
/// elements of every decoder tensor (deterministically sampled, always
/// including the element with the largest analytic gradient). The loss is
/// the mean over `samples`, matching a training batch. `perturb` adds a
/// constant to every analytic gradient; it exists for negative-control
/// tests only.
inline std::vector<GroupCheck> check_gradients(const std::vector<FeatureSample<double>>& samples,
                                               DecoderParams<double> params, Grid encoder_grid, Grid common_grid,
                                               LossResolution mode, std::size_t per_group, std::uint64_t seed,
                                               double perturb = 0.0) {
    DecoderGrads<double> analytic = params.zeros_like();
    const double inv = 1.0 / double(samples.size());
    for (const auto& s : samples) accumulate(analytic, sample_loss_and_grad(s, params, encoder_grid, common_grid, mode).second, inv);

    auto batch_loss = [&] {
        double l = 0;
        for (const auto& s : samples) l += sample_loss(s, params, encoder_grid, common_grid, mode);
        return l * inv;
    };

    std::vector<GroupCheck> report;
    auto ps = params.tensors();
    const auto gs = analytic.tensors();
    std::vector<std::string> names;
    params.for_each([&](const std::string& n, const Tensor<double>&) { names.push_back(n); });
    SplitMix64 rng = SplitMix64(seed).split("gradcheck");
    for (std::size_t k = 0; k < ps.size(); ++k) {
        const std::size_t n = ps[k]->size();
        std::vector<std::size_t> idx;
        const auto g = gs[k]->data();
        idx.push_back(static_cast<std::size_t>(
            std::max_element(g.begin(), g.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }) -
            g.begin()));
        if (n <= per_group) {
            idx.resize(n);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
        } else {
            while (idx.size() < per_group) idx.push_back(rng.below(n));
        }
        GroupCheck gc{names[k], idx.size(), 0.0};
        for (std::size_t i : idx) {
            const double step = 1e-5 * std::max(1.0, std::abs((*ps[k])[i]));
            const double num = finite_diff_grad(batch_loss, ps[k]->data(), i, step);
            gc.max_rel_error = std::max(gc.max_rel_error, relative_error(g[i] + perturb, num));
        }
        report.push_back(gc);
    }
    return report;
}

}  // namespace segdino
