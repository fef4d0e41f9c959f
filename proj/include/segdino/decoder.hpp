#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "segdino/encoder.hpp"
#include "segdino/error.hpp"
#include "segdino/mask.hpp"
#include "segdino/rng.hpp"
#include "segdino/tensor.hpp"

namespace segdino {

/// Token-grid resolution (rows, cols).
struct Grid {
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t cells() const noexcept { return h * w; }
    friend bool operator==(const Grid&, const Grid&) = default;
};

/// Light decoder shape. `hidden_dim == 0` means K·C; a zero common grid
/// means "same as the encoder token grid".
struct DecoderConfig {
    std::size_t channels = 64;
    std::size_t tap_count = 4;
    std::size_t hidden_dim = 0;
    std::size_t n_class = 2;
    std::size_t common_h = 0;
    std::size_t common_w = 0;

    std::size_t fused_width() const noexcept { return tap_count * channels; }
    std::size_t hidden() const noexcept { return hidden_dim ? hidden_dim : fused_width(); }

    Grid common_grid(const EncoderConfig& enc) const noexcept {
        return {common_h ? common_h : enc.grid_h(), common_w ? common_w : enc.grid_w()};
    }

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (channels < 1) v.emplace_back("decoder.channels must be >= 1");
        if (tap_count < 1) v.emplace_back("decoder.tap_count must be >= 1");
        if (n_class < 2) v.emplace_back("decoder.n_class must be >= 2");
        if ((common_h == 0) != (common_w == 0))
            v.emplace_back("decoder.common_h and decoder.common_w must both be set or both be 0");
        return v;
    }
};

/// The trainable state: K per-tap projections plus the two-layer head.
template <Real T>
struct DecoderParams {
    std::vector<Tensor<T>> proj_w;  // K × [d, C]
    std::vector<Tensor<T>> proj_b;  // K × [C]
    Tensor<T> w1, b1;               // [K·C, hidden], [hidden]
    Tensor<T> w2, b2;               // [hidden, n_class], [n_class]

    std::size_t tap_count() const noexcept { return proj_w.size(); }

    /// Parameter groups in serialization order: 2K projection tensors, then
    /// the four head tensors.
    template <typename F>
    void for_each(F&& f) const {
        for (std::size_t k = 0; k < proj_w.size(); ++k) {
            f("decoder.taps." + std::to_string(k) + ".proj.weight", proj_w[k]);
            f("decoder.taps." + std::to_string(k) + ".proj.bias", proj_b[k]);
        }
        f(std::string("decoder.head.fc1.weight"), w1);
        f(std::string("decoder.head.fc1.bias"), b1);
        f(std::string("decoder.head.fc2.weight"), w2);
        f(std::string("decoder.head.fc2.bias"), b2);
    }

    template <typename F>
    void for_each_mut(F&& f) {
        for (std::size_t k = 0; k < proj_w.size(); ++k) {
            f("decoder.taps." + std::to_string(k) + ".proj.weight", proj_w[k]);
            f("decoder.taps." + std::to_string(k) + ".proj.bias", proj_b[k]);
        }
        f(std::string("decoder.head.fc1.weight"), w1);
        f(std::string("decoder.head.fc1.bias"), b1);
        f(std::string("decoder.head.fc2.weight"), w2);
        f(std::string("decoder.head.fc2.bias"), b2);
    }

    /// Flat list of pointers in `for_each` order.
    std::vector<Tensor<T>*> tensors() {
        std::vector<Tensor<T>*> out;
        for_each_mut([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
        return out;
    }
    std::vector<const Tensor<T>*> tensors() const {
        std::vector<const Tensor<T>*> out;
        for_each([&](const std::string&, const Tensor<T>& t) { out.push_back(&t); });
        return out;
    }

    std::size_t element_count() const {
        std::size_t n = 0;
        for_each([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
        return n;
    }

    std::uint64_t checksum() const {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for_each([&](const std::string&, const Tensor<T>& t) { h = segdino::checksum(t, h); });
        return h;
    }

    /// Same shapes, all zeros (gradient and moment buffers).
    DecoderParams zeros_like() const {
        DecoderParams z = *this;
        z.for_each_mut([](const std::string&, Tensor<T>& t) { std::fill(t.data().begin(), t.data().end(), T(0)); });
        return z;
    }

    template <Real U>
    DecoderParams<U> cast() const {
        DecoderParams<U> out;
        for (const auto& t : proj_w) out.proj_w.push_back(t.template cast<U>());
        for (const auto& t : proj_b) out.proj_b.push_back(t.template cast<U>());
        out.w1 = w1.template cast<U>();
        out.b1 = b1.template cast<U>();
        out.w2 = w2.template cast<U>();
        out.b2 = b2.template cast<U>();
        return out;
    }
};

/// K·(d·C + C) + K·C·hidden + hidden + hidden·n_class + n_class.
inline std::size_t decoder_param_count(const DecoderConfig& c, std::size_t embed_dim) {
    const std::size_t K = c.tap_count, C = c.channels, h = c.hidden(), n = c.n_class;
    return K * (embed_dim * C + C) + K * C * h + h + h * n + n;
}

/// Truncated-normal(0.02) weights and zero biases on the "decoder" stream.
template <Real T>
DecoderParams<T> init_decoder(const DecoderConfig& cfg, std::size_t embed_dim, std::uint64_t seed) {
    const SplitMix64 root = SplitMix64(seed).split("decoder");
    const std::size_t C = cfg.channels, h = cfg.hidden();
    DecoderParams<T> p;
    for (std::size_t k = 0; k < cfg.tap_count; ++k) {
        const std::string name = "decoder.taps." + std::to_string(k) + ".proj.weight";
        p.proj_w.push_back(detail::truncated_normal_tensor<T>({embed_dim, C}, root.split(name)));
        p.proj_b.emplace_back(Shape{C});
    }
    p.w1 = detail::truncated_normal_tensor<T>({cfg.fused_width(), h}, root.split("decoder.head.fc1.weight"));
    p.b1 = Tensor<T>({h});
    p.w2 = detail::truncated_normal_tensor<T>({h, cfg.n_class}, root.split("decoder.head.fc2.weight"));
    p.b2 = Tensor<T>({cfg.n_class});
    return p;
}

/// Projects tokens d→C, lays them on the encoder grid row-major, resamples
/// bilinearly to the common grid and flattens back. Output [N_c, C].
/// When the grids coincide no resampling is performed.
template <Real T>
Tensor<T> reassemble(const Tensor<T>& z, const Tensor<T>& proj_w, const Tensor<T>& proj_b, Grid encoder_grid,
                     Grid common_grid) {
    detail::require_rank(z, 2, "reassemble");
    if (z.dim(0) != encoder_grid.cells() || common_grid.cells() == 0)
        throw ShapeError("reassemble: " + std::to_string(z.dim(0)) + " tokens do not fill a " +
                         std::to_string(encoder_grid.h) + "x" + std::to_string(encoder_grid.w) + " grid");
    if (proj_w.rank() != 2 || proj_w.dim(0) != z.dim(1))
        throw ShapeError("reassemble: projection " + shape_str(proj_w.shape()) + " does not accept tokens " +
                         shape_str(z.shape()));
    Tensor<T> y = linear(z, proj_w, proj_b);
    if (encoder_grid == common_grid) return y;
    const std::size_t C = y.dim(1);
    Tensor<T> field = std::move(y).reshaped({encoder_grid.h, encoder_grid.w, C});
    return bilinear_resize(field, common_grid.h, common_grid.w).reshaped({common_grid.cells(), C});
}

/// Channel concatenation in tap order: columns [kC, (k+1)C) come from tap k.
template <Real T>
Tensor<T> fuse(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("fuse: no inputs");
    const Shape& s0 = parts.front().shape();
    if (s0.size() != 2) throw ShapeError("fuse: inputs must be rank 2");
    for (const auto& p : parts)
        if (p.shape() != s0)
            throw ShapeError("fuse: ragged inputs " + shape_str(s0) + " vs " + shape_str(p.shape()));
    const std::size_t n = s0[0], c = s0[1], k = parts.size();
    Tensor<T> h({n, k * c});
    for (std::size_t t = 0; t < k; ++t)
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(parts[t].data().data() + i * c, c, h.data().data() + i * k * c + t * c);
    return h;
}

/// Intermediates of the head kept for backpropagation.
template <Real T>
struct HeadTrace {
    Tensor<T> pre;     // fused·W1 + b1
    Tensor<T> hidden;  // gelu(pre)
};

/// linear → gelu → linear; raw logits [N_c, n_class].
template <Real T>
Tensor<T> mlp_head(const Tensor<T>& fused, const DecoderParams<T>& params, HeadTrace<T>* trace = nullptr) {
    detail::require_rank(fused, 2, "mlp_head");
    if (fused.dim(1) != params.w1.dim(0))
        throw ShapeError("mlp_head: fused width " + std::to_string(fused.dim(1)) + " vs fc1 " +
                         shape_str(params.w1.shape()));
    Tensor<T> pre = linear(fused, params.w1, params.b1);
    Tensor<T> hidden = gelu(pre);
    Tensor<T> logits = linear(hidden, params.w2, params.b2);
    if (trace) *trace = {std::move(pre), std::move(hidden)};
    return logits;
}

/// Bilinear upsampling of token logits [N_c, n] to a pixel field [H, W, n].
template <Real T>
Tensor<T> upsample_logits(const Tensor<T>& logits, Grid grid, std::size_t H, std::size_t W) {
    detail::require_rank(logits, 2, "upsample_logits");
    if (logits.dim(0) != grid.cells())
        throw ShapeError("logits rows " + std::to_string(logits.dim(0)) + " do not fill a " +
                         std::to_string(grid.h) + "x" + std::to_string(grid.w) + " grid");
    return bilinear_resize(logits.reshaped({grid.h, grid.w, logits.dim(1)}), H, W);
}

/// Per-pixel argmax of a [H, W, n] logit field. Ties go to the lowest class.
template <Real T>
Mask argmax_mask(const Tensor<T>& field) {
    const std::size_t H = field.dim(0), W = field.dim(1), n = field.dim(2);
    Mask m(H, W);
    for (std::size_t i = 0; i < H * W; ++i) {
        const T* px = field.data().data() + i * n;
        std::size_t best = 0;
        for (std::size_t c = 1; c < n; ++c)
            if (px[c] > px[best]) best = c;
        m.labels[i] = static_cast<std::int32_t>(best);
    }
    return m;
}

template <Real T>
Mask logits_to_mask(const Tensor<T>& logits, Grid grid, std::size_t H, std::size_t W) {
    return argmax_mask(upsample_logits(logits, grid, H, W));
}

/// Softmax probability of class 1 per pixel, [H, W].
template <Real T>
Tensor<T> foreground_probability(const Tensor<T>& logits, Grid grid, std::size_t H, std::size_t W) {
    const Tensor<T> field = upsample_logits(logits, grid, H, W);
    const std::size_t n = field.dim(2);
    const Tensor<T> probs = softmax(field.reshaped({H * W, n}));
    Tensor<T> fg({H, W});
    for (std::size_t i = 0; i < H * W; ++i) fg[i] = probs.at(i, 1);
    return fg;
}

/// Everything computed between the encoder taps and the logits.
template <Real T>
struct DecoderTrace {
    std::vector<Tensor<T>> reassembled;
    Tensor<T> fused;
    HeadTrace<T> head;
};

/// Decoder from precomputed taps to token logits [N_c, n_class].
template <Real T>
Tensor<T> decode(const std::vector<Tensor<T>>& taps, const DecoderParams<T>& params, Grid encoder_grid,
                 Grid common_grid, DecoderTrace<T>* trace = nullptr) {
    if (taps.size() != params.tap_count())
        throw ShapeError("decoder expects " + std::to_string(params.tap_count()) + " taps, got " +
                         std::to_string(taps.size()));
    std::vector<Tensor<T>> parts;
    parts.reserve(taps.size());
    for (std::size_t k = 0; k < taps.size(); ++k)
        parts.push_back(reassemble(taps[k], params.proj_w[k], params.proj_b[k], encoder_grid, common_grid));
    Tensor<T> fused = fuse(parts);
    HeadTrace<T> head;
    Tensor<T> logits = mlp_head(fused, params, &head);
    if (trace) *trace = {std::move(parts), std::move(fused), std::move(head)};
    return logits;
}

template <Real T>
struct SegmentationOutput {
    std::vector<Tensor<T>> taps;  // encoder features, for inspection
    Tensor<T> logits;             // [N_c, n_class]
    Mask mask;                    // [H, W]
};

/// Image → taps → reassemble×K → fuse → head → pixel mask.
template <Real T>
SegmentationOutput<T> forward(const Tensor<T>& image, const EncoderParams<T>& encoder, const EncoderConfig& ecfg,
                              const DecoderParams<T>& decoder, const DecoderConfig& dcfg) {
    SegmentationOutput<T> out;
    out.taps = forward_collect(image, encoder, ecfg);
    const Grid eg{ecfg.grid_h(), ecfg.grid_w()};
    const Grid cg = dcfg.common_grid(ecfg);
    out.logits = decode(out.taps, decoder, eg, cg);
    out.mask = logits_to_mask(out.logits, cg, ecfg.image_h, ecfg.image_w);
    return out;
}

}  // namespace segdino
