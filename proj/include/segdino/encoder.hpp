#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "segdino/error.hpp"
#include "segdino/rng.hpp"
#include "segdino/tensor.hpp"

namespace segdino {

/// Architecture of the frozen ViT backbone.
///
/// `tap_layers` are 1-based block indices whose outputs feed the decoder.
/// Register tokens are prepended to the patch sequence and dropped from
/// every tap.
struct EncoderConfig {
    std::size_t image_h = 64;
    std::size_t image_w = 64;
    std::size_t patch_size = 8;
    std::size_t embed_dim = 64;
    std::size_t depth = 4;
    std::size_t heads = 4;
    double mlp_ratio = 4.0;
    std::vector<std::size_t> tap_layers{1, 2, 3, 4};
    std::size_t n_register = 4;
    std::uint64_t seed = 0;

    std::size_t grid_h() const noexcept { return image_h / patch_size; }
    std::size_t grid_w() const noexcept { return image_w / patch_size; }
    std::size_t mlp_hidden() const noexcept {
        return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(embed_dim)));
    }
    std::size_t patch_dim() const noexcept { return patch_size * patch_size * 3; }

    /// Every violated invariant, one message each. Empty when valid.
    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (patch_size == 0) v.emplace_back("encoder.patch_size must be >= 1");
        if (image_h == 0 || image_w == 0) v.emplace_back("encoder image size must be >= 1");
        if (patch_size && (image_h % patch_size || image_w % patch_size))
            v.push_back("encoder image size " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                        " is not divisible by patch_size " + std::to_string(patch_size));
        if (embed_dim == 0) v.emplace_back("encoder.embed_dim must be >= 1");
        if (depth == 0) v.emplace_back("encoder.depth must be >= 1");
        if (heads == 0 || (embed_dim % heads))
            v.push_back("encoder.embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                        std::to_string(heads));
        if (!(mlp_ratio > 0) || mlp_hidden() == 0) v.emplace_back("encoder.mlp_ratio must give a hidden width >= 1");
        if (tap_layers.empty()) v.emplace_back("encoder.tap_layers must not be empty");
        for (std::size_t i = 0; i < tap_layers.size(); ++i) {
            if (tap_layers[i] < 1 || tap_layers[i] > depth)
                v.push_back("encoder.tap_layers entry " + std::to_string(tap_layers[i]) + " outside [1, " +
                            std::to_string(depth) + "]");
            if (i && tap_layers[i] <= tap_layers[i - 1])
                v.emplace_back("encoder.tap_layers must be strictly increasing");
        }
        return v;
    }

    void validate() const {
        auto v = violations();
        if (v.empty()) return;
        std::string msg = "invalid encoder config:";
        for (auto& s : v) msg += "\n  - " + s;
        throw ValidationError(msg);
    }
};

/// N = (H/p)·(W/p).
inline std::size_t patch_count(const EncoderConfig& cfg) {
    cfg.validate();
    return cfg.grid_h() * cfg.grid_w();
}

template <Real T>
struct BlockParams {
    Tensor<T> ln1_g, ln1_b;
    Tensor<T> qkv_w, qkv_b;    // [d,3d], [3d]
    Tensor<T> proj_w, proj_b;  // [d,d], [d]
    Tensor<T> ln2_g, ln2_b;
    Tensor<T> fc1_w, fc1_b;  // [d,h], [h]
    Tensor<T> fc2_w, fc2_b;  // [h,d], [d]
};

/// Frozen backbone weights. Produced once by `init_frozen` (or loaded from a
/// checkpoint) and only ever read afterwards.
template <Real T>
struct EncoderParams {
    Tensor<T> patch_w, patch_b;                  // [p·p·3, d], [d]
    Tensor<T> pos_embed;                         // [R + N, d]
    std::optional<Tensor<T>> register_tokens;    // [R, d] when R > 0
    std::vector<BlockParams<T>> blocks;
    Tensor<T> norm_g, norm_b;

    /// Visits every tensor with its checkpoint name, in the fixed
    /// serialization order.
    template <typename F>
    void for_each(F&& f) const {
        f("encoder.patch_embed.weight", patch_w);
        f("encoder.patch_embed.bias", patch_b);
        f("encoder.pos_embed", pos_embed);
        if (register_tokens) f("encoder.register_tokens", *register_tokens);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto& b = blocks[i];
            const std::string p = "encoder.blocks." + std::to_string(i) + ".";
            f(p + "ln1.weight", b.ln1_g);
            f(p + "ln1.bias", b.ln1_b);
            f(p + "attn.qkv.weight", b.qkv_w);
            f(p + "attn.qkv.bias", b.qkv_b);
            f(p + "attn.proj.weight", b.proj_w);
            f(p + "attn.proj.bias", b.proj_b);
            f(p + "ln2.weight", b.ln2_g);
            f(p + "ln2.bias", b.ln2_b);
            f(p + "mlp.fc1.weight", b.fc1_w);
            f(p + "mlp.fc1.bias", b.fc1_b);
            f(p + "mlp.fc2.weight", b.fc2_w);
            f(p + "mlp.fc2.bias", b.fc2_b);
        }
        f("encoder.norm.weight", norm_g);
        f("encoder.norm.bias", norm_b);
    }

    template <typename F>
    void for_each_mut(F&& f) {
        const_cast<const EncoderParams&>(*this).for_each(
            [&](const std::string& n, const Tensor<T>& t) { f(n, const_cast<Tensor<T>&>(t)); });
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

    template <Real U>
    EncoderParams<U> cast() const {
        EncoderParams<U> out;
        out.patch_w = patch_w.template cast<U>();
        out.patch_b = patch_b.template cast<U>();
        out.pos_embed = pos_embed.template cast<U>();
        if (register_tokens) out.register_tokens = register_tokens->template cast<U>();
        for (const auto& b : blocks) {
            out.blocks.push_back({b.ln1_g.template cast<U>(), b.ln1_b.template cast<U>(),
                                  b.qkv_w.template cast<U>(), b.qkv_b.template cast<U>(),
                                  b.proj_w.template cast<U>(), b.proj_b.template cast<U>(),
                                  b.ln2_g.template cast<U>(), b.ln2_b.template cast<U>(),
                                  b.fc1_w.template cast<U>(), b.fc1_b.template cast<U>(),
                                  b.fc2_w.template cast<U>(), b.fc2_b.template cast<U>()});
        }
        out.norm_g = norm_g.template cast<U>();
        out.norm_b = norm_b.template cast<U>();
        return out;
    }
};

/// Closed-form frozen parameter count.
inline std::size_t encoder_param_count(const EncoderConfig& c) {
    const std::size_t d = c.embed_dim, h = c.mlp_hidden(), n = c.grid_h() * c.grid_w(), r = c.n_register;
    const std::size_t block = 4 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d);
    return c.patch_dim() * d + d + (n + r) * d + r * d + c.depth * block + 2 * d;
}

/// Layer-norm epsilon used by every norm in the backbone.
inline constexpr double kEncoderLnEps = 1e-6;

namespace detail {

template <Real T>
Tensor<T> truncated_normal_tensor(Shape shape, SplitMix64 rng, double std = 0.02) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(std));
    return t;
}

}  // namespace detail

/// Deterministic stand-in for pretrained weights. Weights ~ truncated
/// normal(0, 0.02) clipped at ±2σ, biases zero, norm scales one. Each
/// tensor draws from its own SplitMix64 stream keyed by its checkpoint name.
template <Real T>
EncoderParams<T> init_frozen(const EncoderConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim, h = cfg.mlp_hidden();
    const std::size_t n = cfg.grid_h() * cfg.grid_w(), r = cfg.n_register;
    const SplitMix64 root = SplitMix64(cfg.seed).split("encoder");
    auto weight = [&](const std::string& name, Shape s) {
        return detail::truncated_normal_tensor<T>(std::move(s), root.split(name));
    };
    EncoderParams<T> p;
    p.patch_w = weight("encoder.patch_embed.weight", {cfg.patch_dim(), d});
    p.patch_b = Tensor<T>({d});
    p.pos_embed = weight("encoder.pos_embed", {n + r, d});
    if (r > 0) p.register_tokens = weight("encoder.register_tokens", {r, d});
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string pre = "encoder.blocks." + std::to_string(i) + ".";
        BlockParams<T> b;
        b.ln1_g = Tensor<T>({d}, T(1));
        b.ln1_b = Tensor<T>({d});
        b.qkv_w = weight(pre + "attn.qkv.weight", {d, 3 * d});
        b.qkv_b = Tensor<T>({3 * d});
        b.proj_w = weight(pre + "attn.proj.weight", {d, d});
        b.proj_b = Tensor<T>({d});
        b.ln2_g = Tensor<T>({d}, T(1));
        b.ln2_b = Tensor<T>({d});
        b.fc1_w = weight(pre + "mlp.fc1.weight", {d, h});
        b.fc1_b = Tensor<T>({h});
        b.fc2_w = weight(pre + "mlp.fc2.weight", {h, d});
        b.fc2_b = Tensor<T>({d});
        p.blocks.push_back(std::move(b));
    }
    p.norm_g = Tensor<T>({d}, T(1));
    p.norm_b = Tensor<T>({d});
    return p;
}

/// Splits an [H,W,3] image into row-major p×p patches. Row n of the result
/// is patch (n / (W/p), n % (W/p)); within a patch, pixels are row-major
/// and channels are minor.
template <Real T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t p) {
    detail::require_rank(image, 3, "patchify");
    const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
    if (p == 0 || H % p || W % p)
        throw ShapeError("patchify: image " + shape_str(image.shape()) + " not divisible by patch size " +
                         std::to_string(p));
    const std::size_t gw = W / p, n = (H / p) * gw;
    Tensor<T> out({n, p * p * C});
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t py = k / gw, px = k % gw;
        T* dst = out.data().data() + k * p * p * C;
        for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx)
                for (std::size_t c = 0; c < C; ++c) *dst++ = image.at(py * p + dy, px * p + dx, c);
    }
    return out;
}

template <Real T>
Tensor<T> depatchify(const Tensor<T>& patches, std::size_t H, std::size_t W, std::size_t p, std::size_t C = 3) {
    detail::require_rank(patches, 2, "depatchify");
    if (p == 0 || H % p || W % p || patches.dim(0) != (H / p) * (W / p) || patches.dim(1) != p * p * C)
        throw ShapeError("depatchify: patches " + shape_str(patches.shape()) + " inconsistent with image " +
                         std::to_string(H) + "x" + std::to_string(W) + " and patch " + std::to_string(p));
    const std::size_t gw = W / p;
    Tensor<T> image({H, W, C});
    for (std::size_t k = 0; k < patches.dim(0); ++k) {
        const std::size_t py = k / gw, px = k % gw;
        const T* src = patches.data().data() + k * p * p * C;
        for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx)
                for (std::size_t c = 0; c < C; ++c) image.at(py * p + dy, px * p + dx, c) = *src++;
    }
    return image;
}

/// Receives (head index, [T,T] attention weights) from inside a block.
template <Real T>
using AttentionProbe = std::function<void(std::size_t, const Tensor<T>&)>;

/// Pre-LN transformer block:
///   z ← z + proj(MHSA(LN1(z)));  z ← z + fc2(gelu(fc1(LN2(z)))).
/// Attention is scaled dot-product with scale 1/√(d/heads).
template <Real T>
Tensor<T> transformer_block(const Tensor<T>& z, const BlockParams<T>& bp, std::size_t heads,
                            const AttentionProbe<T>& probe = {}) {
    detail::require_rank(z, 2, "transformer_block");
    const std::size_t tokens = z.dim(0), d = z.dim(1);
    if (heads == 0 || d % heads || bp.qkv_w.shape() != Shape{d, 3 * d} || bp.proj_w.shape() != Shape{d, d} ||
        bp.fc1_w.dim(0) != d || bp.fc2_w.dim(1) != d)
        throw ShapeError("transformer_block: token shape " + shape_str(z.shape()) +
                         " inconsistent with block parameters");
    const std::size_t dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const T eps = static_cast<T>(kEncoderLnEps);

    const Tensor<T> qkv = linear(layer_norm(z, bp.ln1_g, bp.ln1_b, eps), bp.qkv_w, bp.qkv_b);
    Tensor<T> attn_out({tokens, d});
    Tensor<T> scores({tokens, tokens});
    for (std::size_t hd = 0; hd < heads; ++hd) {
        const std::size_t qo = hd * dh, ko = d + hd * dh, vo = 2 * d + hd * dh;
        for (std::size_t i = 0; i < tokens; ++i)
            for (std::size_t j = 0; j < tokens; ++j) {
                T s = 0;
                for (std::size_t e = 0; e < dh; ++e) s += qkv.at(i, qo + e) * qkv.at(j, ko + e);
                scores.at(i, j) = s * scale;
            }
        const Tensor<T> probs = softmax(scores);
        if (probe) probe(hd, probs);
        for (std::size_t i = 0; i < tokens; ++i)
            for (std::size_t j = 0; j < tokens; ++j) {
                const T a = probs.at(i, j);
                for (std::size_t e = 0; e < dh; ++e) attn_out.at(i, qo + e) += a * qkv.at(j, vo + e);
            }
    }
    Tensor<T> out = z + linear(attn_out, bp.proj_w, bp.proj_b);
    const Tensor<T> hidden = gelu(linear(layer_norm(out, bp.ln2_g, bp.ln2_b, eps), bp.fc1_w, bp.fc1_b));
    return std::move(out) + linear(hidden, bp.fc2_w, bp.fc2_b);
}

/// Z⁽⁰⁾: patch embedding with register tokens prepended and positional
/// embeddings added to every row. Shape [R + N, d].
template <Real T>
Tensor<T> embed_tokens(const Tensor<T>& image, const EncoderParams<T>& params, const EncoderConfig& cfg) {
    if (image.rank() != 3 || image.dim(0) != cfg.image_h || image.dim(1) != cfg.image_w || image.dim(2) != 3)
        throw ShapeError("encoder input " + shape_str(image.shape()) + " does not match configured " +
                         shape_str({cfg.image_h, cfg.image_w, 3}));
    const Tensor<T> patches = linear(patchify(image, cfg.patch_size), params.patch_w, params.patch_b);
    const std::size_t n = patches.dim(0), d = patches.dim(1), r = cfg.n_register;
    Tensor<T> z({r + n, d});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) z.at(i, j) = params.register_tokens->at(i, j);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) z.at(r + i, j) = patches.at(i, j);
    return std::move(z) + params.pos_embed;
}

namespace detail {

/// Final layer norm applied to the patch rows (register rows dropped).
template <Real T>
Tensor<T> patch_rows_normed(const Tensor<T>& z, const EncoderParams<T>& params, std::size_t n_register) {
    const std::size_t n = z.dim(0) - n_register, d = z.dim(1);
    Tensor<T> rows({n, d});
    std::copy(z.data().begin() + static_cast<std::ptrdiff_t>(n_register * d), z.data().end(), rows.data().begin());
    return layer_norm(rows, params.norm_g, params.norm_b, static_cast<T>(kEncoderLnEps));
}

}  // namespace detail

/// Runs blocks 1..L once and snapshots the patch tokens after each tap
/// layer, in tap order. Each snapshot passes through the shared final norm.
/// Returns K tensors of shape [N, d].
template <Real T>
std::vector<Tensor<T>> forward_collect(const Tensor<T>& image, const EncoderParams<T>& params,
                                       const EncoderConfig& cfg, const AttentionProbe<T>& probe = {}) {
    Tensor<T> z = embed_tokens(image, params, cfg);
    std::vector<Tensor<T>> taps;
    taps.reserve(cfg.tap_layers.size());
    std::size_t next = 0;
    const std::size_t last = cfg.tap_layers.back();
    for (std::size_t l = 1; l <= last; ++l) {
        z = transformer_block(z, params.blocks[l - 1], cfg.heads, probe);
        if (next < cfg.tap_layers.size() && cfg.tap_layers[next] == l) {
            taps.push_back(detail::patch_rows_normed(z, params, cfg.n_register));
            ++next;
        }
    }
    return taps;
}

/// Full-depth forward; returns the normed final patch tokens [N, d].
template <Real T>
Tensor<T> encode(const Tensor<T>& image, const EncoderParams<T>& params, const EncoderConfig& cfg) {
    Tensor<T> z = embed_tokens(image, params, cfg);
    for (const auto& b : params.blocks) z = transformer_block(z, b, cfg.heads);
    return detail::patch_rows_normed(z, params, cfg.n_register);
}

}  // namespace segdino
