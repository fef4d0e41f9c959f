#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "segdino/data.hpp"
#include "segdino/decoder.hpp"
#include "segdino/encoder.hpp"
#include "segdino/error.hpp"
#include "segdino/metrics.hpp"
#include "segdino/trainer.hpp"

namespace segdino {

struct DataConfig {
    std::string manifest;  // empty: synthesize from `synth`
    SynthConfig synth;
    NormalizeConfig norm;
};

struct MetricsConfig {
    MetricOptions options;
    std::string hd95_convention = kHd95Convention;
};

/// Everything one CLI run needs. Serialized as `section.key = value` lines.
struct RunConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    TrainConfig train;
    DataConfig data;
    MetricsConfig metrics;
    std::string output_dir = "run";

    /// Every violated invariant across all sections.
    std::vector<std::string> violations() const {
        std::vector<std::string> v = encoder.violations();
        for (auto& s : decoder.violations()) v.push_back(std::move(s));
        for (auto& s : train.violations()) v.push_back(std::move(s));
        if (decoder.tap_count != encoder.tap_layers.size())
            v.push_back("decoder.tap_count " + std::to_string(decoder.tap_count) +
                        " must equal the number of encoder.tap_layers (" + std::to_string(encoder.tap_layers.size()) +
                        ")");
        if (data.synth.n_samples < 1) v.emplace_back("data.n_samples must be >= 1");
        if (data.synth.shapes.empty()) v.emplace_back("data.shapes must name at least one shape");
        if (data.synth.noise_std < 0) v.emplace_back("data.noise_std must be >= 0");
        if (encoder.patch_size && data.synth.size % encoder.patch_size)
            v.push_back("data.size " + std::to_string(data.synth.size) + " is not divisible by encoder.patch_size " +
                        std::to_string(encoder.patch_size));
        for (double s : data.norm.std)
            if (!(s > 0)) v.emplace_back("data.norm_std entries must be > 0");
        const Grid cg = decoder.common_grid(encoder);
        if (train.loss_resolution == LossResolution::token && cg.h && cg.w &&
            (encoder.image_h % cg.h || encoder.image_w % cg.w))
            v.emplace_back("token loss needs the image size to be divisible by the decoder common grid");
        if (!(metrics.options.beta_sq > 0)) v.emplace_back("metrics.beta_sq must be > 0");
        if (!(metrics.options.threshold >= 0 && metrics.options.threshold <= 1))
            v.emplace_back("metrics.threshold must be in [0, 1]");
        return v;
    }

    void validate() const {
        auto v = violations();
        if (v.empty()) return;
        std::string msg = "invalid configuration:";
        for (auto& s : v) msg += "\n  - " + s;
        throw ValidationError(msg);
    }

    friend bool operator==(const RunConfig& a, const RunConfig& b);
};

/// Values from the reference experimental setup: 256×256 input, a 12-block
/// ViT-S geometry tapped at blocks 3/6/9/12, AdamW 1e-4/1e-4, 50 epochs of
/// batch 4.
inline RunConfig paper_defaults() {
    RunConfig c;
    c.encoder.image_h = c.encoder.image_w = 256;
    c.encoder.patch_size = 16;
    c.encoder.embed_dim = 384;
    c.encoder.depth = 12;
    c.encoder.heads = 6;
    c.encoder.tap_layers = {3, 6, 9, 12};
    c.decoder.tap_count = 4;
    c.train.learning_rate = 1e-4;
    c.train.weight_decay = 1e-4;
    c.train.epochs = 50;
    c.train.batch_size = 4;
    c.data.synth.size = 256;
    return c;
}

namespace detail {

inline std::string fmt_real(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <typename T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + f(xs[i]);
    return s;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
    double out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ValidationError("config " + key + ": expected a real number, got '" + v + "'");
    return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ValidationError("config " + key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

/// Binds each config key to a getter/setter pair so that printing and
/// parsing walk the same table.
struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        auto sz = [&f](std::string key, auto member) {
            f.push_back({key, [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
                         [member, key](RunConfig& c, const std::string& v) {
                             member(c) = static_cast<std::size_t>(parse_uint(key, v));
                         }});
        };
        auto real_field = [&f](std::string key, auto member) {
            f.push_back({key, [member](const RunConfig& c) { return fmt_real(member(const_cast<RunConfig&>(c))); },
                         [member, key](RunConfig& c, const std::string& v) { member(c) = parse_real(key, v); }});
        };
        auto seed_field = [&f](std::string key, auto member) {
            f.push_back({key, [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
                         [member, key](RunConfig& c, const std::string& v) { member(c) = parse_uint(key, v); }});
        };

        sz("encoder.image_h", [](RunConfig& c) -> std::size_t& { return c.encoder.image_h; });
        sz("encoder.image_w", [](RunConfig& c) -> std::size_t& { return c.encoder.image_w; });
        sz("encoder.patch_size", [](RunConfig& c) -> std::size_t& { return c.encoder.patch_size; });
        sz("encoder.embed_dim", [](RunConfig& c) -> std::size_t& { return c.encoder.embed_dim; });
        sz("encoder.depth", [](RunConfig& c) -> std::size_t& { return c.encoder.depth; });
        sz("encoder.heads", [](RunConfig& c) -> std::size_t& { return c.encoder.heads; });
        real_field("encoder.mlp_ratio", [](RunConfig& c) -> double& { return c.encoder.mlp_ratio; });
        f.push_back({"encoder.tap_layers",
                     [](const RunConfig& c) {
                         return join<std::size_t>(c.encoder.tap_layers,
                                                  [](const std::size_t& x) { return std::to_string(x); });
                     },
                     [](RunConfig& c, const std::string& v) {
                         c.encoder.tap_layers.clear();
                         for (auto& s : split_list(v))
                             c.encoder.tap_layers.push_back(static_cast<std::size_t>(parse_uint("encoder.tap_layers", s)));
                     }});
        sz("encoder.n_register", [](RunConfig& c) -> std::size_t& { return c.encoder.n_register; });
        seed_field("encoder.seed", [](RunConfig& c) -> std::uint64_t& { return c.encoder.seed; });

        sz("decoder.channels", [](RunConfig& c) -> std::size_t& { return c.decoder.channels; });
        sz("decoder.tap_count", [](RunConfig& c) -> std::size_t& { return c.decoder.tap_count; });
        sz("decoder.hidden_dim", [](RunConfig& c) -> std::size_t& { return c.decoder.hidden_dim; });
        sz("decoder.n_class", [](RunConfig& c) -> std::size_t& { return c.decoder.n_class; });
        sz("decoder.common_h", [](RunConfig& c) -> std::size_t& { return c.decoder.common_h; });
        sz("decoder.common_w", [](RunConfig& c) -> std::size_t& { return c.decoder.common_w; });

        real_field("train.learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
        real_field("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
        real_field("train.beta1", [](RunConfig& c) -> double& { return c.train.beta1; });
        real_field("train.beta2", [](RunConfig& c) -> double& { return c.train.beta2; });
        real_field("train.eps_adam", [](RunConfig& c) -> double& { return c.train.eps_adam; });
        sz("train.batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
        sz("train.epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
        sz("train.max_steps", [](RunConfig& c) -> std::size_t& { return c.train.max_steps; });
        seed_field("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
        f.push_back({"train.loss_resolution", [](const RunConfig& c) { return std::string(to_string(c.train.loss_resolution)); },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "token") c.train.loss_resolution = LossResolution::token;
                         else if (v == "pixel") c.train.loss_resolution = LossResolution::pixel;
                         else throw ValidationError("config train.loss_resolution: expected token or pixel, got '" + v + "'");
                     }});
        f.push_back({"train.class_weighting",
                     [](const RunConfig& c) {
                         return std::string(c.train.inverse_frequency_weights ? "inverse_frequency" : "none");
                     },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "none") c.train.inverse_frequency_weights = false;
                         else if (v == "inverse_frequency") c.train.inverse_frequency_weights = true;
                         else throw ValidationError("config train.class_weighting: expected none or inverse_frequency, got '" + v + "'");
                     }});

        f.push_back({"data.manifest", [](const RunConfig& c) { return c.data.manifest; },
                     [](RunConfig& c, const std::string& v) { c.data.manifest = v; }});
        sz("data.n_samples", [](RunConfig& c) -> std::size_t& { return c.data.synth.n_samples; });
        sz("data.size", [](RunConfig& c) -> std::size_t& { return c.data.synth.size; });
        f.push_back({"data.shapes",
                     [](const RunConfig& c) {
                         return join<ShapeKind>(c.data.synth.shapes, [](const ShapeKind& k) { return std::string(to_string(k)); });
                     },
                     [](RunConfig& c, const std::string& v) {
                         c.data.synth.shapes.clear();
                         for (auto& s : split_list(v)) {
                             if (s == "disk") c.data.synth.shapes.push_back(ShapeKind::disk);
                             else if (s == "rectangle") c.data.synth.shapes.push_back(ShapeKind::rectangle);
                             else if (s == "annulus") c.data.synth.shapes.push_back(ShapeKind::annulus);
                             else throw ValidationError("config data.shapes: unknown shape '" + s + "'");
                         }
                     }});
        real_field("data.noise_std", [](RunConfig& c) -> double& { return c.data.synth.noise_std; });
        f.push_back({"data.texture", [](const RunConfig& c) { return std::string(to_string(c.data.synth.texture)); },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "flat") c.data.synth.texture = Texture::flat;
                         else if (v == "gradient") c.data.synth.texture = Texture::gradient;
                         else if (v == "checker") c.data.synth.texture = Texture::checker;
                         else throw ValidationError("config data.texture: expected flat, gradient or checker, got '" + v + "'");
                     }});
        seed_field("data.seed", [](RunConfig& c) -> std::uint64_t& { return c.data.synth.seed; });
        auto triple = [&f](std::string key, auto member) {
            f.push_back({key,
                         [member](const RunConfig& c) {
                             const auto& a = member(const_cast<RunConfig&>(c));
                             return fmt_real(a[0]) + "," + fmt_real(a[1]) + "," + fmt_real(a[2]);
                         },
                         [member, key](RunConfig& c, const std::string& v) {
                             auto parts = split_list(v);
                             if (parts.size() != 3) throw ValidationError("config " + key + ": expected three values");
                             auto& a = member(c);
                             for (int i = 0; i < 3; ++i) a[i] = parse_real(key, parts[i]);
                         }});
        };
        triple("data.norm_mean", [](RunConfig& c) -> std::array<double, 3>& { return c.data.norm.mean; });
        triple("data.norm_std", [](RunConfig& c) -> std::array<double, 3>& { return c.data.norm.std; });

        real_field("metrics.beta_sq", [](RunConfig& c) -> double& { return c.metrics.options.beta_sq; });
        real_field("metrics.threshold", [](RunConfig& c) -> double& { return c.metrics.options.threshold; });
        f.push_back({"metrics.hd95_convention", [](const RunConfig& c) { return c.metrics.hd95_convention; },
                     [](RunConfig& c, const std::string& v) {
                         if (v != kHd95Convention)
                             throw ValidationError("config metrics.hd95_convention: only '" +
                                                   std::string(kHd95Convention) + "' is implemented");
                         c.metrics.hd95_convention = v;
                     }});
        f.push_back({"output.dir", [](const RunConfig& c) { return c.output_dir; },
                     [](RunConfig& c, const std::string& v) { c.output_dir = v; }});
        return f;
    }();
    return table;
}

}  // namespace detail

/// Every key in canonical order, one `key = value` per line.
inline std::string to_text(const RunConfig& c) {
    std::string out;
    for (const auto& f : detail::fields()) out += f.key + " = " + f.get(c) + "\n";
    return out;
}

/// Applies `key = value` lines on top of `base`. Blank lines and `#`
/// comments are ignored; unknown keys are errors.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
    std::map<std::string, const detail::Field*> index;
    for (const auto& f : detail::fields()) index[f.key] = &f;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
        auto it = index.find(key);
        if (it == index.end())
            throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        it->second->set(base, value);
    }
    return base;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
    return parse_config(detail::read_file(path), std::move(base));
}

inline bool operator==(const RunConfig& a, const RunConfig& b) { return to_text(a) == to_text(b); }

}  // namespace segdino
