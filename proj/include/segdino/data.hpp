#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "segdino/error.hpp"
#include "segdino/mask.hpp"
#include "segdino/rng.hpp"
#include "segdino/tensor.hpp"

namespace segdino {

/// An image in [0, 1] with its label mask.
struct Sample {
    std::string id;
    Tensor<float> image;  // [H, W, 3]
    Mask mask;
};

enum class ShapeKind { disk, rectangle, annulus };
enum class Texture { flat, gradient, checker };

inline const char* to_string(ShapeKind k) {
    switch (k) {
        case ShapeKind::disk: return "disk";
        case ShapeKind::rectangle: return "rectangle";
        case ShapeKind::annulus: return "annulus";
    }
    return "?";
}

inline const char* to_string(Texture t) {
    switch (t) {
        case Texture::flat: return "flat";
        case Texture::gradient: return "gradient";
        case Texture::checker: return "checker";
    }
    return "?";
}

struct SynthConfig {
    std::size_t n_samples = 200;
    std::size_t size = 64;
    std::vector<ShapeKind> shapes{ShapeKind::disk, ShapeKind::rectangle};
    double noise_std = 0.05;
    Texture texture = Texture::flat;
    std::uint64_t seed = 0;
};

/// A foreground primitive in pixel coordinates. Disks and annuli use
/// (cx, cy, outer, inner) radii; rectangles use half extents (a, b).
struct ShapeSpec {
    ShapeKind kind = ShapeKind::disk;
    double cx = 0, cy = 0;
    double a = 0, b = 0;
};

/// True when the center of pixel (row, col) lies inside the shape.
inline bool covers(const ShapeSpec& s, std::size_t row, std::size_t col) {
    const double dx = double(col) + 0.5 - s.cx, dy = double(row) + 0.5 - s.cy;
    switch (s.kind) {
        case ShapeKind::disk: return dx * dx + dy * dy <= s.a * s.a;
        case ShapeKind::rectangle: return std::abs(dx) <= s.a && std::abs(dy) <= s.b;
        case ShapeKind::annulus: {
            const double r2 = dx * dx + dy * dy;
            return r2 <= s.a * s.a && r2 >= s.b * s.b;
        }
    }
    return false;
}

inline Mask rasterize(const std::vector<ShapeSpec>& shapes, std::size_t h, std::size_t w) {
    Mask m(h, w);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            for (const auto& s : shapes)
                if (covers(s, r, c)) {
                    m.at(r, c) = 1;
                    break;
                }
    return m;
}

/// Nearest 8-bit level, so in-memory images survive a PPM round trip.
inline float quantize8(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

namespace detail {

inline ShapeSpec random_shape(SplitMix64& rng, ShapeKind kind, double size) {
    ShapeSpec s;
    s.kind = kind;
    double extent = 0;
    switch (kind) {
        case ShapeKind::disk:
            s.a = rng.uniform(0.12, 0.25) * size;
            extent = s.a;
            break;
        case ShapeKind::rectangle:
            s.a = rng.uniform(0.10, 0.25) * size;
            s.b = rng.uniform(0.10, 0.25) * size;
            extent = std::max(s.a, s.b);
            break;
        case ShapeKind::annulus:
            s.a = rng.uniform(0.18, 0.30) * size;
            s.b = s.a * rng.uniform(0.35, 0.55);
            extent = s.a;
            break;
    }
    s.cx = rng.uniform(extent, size - extent);
    s.cy = rng.uniform(extent, size - extent);
    return s;
}

}  // namespace detail

/// One synthetic sample, a pure function of (cfg, index).
///
/// Background: a per-sample color, optionally modulated by a horizontal
/// gradient or an 8-pixel checkerboard. Foreground: 1-3 shapes drawn from
/// `cfg.shapes`, filled with a brighter per-sample color shaded radially
/// from each shape center. Gaussian noise is added per channel, clipped to
/// [0, 1] and quantized to 8 bits. The mask is the exact union of shapes.
inline Sample synth_sample(const SynthConfig& cfg, std::size_t index) {
    if (cfg.shapes.empty()) throw ParameterError("synth: no shape kinds enabled");
    SplitMix64 rng = SplitMix64(cfg.seed).split("synth").split(static_cast<std::uint64_t>(index));
    const std::size_t n = cfg.size;
    const double size = double(n);

    std::array<double, 3> bg{}, fg{};
    for (auto& v : bg) v = rng.uniform(0.10, 0.45);
    for (auto& v : fg) v = rng.uniform(0.60, 0.95);

    std::vector<ShapeSpec> shapes(1 + rng.below(3));
    for (auto& s : shapes) s = detail::random_shape(rng, cfg.shapes[rng.below(cfg.shapes.size())], size);

    Sample out;
    char id[32];
    std::snprintf(id, sizeof id, "sample_%05zu", index);
    out.id = id;
    out.mask = rasterize(shapes, n, n);
    out.image = Tensor<float>({n, n, 3});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            double mod = 0;
            if (cfg.texture == Texture::gradient) mod = 0.15 * ((double(c) + 0.5) / size - 0.5);
            if (cfg.texture == Texture::checker) mod = ((r / 8 + c / 8) % 2) ? 0.06 : -0.06;
            const ShapeSpec* owner = nullptr;
            for (const auto& s : shapes)
                if (covers(s, r, c)) {
                    owner = &s;
                    break;
                }
            double shade = 1.0;
            if (owner) {
                const double dx = double(c) + 0.5 - owner->cx, dy = double(r) + 0.5 - owner->cy;
                const double reach = std::max(owner->a, owner->b);
                shade = 1.0 - 0.25 * std::min(1.0, std::sqrt(dx * dx + dy * dy) / reach);
            }
            for (std::size_t ch = 0; ch < 3; ++ch) {
                double v = owner ? fg[ch] * shade : bg[ch] + mod;
                if (cfg.noise_std > 0) v += cfg.noise_std * rng.normal();
                out.image.at(r, c, ch) = quantize8(v);
            }
        }
    return out;
}

inline std::vector<Sample> synth_generate(const SynthConfig& cfg) {
    if (cfg.n_samples < 1) throw ParameterError("synth: n_samples must be >= 1");
    if (cfg.size < 1) throw ParameterError("synth: size must be >= 1");
    std::vector<Sample> out;
    out.reserve(cfg.n_samples);
    for (std::size_t i = 0; i < cfg.n_samples; ++i) out.push_back(synth_sample(cfg, i));
    return out;
}

/// Bilinear image resize (half-pixel centers).
template <Real T>
Tensor<T> resize_image(const Tensor<T>& image, std::size_t out_h, std::size_t out_w) {
    return bilinear_resize(image, out_h, out_w);
}

/// Nearest-neighbor mask resize; never introduces new labels.
inline Mask resize_mask(const Mask& m, std::size_t out_h, std::size_t out_w) {
    if (out_h < 1 || out_w < 1) throw ParameterError("resize_mask: output size must be >= 1");
    Mask out(out_h, out_w);
    for (std::size_t r = 0; r < out_h; ++r) {
        const auto sr = std::min(m.height - 1, static_cast<std::size_t>((double(r) + 0.5) * double(m.height) / double(out_h)));
        for (std::size_t c = 0; c < out_w; ++c) {
            const auto sc = std::min(m.width - 1, static_cast<std::size_t>((double(c) + 0.5) * double(m.width) / double(out_w)));
            out.at(r, c) = m.at(sr, sc);
        }
    }
    return out;
}

/// Per-channel normalization constants. Defaults are the usual ImageNet
/// channel statistics.
struct NormalizeConfig {
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};
};

template <Real T>
Tensor<T> normalize(const Tensor<T>& image, const NormalizeConfig& n = {}) {
    detail::require_rank(image, 3, "normalize");
    Tensor<T> out(image.shape());
    for (std::size_t i = 0; i < image.size(); ++i) {
        const std::size_t c = i % image.dim(2);
        out[i] = static_cast<T>((double(image[i]) - n.mean[c]) / n.std[c]);
    }
    return out;
}

template <Real T>
Tensor<T> denormalize(const Tensor<T>& image, const NormalizeConfig& n = {}) {
    detail::require_rank(image, 3, "denormalize");
    Tensor<T> out(image.shape());
    for (std::size_t i = 0; i < image.size(); ++i) {
        const std::size_t c = i % image.dim(2);
        out[i] = static_cast<T>(double(image[i]) * n.std[c] + n.mean[c]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Netpbm IO

namespace detail {

/// Header of a binary netpbm file: magic, width, height, maxval, then a
/// single whitespace byte. Comments (# ... EOL) may appear between fields.
struct PnmHeader {
    char kind = 0;  // '5' or '6'
    std::size_t width = 0, height = 0, maxval = 0;
    std::size_t data_offset = 0;
};

inline PnmHeader parse_pnm_header(const std::string& bytes, const std::string& path) {
    PnmHeader h;
    std::size_t pos = 0;
    auto fail = [&](const std::string& why) {
        throw FormatError(path + ": " + why + " at byte offset " + std::to_string(pos));
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) fail("expected P5 or P6 magic");
    h.kind = bytes[1];
    pos = 2;
    auto skip_space = [&] {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            return;
        }
    };
    auto number = [&](const char* what) {
        if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
            fail(std::string("expected whitespace before ") + what);
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
            fail(std::string("expected ") + what);
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + std::size_t(bytes[pos] - '0');
            if (v > (1u << 24)) fail(std::string(what) + " too large");
            ++pos;
        }
        return v;
    };
    h.width = number("width");
    h.height = number("height");
    h.maxval = number("maxval");
    if (h.width == 0 || h.height == 0) fail("zero image dimension");
    if (h.maxval == 0 || h.maxval > 255) fail("unsupported maxval " + std::to_string(h.maxval));
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        fail("expected single whitespace after maxval");
    h.data_offset = ++pos;
    const std::size_t need = h.width * h.height * (h.kind == '6' ? 3 : 1);
    if (bytes.size() - h.data_offset < need) {
        pos = bytes.size();
        fail("truncated payload: need " + std::to_string(need) + " bytes, have " +
             std::to_string(bytes.size() - h.data_offset));
    }
    return h;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

/// Parses a binary PPM (P6). Values map to [0, 1] as v / maxval.
inline Tensor<float> parse_ppm(const std::string& bytes, const std::string& name = "<memory>") {
    const auto h = detail::parse_pnm_header(bytes, name);
    if (h.kind != '6') throw FormatError(name + ": expected P6 image at byte offset 0");
    Tensor<float> img({h.height, h.width, 3});
    const float scale = static_cast<float>(h.maxval);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const auto v = static_cast<unsigned char>(bytes[h.data_offset + i]);
        if (v > h.maxval)
            throw FormatError(name + ": sample exceeds maxval at byte offset " + std::to_string(h.data_offset + i));
        img[i] = static_cast<float>(v) / scale;
    }
    return img;
}

inline Tensor<float> load_image(const std::filesystem::path& path) {
    return parse_ppm(detail::read_file(path), path.string());
}

inline std::string encode_ppm(const Tensor<float>& image) {
    detail::require_rank(image, 3, "encode_ppm");
    if (image.dim(2) != 3) throw ShapeError("encode_ppm: image must have 3 channels");
    std::string out = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
    for (float v : image.data()) out.push_back(static_cast<char>(std::lround(std::clamp(double(v), 0.0, 1.0) * 255.0)));
    return out;
}

inline void save_image(const Tensor<float>& image, const std::filesystem::path& path) {
    detail::write_file(path, encode_ppm(image));
}

/// Binary PGM (P5). 0 → class 0, 255 → class 1; other bytes are taken as
/// raw label values.
inline Mask parse_pgm_mask(const std::string& bytes, const std::string& name = "<memory>") {
    const auto h = detail::parse_pnm_header(bytes, name);
    if (h.kind != '5') throw FormatError(name + ": expected P5 mask at byte offset 0");
    Mask m(h.height, h.width);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto v = static_cast<unsigned char>(bytes[h.data_offset + i]);
        m.labels[i] = v == 255 ? 1 : v;
    }
    return m;
}

inline Mask load_mask(const std::filesystem::path& path) {
    return parse_pgm_mask(detail::read_file(path), path.string());
}

/// Binary masks are written as 0/255; multi-class masks as raw labels
/// (at most 254 classes).
inline std::string encode_pgm_mask(const Mask& m) {
    const bool binary = m.is_binary();
    std::string out = "P5\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n255\n";
    for (auto v : m.labels) {
        if (v < 0 || v > 254) throw DomainError("mask label " + std::to_string(v) + " cannot be stored in PGM");
        out.push_back(static_cast<char>(binary && v == 1 ? 255 : v));
    }
    return out;
}

inline void save_mask(const Mask& m, const std::filesystem::path& path) {
    detail::write_file(path, encode_pgm_mask(m));
}

// ---------------------------------------------------------------------------
// Manifest and split

struct ManifestEntry {
    std::string id;
    std::filesystem::path image;
    std::filesystem::path mask;
};

/// `id<TAB>image_path<TAB>mask_path` per line. Relative paths are resolved
/// against the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    const std::string text = detail::read_file(path);
    std::vector<ManifestEntry> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    const auto base = path.parent_path();
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
            throw FormatError(path.string() + ": line " + std::to_string(lineno) + " is not id<TAB>image<TAB>mask");
        ManifestEntry e{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)};
        if (e.image.is_relative()) e.image = base / e.image;
        if (e.mask.is_relative()) e.mask = base / e.mask;
        out.push_back(std::move(e));
    }
    if (out.empty()) throw DataError(path.string() + ": manifest is empty");
    return out;
}

/// Deterministic ~80/20 split: a sample is held out when the hash of
/// (seed, id) is divisible by 5.
inline bool is_test_sample(const std::string& id, std::uint64_t seed) {
    return SplitMix64::mix(SplitMix64::hash(id) ^ SplitMix64::mix(seed ^ 0x5EED5EED5EED5EEDULL)) % 5 == 0;
}

struct DatasetSummary {
    std::size_t samples = 0;
    std::size_t pixels = 0;
    std::size_t foreground = 0;
};

/// Writes images/<id>.ppm, masks/<id>.pgm and manifest.tsv under `dir`.
/// Manifest paths are relative, so the bytes do not depend on `dir`.
inline DatasetSummary write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    std::filesystem::create_directories(dir / "masks", ec);
    if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
    std::string manifest;
    DatasetSummary s;
    for (const auto& smp : samples) {
        const std::string img = "images/" + smp.id + ".ppm", msk = "masks/" + smp.id + ".pgm";
        save_image(smp.image, dir / img);
        save_mask(smp.mask, dir / msk);
        manifest += smp.id + "\t" + img + "\t" + msk + "\n";
        ++s.samples;
        s.pixels += smp.mask.size();
        s.foreground += smp.mask.count(1);
    }
    detail::write_file(dir / "manifest.tsv", manifest);
    return s;
}

inline std::vector<Sample> load_dataset(const std::filesystem::path& manifest) {
    std::vector<Sample> out;
    for (const auto& e : read_manifest(manifest)) {
        Sample s{e.id, load_image(e.image), load_mask(e.mask)};
        if (s.image.dim(0) != s.mask.height || s.image.dim(1) != s.mask.width)
            throw DataError("sample " + e.id + ": image and mask sizes differ");
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace segdino
