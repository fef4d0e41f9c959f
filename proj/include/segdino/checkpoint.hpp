#pragma once

// SGDW parameter container. All integers little-endian:
//
//   "SGDW"            4 bytes magic
//   version           u32 (= 1)
//   entry_count       u32
//   entry_count × {
//     name_len        u32
//     name            name_len bytes, e.g. "decoder.head.fc1.weight"
//     rank            u32
//     dims            rank × u64
//     data            product(dims) × f32
//   }
//
// Entries appear in the fixed order of EncoderParams::for_each followed by
// DecoderParams::for_each. Encoder names start with "encoder.", decoder
// names with "decoder.".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "segdino/data.hpp"
#include "segdino/decoder.hpp"
#include "segdino/encoder.hpp"
#include "segdino/error.hpp"
#include "segdino/tensor.hpp"

namespace segdino {

inline constexpr char kCheckpointMagic[4] = {'S', 'G', 'D', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "SGDW IO assumes a little-endian host");

struct NamedArray {
    std::string name;
    Tensor<float> values;
};

namespace detail {

template <typename U>
void put(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
}

class Reader {
public:
    Reader(const std::string& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }

    std::string take(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const noexcept { return pos_; }
    bool done() const noexcept { return pos_ == bytes_.size(); }

    [[noreturn]] void fail(const std::string& why) const {
        throw FormatError(name_ + ": " + why + " at byte offset " + std::to_string(pos_));
    }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) fail(std::string("truncated ") + what);
    }

    const std::string& bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedArray>& arrays) {
    std::string out(kCheckpointMagic, 4);
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
        out += a.name;
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.values.rank()));
        for (std::size_t d : a.values.shape()) detail::put<std::uint64_t>(out, d);
        out.append(reinterpret_cast<const char*>(a.values.data().data()), a.values.size() * sizeof(float));
    }
    return out;
}

inline std::vector<NamedArray> decode_checkpoint(const std::string& bytes, const std::string& name = "<memory>") {
    detail::Reader r(bytes, name);
    if (r.take(4, "magic") != std::string(kCheckpointMagic, 4)) {
        throw FormatError(name + ": bad magic at byte offset 0 (expected SGDW)");
    }
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>("entry count");
    std::vector<NamedArray> out;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto len = r.get<std::uint32_t>("name length");
        std::string nm = r.take(len, "name");
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank == 0 || rank > 8) r.fail("invalid rank " + std::to_string(rank) + " for " + nm);
        Shape shape;
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const auto d = r.get<std::uint64_t>("dimension");
            if (d == 0 || d > (std::uint64_t{1} << 32)) r.fail("invalid dimension for " + nm);
            shape.push_back(static_cast<std::size_t>(d));
            n *= static_cast<std::size_t>(d);
        }
        const std::string raw = r.take(n * sizeof(float), "array data");
        std::vector<float> data(n);
        std::memcpy(data.data(), raw.data(), raw.size());
        out.push_back({std::move(nm), Tensor<float>(std::move(shape), std::move(data))});
    }
    if (!r.done()) r.fail("trailing bytes");
    return out;
}

template <Real T>
void append_arrays(std::vector<NamedArray>& out, const EncoderParams<T>& p) {
    p.for_each([&](const std::string& n, const Tensor<T>& t) { out.push_back({n, t.template cast<float>()}); });
}

template <Real T>
void append_arrays(std::vector<NamedArray>& out, const DecoderParams<T>& p) {
    p.for_each([&](const std::string& n, const Tensor<T>& t) { out.push_back({n, t.template cast<float>()}); });
}

/// Encoder (optional) and decoder parameters read back from a container.
struct Checkpoint {
    std::map<std::string, Tensor<float>> arrays;
    std::vector<std::string> order;
};

inline Checkpoint to_checkpoint(std::vector<NamedArray> arrays) {
    Checkpoint c;
    for (auto& a : arrays) {
        if (c.arrays.count(a.name)) throw FormatError("duplicate checkpoint entry " + a.name);
        c.order.push_back(a.name);
        c.arrays.emplace(a.name, std::move(a.values));
    }
    return c;
}

namespace detail {

template <typename Params>
void fill_from(Params& target, const Checkpoint& ckpt, const char* what) {
    target.for_each_mut([&](const std::string& name, auto& t) {
        auto it = ckpt.arrays.find(name);
        if (it == ckpt.arrays.end()) throw FormatError(std::string(what) + ": checkpoint lacks " + name);
        if (it->second.shape() != t.shape())
            throw ShapeError(std::string(what) + ": checkpoint " + name + " has shape " +
                             shape_str(it->second.shape()) + ", config expects " + shape_str(t.shape()));
        using V = typename std::decay_t<decltype(t)>::value_type;
        t = it->second.template cast<V>();
    });
}

}  // namespace detail

/// Decoder parameters shaped by the configs, filled from the checkpoint.
template <Real T>
DecoderParams<T> load_decoder(const Checkpoint& ckpt, const DecoderConfig& dcfg, std::size_t embed_dim) {
    DecoderParams<T> p = init_decoder<T>(dcfg, embed_dim, 0);
    detail::fill_from(p, ckpt, "decoder");
    return p;
}

template <Real T>
EncoderParams<T> load_encoder(const Checkpoint& ckpt, const EncoderConfig& ecfg) {
    EncoderParams<T> p = init_frozen<T>(ecfg);
    detail::fill_from(p, ckpt, "encoder");
    return p;
}

inline void save_checkpoint(const std::vector<NamedArray>& arrays, const std::filesystem::path& path) {
    detail::write_file(path, encode_checkpoint(arrays));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return to_checkpoint(decode_checkpoint(detail::read_file(path), path.string()));
}

}  // namespace segdino
