#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "segdino/error.hpp"

namespace segdino {

template <typename T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major array. Every extent is >= 1 and the element count always
/// equals the product of the extents.
template <Real T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        data_.assign(checked_count(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_count(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    const std::vector<T>& vec() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_.back() + c]; }
    const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_.back() + c]; }

    T& at(std::size_t i, std::size_t j, std::size_t k) noexcept {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    const T& at(std::size_t i, std::size_t j, std::size_t k) const noexcept {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    /// Same data, new shape of equal element count.
    Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
    Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

    /// Row r of a rank-2 tensor.
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * shape_.back(), shape_.back()}; }
    std::span<T> row(std::size_t r) { return {data_.data() + r * shape_.back(), shape_.back()}; }

    /// Elementwise conversion to another precision.
    template <Real U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    static std::size_t checked_count(const Shape& s) {
        if (s.empty()) throw ShapeError("tensor shape must have at least one extent");
        std::size_t n = 1;
        for (std::size_t e : s) {
            if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + shape_str(s));
            n *= e;
        }
        return n;
    }

    Shape shape_;
    std::vector<T> data_;
};

namespace detail {

template <Real T>
void require_rank(const Tensor<T>& t, std::size_t r, const char* what) {
    if (t.rank() != r)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(t.shape()));
}

template <Real T>
void require_finite(std::span<const T> xs, const char* what) {
    for (T v : xs)
        if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite input");
}

}  // namespace detail

/// a[m,k] x b[k,n]. Each output element accumulates over k in increasing
/// order, so the result is independent of blocking or thread count.
template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a, 2, "matmul lhs");
    detail::require_rank(b, 2, "matmul rhs");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor<T> c({m, n});
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* pc = c.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = pc + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = pa[i * k + kk];
            const T* brow = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

/// aᵀ[k,m] x b[m,n] without materializing the transpose.
template <Real T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a, 2, "matmul_tn lhs");
    detail::require_rank(b, 2, "matmul_tn rhs");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != m)
        throw ShapeError("matmul_tn dimension mismatch: " + shape_str(a.shape()) + "^T x " +
                         shape_str(b.shape()));
    Tensor<T> c({k, n});
    T* pc = c.data().data();
    for (std::size_t r = 0; r < m; ++r) {
        const T* arow = a.data().data() + r * k;
        const T* brow = b.data().data() + r * n;
        for (std::size_t i = 0; i < k; ++i) {
            const T av = arow[i];
            T* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

/// a[m,k] x bᵀ[k,n] where b is stored [n,k].
template <Real T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a, 2, "matmul_nt lhs");
    detail::require_rank(b, 2, "matmul_nt rhs");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw ShapeError("matmul_nt dimension mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
    Tensor<T> c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a.data().data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b.data().data() + j * k;
            T s = 0;
            for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            c.at(i, j) = s;
        }
    }
    return c;
}

/// x[m,n] + bias[n] broadcast over rows, in place.
template <Real T>
void add_bias(Tensor<T>& x, const Tensor<T>& bias) {
    const std::size_t n = x.shape().back();
    if (bias.size() != n)
        throw ShapeError("bias length " + std::to_string(bias.size()) + " does not match width " +
                         std::to_string(n));
    auto d = x.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += bias[i % n];
}

/// x[m,n] x w[n,p] + b[p].
template <Real T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    Tensor<T> y = matmul(x, w);
    add_bias(y, b);
    return y;
}

template <Real T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

namespace detail {

/// Accepts eps == 0 so tests can probe the exact normalization.
template <Real T>
Tensor<T> layer_norm_impl(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const std::size_t d = x.shape().back();
    if (gamma.size() != d || beta.size() != d)
        throw ShapeError("layer_norm: last extent " + std::to_string(d) + " vs gamma " +
                         shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
    Tensor<T> y(x.shape());
    const std::size_t rows = x.size() / d;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data().data() + r * d;
        T* out = y.data().data() + r * d;
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) out[j] = (in[j] - mean) * inv * gamma[j] + beta[j];
    }
    return y;
}

}  // namespace detail

/// Normalizes each last-axis slice to zero mean and unit population
/// variance, then applies gamma/beta.
template <Real T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (!(eps > T(0))) throw ParameterError("layer_norm: eps must be > 0");
    return detail::layer_norm_impl(x, gamma, beta, eps);
}

/// Last-axis softmax with max subtraction.
template <Real T>
Tensor<T> softmax(const Tensor<T>& x) {
    detail::require_finite<T>(x.data(), "softmax");
    const std::size_t n = x.shape().back();
    Tensor<T> y(x.shape());
    for (std::size_t r = 0; r < x.size() / n; ++r) {
        const T* in = x.data().data() + r * n;
        T* out = y.data().data() + r * n;
        const T mx = *std::max_element(in, in + n);
        T sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
    }
    return y;
}

/// Exact GELU, x·Φ(x) with Φ from erf.
template <Real T>
T gelu(T x) noexcept {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

/// d/dx of x·Φ(x) = Φ(x) + x·φ(x).
template <Real T>
T gelu_grad(T x) noexcept {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);
    return cdf + x * pdf;
}

template <Real T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
    return y;
}

namespace detail {

/// Source sampling for one axis under the half-pixel convention
/// (align_corners = false): src = (dst + 0.5)·in/out − 0.5, clamped at 0.
struct AxisTap {
    std::size_t lo, hi;
    double frac;
};

inline std::vector<AxisTap> axis_taps(std::size_t in, std::size_t out) {
    std::vector<AxisTap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        auto lo = static_cast<std::size_t>(src);
        if (lo > in - 1) lo = in - 1;
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

}  // namespace detail

/// Bilinear resize of an [h,w,c] field, channels independent, half-pixel
/// centers. Interpolates as a + t·(b − a) so constant fields stay exact.
template <Real T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    detail::require_rank(x, 3, "bilinear_resize");
    if (out_h < 1 || out_w < 1) throw ParameterError("bilinear_resize: output size must be >= 1");
    const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const auto ty = detail::axis_taps(h, out_h);
    const auto tx = detail::axis_taps(w, out_w);
    Tensor<T> y({out_h, out_w, c});
    for (std::size_t i = 0; i < out_h; ++i) {
        const T fy = static_cast<T>(ty[i].frac);
        for (std::size_t j = 0; j < out_w; ++j) {
            const T fx = static_cast<T>(tx[j].frac);
            for (std::size_t k = 0; k < c; ++k) {
                const T a = x.at(ty[i].lo, tx[j].lo, k), b = x.at(ty[i].lo, tx[j].hi, k);
                const T cc = x.at(ty[i].hi, tx[j].lo, k), d = x.at(ty[i].hi, tx[j].hi, k);
                const T top = a + fx * (b - a);
                const T bot = cc + fx * (d - cc);
                y.at(i, j, k) = top + fy * (bot - top);
            }
        }
    }
    return y;
}

/// Adjoint of bilinear_resize: scatters g[out_h,out_w,c] back onto [h,w,c].
template <Real T>
Tensor<T> bilinear_resize_adjoint(const Tensor<T>& g, std::size_t h, std::size_t w) {
    detail::require_rank(g, 3, "bilinear_resize_adjoint");
    const std::size_t out_h = g.dim(0), out_w = g.dim(1), c = g.dim(2);
    const auto ty = detail::axis_taps(h, out_h);
    const auto tx = detail::axis_taps(w, out_w);
    Tensor<T> x({h, w, c});
    for (std::size_t i = 0; i < out_h; ++i) {
        const T fy = static_cast<T>(ty[i].frac);
        for (std::size_t j = 0; j < out_w; ++j) {
            const T fx = static_cast<T>(tx[j].frac);
            const T w00 = (T(1) - fy) * (T(1) - fx), w01 = (T(1) - fy) * fx;
            const T w10 = fy * (T(1) - fx), w11 = fy * fx;
            for (std::size_t k = 0; k < c; ++k) {
                const T v = g.at(i, j, k);
                x.at(ty[i].lo, tx[j].lo, k) += w00 * v;
                x.at(ty[i].lo, tx[j].hi, k) += w01 * v;
                x.at(ty[i].hi, tx[j].lo, k) += w10 * v;
                x.at(ty[i].hi, tx[j].hi, k) += w11 * v;
            }
        }
    }
    return x;
}

/// Order-sensitive 64-bit fingerprint of the raw bytes of a tensor.
template <Real T>
std::uint64_t checksum(const Tensor<T>& t, std::uint64_t h = 0xCBF29CE484222325ULL) {
    auto feed = [&h](const unsigned char* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001B3ULL;
        }
    };
    for (std::size_t e : t.shape()) feed(reinterpret_cast<const unsigned char*>(&e), sizeof e);
    feed(reinterpret_cast<const unsigned char*>(t.data().data()), t.size() * sizeof(T));
    return h;
}

}  // namespace segdino
