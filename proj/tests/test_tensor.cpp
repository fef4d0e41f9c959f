#include <gtest/gtest.h>

#include <cmath>

#include "segdino/rng.hpp"
#include "segdino/tensor.hpp"

using namespace segdino;

namespace {

Tensor<double> random_tensor(Shape s, SplitMix64& rng) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
}

}  // namespace

TEST(Tensor, RejectsZeroExtent) {
    EXPECT_THROW(Tensor<double>({3, 0}), ShapeError);
    EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    const Tensor<double> eye({2, 2}, {1, 0, 0, 1});
    const Tensor<double> a({2, 2}, {0.5, -2, 7, 3.25});
    EXPECT_EQ(matmul(eye, a), a);
}

TEST(Matmul, HandExample) {
    const Tensor<double> a({2, 2}, {1, 2, 3, 4});
    const Tensor<double> b({2, 1}, {5, 6});
    EXPECT_EQ(matmul(a, b), Tensor<double>({2, 1}, {17, 39}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    const Tensor<double> a({2, 3}), b({2, 2});
    try {
        matmul(a, b);
        FAIL();
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3]"), std::string::npos);
        EXPECT_NE(msg.find("[2,2]"), std::string::npos);
    }
}

TEST(Matmul, Associative) {
    SplitMix64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6), p = 1 + rng.below(6);
        const auto a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng), c = random_tensor({n, p}, rng);
        const auto lhs = matmul(matmul(a, b), c), rhs = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-10);
    }
}

TEST(Matmul, TransposedVariantsAgree) {
    SplitMix64 rng(3);
    const auto a = random_tensor({4, 3}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({5, 3}, rng);
    Tensor<double> at({3, 4});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) at.at(j, i) = a.at(i, j);
    Tensor<double> ct({3, 5});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 3; ++j) ct.at(j, i) = c.at(i, j);
    const auto tn = matmul_tn(a, b), ref_tn = matmul(at, b);
    const auto nt = matmul_nt(a, c), ref_nt = matmul(a, ct);
    for (std::size_t i = 0; i < tn.size(); ++i) EXPECT_NEAR(tn[i], ref_tn[i], 1e-14);
    for (std::size_t i = 0; i < nt.size(); ++i) EXPECT_NEAR(nt[i], ref_nt[i], 1e-14);
}

TEST(LayerNorm, ConstantSliceGoesToZero) {
    const Tensor<double> x({2, 3}, {4, 4, 4, -1, -1, -1});
    const Tensor<double> g({3}, 1.0), b({3});
    const auto y = layer_norm(x, g, b, 1e-5);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, HandExamples) {
    const Tensor<double> x({2}, {1, 3});
    const auto y = detail::layer_norm_impl(x, Tensor<double>({2}, 1.0), Tensor<double>({2}), 0.0);
    EXPECT_DOUBLE_EQ(y[0], -1.0);
    EXPECT_DOUBLE_EQ(y[1], 1.0);
    const auto z = detail::layer_norm_impl(x, Tensor<double>({2}, 2.0), Tensor<double>({2}, 5.0), 0.0);
    EXPECT_DOUBLE_EQ(z[0], 3.0);
    EXPECT_DOUBLE_EQ(z[1], 7.0);
}

TEST(LayerNorm, RejectsNonPositiveEps) {
    const Tensor<double> x({2}, {1, 3}), g({2}, 1.0), b({2});
    EXPECT_THROW(layer_norm(x, g, b, 0.0), ParameterError);
    EXPECT_THROW(layer_norm(x, g, b, -1.0), ParameterError);
}

TEST(LayerNorm, OutputStatistics) {
    SplitMix64 rng(11);
    const auto x = random_tensor({16, 9}, rng);
    const auto y = layer_norm(x, Tensor<double>({9}, 1.0), Tensor<double>({9}), 1e-12);
    for (std::size_t r = 0; r < 16; ++r) {
        double mean = 0, var = 0;
        for (double v : y.row(r)) mean += v;
        mean /= 9;
        for (double v : y.row(r)) var += (v - mean) * (v - mean);
        var /= 9;
        EXPECT_LE(std::abs(mean), 1e-10);
        EXPECT_NEAR(var, 1.0, 1e-8);
    }
}

TEST(Softmax, Examples) {
    const auto u = softmax(Tensor<double>({3}, {0, 0, 0}));
    for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    const auto big = softmax(Tensor<double>({2}, {1000, 1000}));
    EXPECT_EQ(big[0], 0.5);
    EXPECT_EQ(big[1], 0.5);
    const auto q = softmax(Tensor<double>({2}, {0, std::log(3.0)}));
    EXPECT_NEAR(q[0], 0.25, 1e-15);
    EXPECT_NEAR(q[1], 0.75, 1e-15);
}

TEST(Softmax, RejectsNonFinite) {
    EXPECT_THROW(softmax(Tensor<double>({2}, {0, NAN})), NumericError);
    EXPECT_THROW(softmax(Tensor<float>({2}, {INFINITY, 0})), NumericError);
}

TEST(Softmax, SlicesSumToOneAndShiftInvariant) {
    SplitMix64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = random_tensor({3, 1 + rng.below(8)}, rng);
        for (auto& v : x.data()) v *= 20;
        const auto y = softmax(x);
        for (std::size_t r = 0; r < 3; ++r) {
            double s = 0;
            for (double v : y.row(r)) s += v;
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
        auto shifted = x;
        const double c = rng.uniform(-50, 50);
        for (auto& v : shifted.data()) v += c;
        const auto ys = softmax(shifted);
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(ys[i], y[i], 1e-12);

        Tensor<float> xf = x.cast<float>();
        const auto yf = softmax(xf);
        for (std::size_t r = 0; r < 3; ++r) {
            float s = 0;
            for (float v : yf.row(r)) s += v;
            EXPECT_NEAR(s, 1.0f, 1e-6f);
        }
    }
}

TEST(Gelu, Examples) {
    EXPECT_EQ(gelu(0.0), 0.0);
    EXPECT_NEAR(gelu(10.0), 10.0, 1e-6);
    for (double x : {-3.0, -0.7, 0.1, 0.5, 1.3, 4.0}) EXPECT_NEAR(gelu(x) - gelu(-x), x, 1e-15);
}

TEST(Gelu, DerivativeMatchesCentralDifference) {
    for (double x = -4; x <= 4; x += 0.37) {
        const double h = 1e-6;
        EXPECT_NEAR(gelu_grad(x), (gelu(x + h) - gelu(x - h)) / (2 * h), 1e-8);
    }
}

TEST(BilinearResize, IdentitySizeIsExact) {
    SplitMix64 rng(1);
    const auto x = random_tensor({5, 7, 3}, rng);
    EXPECT_EQ(bilinear_resize(x, 5, 7), x);
}

TEST(BilinearResize, ConstantsStayConstant) {
    const Tensor<double> x({3, 4, 2}, 0.3125);
    for (auto [h, w] : {std::pair{1, 1}, {7, 2}, {9, 13}, {3, 4}}) {
        const auto y = bilinear_resize(x, h, w);
        for (double v : y.data()) EXPECT_EQ(v, 0.3125);
    }
}

TEST(BilinearResize, HalfPixelHandExample) {
    // Output columns sample x = -0.25 (clamped to 0), 0.25, 0.75, 1.25 (upper edge).
    const Tensor<double> x({2, 2, 1}, {0, 1, 0, 1});
    const auto y = bilinear_resize(x, 2, 4);
    const double expect[4] = {0.0, 0.25, 0.75, 1.0};
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(y.at(r, c, 0), expect[c]);
}

TEST(BilinearResize, AdjointIdentity) {
    // <resize(x), g> == <x, resize_adjoint(g)> for random x, g.
    SplitMix64 rng(9);
    for (auto [h, w, oh, ow] : {std::array<std::size_t, 4>{3, 4, 7, 5}, {8, 8, 16, 16}, {6, 5, 2, 3}}) {
        const auto x = random_tensor({h, w, 2}, rng);
        const auto g = random_tensor({oh, ow, 2}, rng);
        const auto y = bilinear_resize(x, oh, ow);
        const auto xa = bilinear_resize_adjoint(g, h, w);
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * g[i];
        for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * xa[i];
        EXPECT_NEAR(lhs, rhs, 1e-12);
    }
}

TEST(Determinism, RepeatedOpsAreBitwiseEqual) {
    SplitMix64 rng(2);
    const auto a = random_tensor({8, 6}, rng), b = random_tensor({6, 4}, rng);
    EXPECT_EQ(matmul(a, b), matmul(a, b));
    EXPECT_EQ(softmax(a), softmax(a));
    EXPECT_EQ(gelu(a), gelu(a));
    const auto f = a.reshaped({2, 4, 6});
    EXPECT_EQ(bilinear_resize(f, 5, 3), bilinear_resize(f, 5, 3));
}
