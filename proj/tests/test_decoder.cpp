#include <gtest/gtest.h>

#include "segdino/decoder.hpp"

using namespace segdino;

namespace {

Tensor<double> randn(Shape s, SplitMix64& rng, double scale = 1.0) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = scale * rng.normal();
    return t;
}

}  // namespace

TEST(Reassemble, SameGridIsPureProjection) {
    SplitMix64 rng(1);
    const auto z = randn({12, 5}, rng), w = randn({5, 3}, rng), b = randn({3}, rng);
    const auto y = reassemble(z, w, b, {3, 4}, {3, 4});
    EXPECT_EQ(y, linear(z, w, b));
}

TEST(Reassemble, OutputShapeForAnyGrid) {
    SplitMix64 rng(2);
    const auto z = randn({12, 5}, rng), w = randn({5, 3}, rng), b = randn({3}, rng);
    for (Grid g : {Grid{1, 1}, Grid{3, 4}, Grid{6, 8}, Grid{5, 2}})
        EXPECT_EQ(reassemble(z, w, b, {3, 4}, g).shape(), (Shape{g.cells(), 3}));
}

TEST(Reassemble, ConstantTokensStayConstant) {
    SplitMix64 rng(3);
    const auto row = randn({1, 5}, rng);
    Tensor<double> z({16, 5});
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 5; ++j) z.at(i, j) = row.at(0, j);
    const auto w = randn({5, 4}, rng), b = randn({4}, rng);
    const auto y = reassemble(z, w, b, {4, 4}, {7, 3});
    for (std::size_t i = 1; i < y.dim(0); ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y.at(i, j), y.at(0, j));
}

TEST(Reassemble, RejectsGridMismatch) {
    SplitMix64 rng(4);
    const auto z = randn({10, 5}, rng), w = randn({5, 3}, rng), b = randn({3}, rng);
    EXPECT_THROW(reassemble(z, w, b, {3, 4}, {3, 4}), ShapeError);
}

TEST(Fuse, SingleInputIsIdentity) {
    SplitMix64 rng(5);
    const auto a = randn({6, 3}, rng);
    EXPECT_EQ(fuse<double>({a}), a);
}

TEST(Fuse, WidthAndColumnBlocks) {
    SplitMix64 rng(6);
    std::vector<Tensor<double>> parts{randn({6, 3}, rng), randn({6, 3}, rng), randn({6, 3}, rng)};
    const auto h = fuse(parts);
    ASSERT_EQ(h.shape(), (Shape{6, 9}));
    auto swapped = parts;
    std::swap(swapped[0], swapped[2]);
    const auto hs = fuse(swapped);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            EXPECT_EQ(hs.at(i, c), h.at(i, 6 + c));
            EXPECT_EQ(hs.at(i, 3 + c), h.at(i, 3 + c));
            EXPECT_EQ(hs.at(i, 6 + c), h.at(i, c));
        }
}

TEST(Fuse, RejectsRaggedInputs) {
    EXPECT_THROW(fuse<double>({Tensor<double>({4, 3}), Tensor<double>({4, 2})}), ShapeError);
    EXPECT_THROW(fuse<double>({}), ShapeError);
}

TEST(MlpHead, ShapeAndZeroParams) {
    DecoderConfig cfg;
    cfg.channels = 3;
    cfg.tap_count = 2;
    cfg.n_class = 3;
    auto p = init_decoder<double>(cfg, 4, 1).zeros_like();
    SplitMix64 rng(7);
    const auto h = randn({5, 6}, rng);
    const auto logits = mlp_head(h, p);
    ASSERT_EQ(logits.shape(), (Shape{5, 3}));
    for (double v : logits.data()) EXPECT_EQ(v, 0.0);
    const auto probs = softmax(logits);
    for (double v : probs.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(MlpHead, RowwiseFunction) {
    DecoderConfig cfg;
    cfg.channels = 4;
    cfg.tap_count = 2;
    const auto p = init_decoder<double>(cfg, 4, 2);
    SplitMix64 rng(8);
    auto h = randn({3, 8}, rng);
    for (std::size_t j = 0; j < 8; ++j) h.at(2, j) = h.at(0, j);
    const auto y = mlp_head(h, p);
    EXPECT_EQ(y.at(2, 0), y.at(0, 0));
    EXPECT_EQ(y.at(2, 1), y.at(0, 1));
    EXPECT_THROW(mlp_head(randn({3, 7}, rng), p), ShapeError);
}

TEST(LogitsToMask, UniformPreferenceAndTies) {
    Tensor<double> favor({4, 2});
    for (std::size_t i = 0; i < 4; ++i) favor.at(i, 1) = 1.0;
    const Mask ones = logits_to_mask(favor, {2, 2}, 16, 16);
    EXPECT_EQ(ones.count(1), 256u);
    const Mask ties = logits_to_mask(Tensor<double>({4, 2}, 0.25), {2, 2}, 16, 16);
    EXPECT_EQ(ties.count(0), 256u);
}

TEST(LogitsToMask, SingleTokenFootprint) {
    // Token (0,0) of a 2×2 grid has class-1 margin +2, the others −2. The
    // upsampled margin at source position (sy, sx) ∈ [0,1]² is
    // −2 + 4·(1−sy)(1−sx), with s = max(0, (i + 0.5)/8 − 0.5) for a
    // 16-pixel output, so a pixel is foreground iff (1−sy)(1−sx) > 1/2.
    Tensor<double> logits({4, 2});
    for (std::size_t i = 0; i < 4; ++i) {
        logits.at(i, 0) = 1.0;
        logits.at(i, 1) = -1.0;
    }
    logits.at(0, 0) = -1.0;
    logits.at(0, 1) = 1.0;
    const Mask m = logits_to_mask(logits, {2, 2}, 16, 16);
    auto src = [](std::size_t i) { return std::min(1.0, std::max(0.0, (double(i) + 0.5) / 8.0 - 0.5)); };
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
            const bool fg = (1 - src(y)) * (1 - src(x)) > 0.5;
            EXPECT_EQ(m.at(y, x), fg ? 1 : 0) << y << "," << x;
        }
    // The patch-block center pixels are foreground.
    EXPECT_EQ(m.at(3, 3), 1);
    EXPECT_EQ(m.at(4, 4), 1);
    EXPECT_EQ(m.at(12, 12), 0);
}

TEST(LogitsToMask, ArgmaxInvariantToPerPixelShift) {
    SplitMix64 rng(9);
    auto field = randn({6, 5, 3}, rng);
    const Mask base = argmax_mask(field);
    for (std::size_t p = 0; p < 30; ++p) {
        const double c = rng.uniform(-10, 10);
        for (std::size_t k = 0; k < 3; ++k) field[p * 3 + k] += c;
    }
    EXPECT_EQ(argmax_mask(field), base);
}

TEST(DecoderParams, CountFormulaMatchesElementCount) {
    SplitMix64 rng(10);
    for (int t = 0; t < 25; ++t) {
        DecoderConfig c;
        c.channels = 1 + rng.below(9);
        c.tap_count = 1 + rng.below(5);
        c.hidden_dim = rng.below(2) ? 0 : 1 + rng.below(12);
        c.n_class = 2 + rng.below(4);
        const std::size_t d = 1 + rng.below(10);
        EXPECT_EQ(init_decoder<float>(c, d, 3).element_count(), decoder_param_count(c, d));
    }
}

TEST(DecoderParams, TwoKPlusFourGroups) {
    DecoderConfig c;
    c.tap_count = 3;
    EXPECT_EQ(init_decoder<float>(c, 8, 0).tensors().size(), 2 * 3 + 4u);
}

TEST(Decode, ZeroedTapProjectionZeroesItsColumns) {
    DecoderConfig c;
    c.channels = 3;
    c.tap_count = 3;
    auto p = init_decoder<double>(c, 4, 5);
    SplitMix64 rng(11);
    for (auto& b : p.proj_b)
        for (auto& v : b.data()) v = rng.normal();
    std::vector<Tensor<double>> taps{randn({6, 4}, rng), randn({6, 4}, rng), randn({6, 4}, rng)};
    DecoderTrace<double> full;
    decode(taps, p, {2, 3}, {2, 3}, &full);
    std::fill(p.proj_w[1].data().begin(), p.proj_w[1].data().end(), 0.0);
    std::fill(p.proj_b[1].data().begin(), p.proj_b[1].data().end(), 0.0);
    DecoderTrace<double> cut;
    decode(taps, p, {2, 3}, {2, 3}, &cut);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 9; ++j) {
            if (j >= 3 && j < 6) EXPECT_EQ(cut.fused.at(i, j), 0.0);
            else EXPECT_EQ(cut.fused.at(i, j), full.fused.at(i, j));
        }
}

TEST(Decode, ReassembleThenFuseIsBlockDiagonalMap) {
    const std::size_t K = 3, d = 5, C = 4, N = 12;
    SplitMix64 rng(12);
    std::vector<Tensor<double>> taps, ws, bs;
    for (std::size_t k = 0; k < K; ++k) {
        taps.push_back(randn({N, d}, rng));
        ws.push_back(randn({d, C}, rng));
        bs.push_back(randn({C}, rng));
    }
    std::vector<Tensor<double>> parts;
    for (std::size_t k = 0; k < K; ++k) parts.push_back(reassemble(taps[k], ws[k], bs[k], {3, 4}, {3, 4}));
    const auto h = fuse(parts);

    Tensor<double> x({N, K * d}), m({K * d, K * C}), bias({K * C});
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < d; ++j) x.at(i, k * d + j) = taps[k].at(i, j);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < C; ++j) m.at(k * d + i, k * C + j) = ws[k].at(i, j);
        for (std::size_t j = 0; j < C; ++j) bias[k * C + j] = bs[k][j];
    }
    const auto ref = linear(x, m, bias);
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(h[i], ref[i], 1e-10);
}

TEST(Forward, ToyShapeTrace) {
    EncoderConfig ec;  // 64×64, p=8, d=64, L=4, taps 1..4
    DecoderConfig dc;  // C=64, K=4, n_class=2
    const auto enc = init_frozen<float>(ec);
    const auto dec = init_decoder<float>(dc, ec.embed_dim, 1);
    Tensor<float> img({64, 64, 3});
    SplitMix64 rng(13);
    for (auto& v : img.data()) v = static_cast<float>(rng.normal());
    const auto out = forward(img, enc, ec, dec, dc);
    ASSERT_EQ(out.taps.size(), 4u);
    for (const auto& t : out.taps) EXPECT_EQ(t.shape(), (Shape{64, 64}));
    DecoderTrace<float> trace;
    decode(out.taps, dec, {8, 8}, {8, 8}, &trace);
    for (const auto& r : trace.reassembled) EXPECT_EQ(r.shape(), (Shape{64, 64}));
    EXPECT_EQ(trace.fused.shape(), (Shape{64, 256}));
    EXPECT_EQ(out.logits.shape(), (Shape{64, 2}));
    EXPECT_EQ(out.mask.height, 64u);
    EXPECT_EQ(out.mask.width, 64u);

    const auto again = forward(img, enc, ec, dec, dc);
    EXPECT_EQ(again.logits, out.logits);
    EXPECT_EQ(again.mask, out.mask);

    auto dec2 = dec;
    dec2.w2[0] += 0.5f;
    const auto changed = forward(img, enc, ec, dec2, dc);
    EXPECT_EQ(changed.taps, out.taps);
    EXPECT_NE(changed.logits, out.logits);
}
