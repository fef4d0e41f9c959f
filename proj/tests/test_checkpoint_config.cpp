#include <gtest/gtest.h>

#include <filesystem>

#include "segdino/checkpoint.hpp"
#include "segdino/config.hpp"
#include "segdino/pipeline.hpp"

using namespace segdino;
namespace fs = std::filesystem;

namespace {

RunConfig tiny() {
    RunConfig c;
    c.encoder.image_h = c.encoder.image_w = 32;
    c.encoder.embed_dim = 16;
    c.encoder.depth = 2;
    c.encoder.heads = 2;
    c.encoder.tap_layers = {1, 2};
    c.decoder.tap_count = 2;
    c.decoder.channels = 8;
    c.data.synth.size = 32;
    return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    const RunConfig cfg = tiny();
    const Model m = init_model(cfg);
    const auto bytes = encode_checkpoint(model_arrays(m));
    const auto ckpt = to_checkpoint(decode_checkpoint(bytes));
    const Model back = load_model(ckpt, cfg);
    EXPECT_EQ(back.encoder.checksum(), m.encoder.checksum());
    EXPECT_EQ(back.decoder.checksum(), m.decoder.checksum());
    EXPECT_EQ(encode_checkpoint(model_arrays(back)), bytes);
    EXPECT_EQ(ckpt.order.front(), "encoder.patch_embed.weight");
    EXPECT_EQ(ckpt.order.back(), "decoder.head.fc2.bias");
}

TEST(Checkpoint, LayoutOfOneEntry) {
    const auto bytes = encode_checkpoint({{"w", Tensor<float>({2}, {1.0f, -2.0f})}});
    // magic, version, count, name_len, name, rank, dim, data
    ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 1 + 4 + 8 + 8);
    EXPECT_EQ(bytes.substr(0, 4), "SGDW");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[8], 1);
    EXPECT_EQ(bytes[16], 'w');
}

TEST(Checkpoint, FormatErrorsCarryOffsets) {
    const auto good = encode_checkpoint({{"w", Tensor<float>({3}, 0.5f)}});
    auto expect_offset = [](const std::string& bytes, const std::string& needle) {
        try {
            decode_checkpoint(bytes, "c.sgdw");
            FAIL() << needle;
        } catch (const FormatError& e) {
            const std::string msg = e.what();
            EXPECT_NE(msg.find(needle), std::string::npos) << msg;
            EXPECT_NE(msg.find("byte offset"), std::string::npos) << msg;
        }
    };
    expect_offset("XXXX" + good.substr(4), "magic");
    expect_offset(good.substr(0, good.size() - 2), "truncated array data");
    expect_offset(good + "z", "trailing");
    std::string v2 = good;
    v2[4] = 2;
    expect_offset(v2, "version");
    expect_offset(good.substr(0, 10), "truncated entry count");
}

TEST(Checkpoint, ShapeMismatchAndMissingEntries) {
    RunConfig cfg = tiny();
    const auto ckpt = to_checkpoint(model_arrays(init_model(cfg)));
    RunConfig wider = cfg;
    wider.decoder.channels = 16;
    EXPECT_THROW(load_decoder<float>(ckpt, wider.decoder, 16), ShapeError);
    Checkpoint partial = ckpt;
    partial.arrays.erase("decoder.head.fc1.bias");
    EXPECT_THROW(load_decoder<float>(partial, cfg.decoder, 16), FormatError);
}

TEST(Checkpoint, FileRoundTrip) {
    const auto dir = fs::temp_directory_path() / "segdino_ckpt_test";
    fs::remove_all(dir);
    const RunConfig cfg = tiny();
    const Model m = init_model(cfg);
    save_checkpoint(model_arrays(m), dir / "checkpoint.sgdw");
    EXPECT_EQ(load_model(load_checkpoint(dir / "checkpoint.sgdw"), cfg).decoder.checksum(), m.decoder.checksum());
    EXPECT_THROW(load_checkpoint(dir / "missing.sgdw"), IoError);
    fs::remove_all(dir);
}

TEST(Config, TextRoundTrip) {
    RunConfig c = paper_defaults();
    c.train.learning_rate = 3.3e-5;
    c.train.loss_resolution = LossResolution::pixel;
    c.data.synth.shapes = {ShapeKind::annulus, ShapeKind::disk};
    c.data.norm.std = {0.1, 0.2, 0.30000000000000004};
    c.output_dir = "some/dir";
    const RunConfig back = parse_config(to_text(c));
    EXPECT_EQ(back, c);
    EXPECT_EQ(back.train.learning_rate, 3.3e-5);
    EXPECT_EQ(back.data.norm.std[2], 0.30000000000000004);
    EXPECT_EQ(back.encoder.tap_layers, (std::vector<std::size_t>{3, 6, 9, 12}));
}

TEST(Config, ParsingRulesAndErrors) {
    const RunConfig c = parse_config("# comment\n\n  train.epochs = 7  # trailing\nencoder.tap_layers = 2, 4\n");
    EXPECT_EQ(c.train.epochs, 7u);
    EXPECT_EQ(c.encoder.tap_layers, (std::vector<std::size_t>{2, 4}));
    EXPECT_THROW(parse_config("train.nope = 1"), ValidationError);
    EXPECT_THROW(parse_config("train.epochs"), ValidationError);
    EXPECT_THROW(parse_config("train.epochs = -1"), ValidationError);
    EXPECT_THROW(parse_config("train.learning_rate = fast"), ValidationError);
    EXPECT_THROW(parse_config("data.shapes = disk, hexagon"), ValidationError);
}

TEST(Config, DefaultsAndPaperDefaultsValidate) {
    EXPECT_NO_THROW(RunConfig{}.validate());
    EXPECT_NO_THROW(paper_defaults().validate());
    EXPECT_EQ(encoder_param_count(paper_defaults().encoder), 21'691'008u);
}

TEST(Config, IndivisibleImageNamesBothValues) {
    RunConfig c = paper_defaults();
    c.encoder.image_h = 60;
    try {
        c.validate();
        FAIL();
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("60"), std::string::npos) << msg;
        EXPECT_NE(msg.find("16"), std::string::npos) << msg;
    }
}

TEST(Config, CrossSectionChecks) {
    RunConfig c;
    c.decoder.tap_count = 3;
    EXPECT_THROW(c.validate(), ValidationError);
    c = RunConfig{};
    c.encoder.tap_layers = {2, 9};
    c.decoder.tap_count = 2;
    EXPECT_THROW(c.validate(), ValidationError);
    c = RunConfig{};
    c.decoder.common_h = c.decoder.common_w = 6;
    EXPECT_THROW(c.validate(), ValidationError);
    c.train.loss_resolution = LossResolution::pixel;
    EXPECT_NO_THROW(c.validate());
    c = RunConfig{};
    c.encoder.embed_dim = 66;
    EXPECT_THROW(c.validate(), ValidationError);
}
