#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "segdino/config.hpp"
#include "segdino/data.hpp"

namespace fs = std::filesystem;
using namespace segdino;

namespace {

const fs::path kWork = fs::temp_directory_path() / "segdino_cli_test";

struct Result {
    int code;
    std::string out;
};

Result run(const std::string& args) {
    const fs::path log = kWork / "stdout.txt";
    const std::string cmd = "cd '" + kWork.string() + "' && '" SEGDINO_CLI_PATH "' " + args + " > '" + log.string() +
                            "' 2> '" + (kWork / "stderr.txt").string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, detail::read_file(log)};
}

std::string slurp(const fs::path& p) { return detail::read_file(kWork / p); }

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
        detail::write_file(kWork / "small.cfg", "data.n_samples = 16\ntrain.epochs = 2\n");
    }
};

}  // namespace

TEST_F(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("eval --split sideways").code, 1);
}

TEST_F(Cli, ValidationErrorExitsOneAndNamesRule) {
    detail::write_file(kWork / "bad.cfg", "encoder.image_h = 60\nencoder.patch_size = 16\n");
    EXPECT_EQ(run("train --config bad.cfg --out bad").code, 1);
    const std::string err = slurp("stderr.txt");
    EXPECT_NE(err.find("60"), std::string::npos);
    EXPECT_NE(err.find("divisible"), std::string::npos);
    EXPECT_FALSE(fs::exists(kWork / "bad" / "loss.csv"));
    detail::write_file(kWork / "unknown.cfg", "train.speed = 3\n");
    EXPECT_EQ(run("gradcheck --config unknown.cfg").code, 1);
}

TEST_F(Cli, RuntimeErrorExitsTwo) {
    EXPECT_EQ(run("eval --config small.cfg --checkpoint missing.sgdw --out e").code, 2);
    detail::write_file(kWork / "garbage.sgdw", "nope");
    EXPECT_EQ(run("eval --config small.cfg --checkpoint garbage.sgdw --out e").code, 2);
}

TEST_F(Cli, EchoedConfigReparses) {
    const auto g = run("gen-data --paper-defaults --seed 9 --config small.cfg --out echo");
    ASSERT_EQ(g.code, 0);
    const std::string text = g.out.substr(0, g.out.find("\nsamples ") + 1);
    const RunConfig c = parse_config(text);
    EXPECT_EQ(to_text(c), text.substr(text.find('\n') + 1));
    EXPECT_EQ(c.encoder.image_h, 256u);
    EXPECT_EQ(c.train.seed, 9u);
    EXPECT_EQ(c.data.synth.seed, 9u);
    EXPECT_EQ(c.data.synth.n_samples, 16u);
    EXPECT_EQ(c.output_dir, "echo");
}

TEST_F(Cli, GenDataIsByteStableAcrossDirectories) {
    ASSERT_EQ(run("gen-data --config small.cfg --out d1").code, 0);
    ASSERT_EQ(run("gen-data --config small.cfg --out sub/d2").code, 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(kWork / "d1")) {
        if (!e.is_regular_file()) continue;
        ++files;
        const auto rel = fs::relative(e.path(), kWork / "d1");
        EXPECT_EQ(slurp("d1" / rel), slurp("sub/d2" / rel)) << rel;
    }
    EXPECT_EQ(files, 33u);
}

TEST_F(Cli, TrainWritesArtifactsDeterministically) {
    ASSERT_EQ(run("train --config small.cfg --out t1").code, 0);
    ASSERT_EQ(run("train --config small.cfg --out t2").code, 0);
    for (const char* f : {"loss.csv", "metrics.csv", "summary.txt", "checkpoint.sgdw"}) {
        ASSERT_TRUE(fs::exists(kWork / "t1" / f)) << f;
        EXPECT_EQ(slurp(fs::path("t1") / f), slurp(fs::path("t2") / f)) << f;
    }
    const std::string loss = slurp("t1/loss.csv");
    EXPECT_EQ(loss.rfind("step,epoch,loss\n0,0,", 0), 0u);
    ASSERT_EQ(run("train --config small.cfg --seed 3 --out t3").code, 0);
    EXPECT_NE(slurp("t3/loss.csv"), loss);

    // Re-evaluating the checkpoint reproduces the train-time report.
    ASSERT_EQ(run("eval --config small.cfg --checkpoint t1/checkpoint.sgdw --out e1").code, 0);
    EXPECT_EQ(slurp("e1/metrics.csv"), slurp("t1/metrics.csv"));
}

TEST_F(Cli, EvalGroundTruthAsPredictionIsPerfect) {
    ASSERT_EQ(run("train --config small.cfg --out t4").code, 0);
    ASSERT_EQ(run("gen-data --config small.cfg --out d4").code, 0);
    ASSERT_EQ(run("eval --config small.cfg --checkpoint t4/checkpoint.sgdw --manifest d4/manifest.tsv --split all "
                  "--ground-truth-as-prediction --out e4")
                  .code,
              0);
    std::istringstream csv(slurp("e4/metrics.csv"));
    std::string line, last;
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        last = line;
        ++rows;
    }
    EXPECT_EQ(rows, 1u + 16u + 1u);
    EXPECT_EQ(last, "mean,1,1,0,1,1,0,0,0,0");
    EXPECT_NE(slurp("e4/summary.txt").find("excluded 0"), std::string::npos);
}

TEST_F(Cli, PredictWritesMaskAtInputSize) {
    ASSERT_EQ(run("train --config small.cfg --out t5").code, 0);
    SynthConfig sc;
    sc.size = 48;
    save_image(synth_sample(sc, 0).image, kWork / "in.ppm");
    ASSERT_EQ(run("predict --config small.cfg --checkpoint t5/checkpoint.sgdw --image in.ppm --output out.pgm").code,
              0);
    const Mask m = load_mask(kWork / "out.pgm");
    EXPECT_EQ(m.height, 48u);
    EXPECT_EQ(m.width, 48u);
    EXPECT_TRUE(m.is_binary());
}

TEST_F(Cli, GradcheckReportAndNegativeControl) {
    const auto ok = run("gradcheck --per-group 4");
    EXPECT_EQ(ok.code, 0);
    EXPECT_NE(ok.out.find("groups 12"), std::string::npos);
    EXPECT_NE(ok.out.find("gradcheck PASS"), std::string::npos);
    const auto bad = run("gradcheck --per-group 4 --perturb-analytic 1e-3");
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST_F(Cli, BenchCountsAreStable) {
    const auto a = run("bench --iters 100 --warmup 2");
    const auto b = run("bench --iters 100 --warmup 0 --include-io --out bio");
    ASSERT_EQ(a.code, 0);
    ASSERT_EQ(b.code, 0);
    auto field = [](const std::string& out, const std::string& key) {
        const auto p = out.find(key + " = ");
        return out.substr(p + key.size() + 3, out.find('\n', p) - p - key.size() - 3);
    };
    EXPECT_EQ(field(a.out, "bench.trainable_params"), "82946");
    EXPECT_EQ(field(a.out, "bench.trainable_params"), field(b.out, "bench.trainable_params"));
    EXPECT_EQ(field(a.out, "bench.frozen_params"), field(b.out, "bench.frozen_params"));
    EXPECT_EQ(field(b.out, "bench.include_io"), "true");
    EXPECT_EQ(run("bench --iters 50").code, 1);
}
