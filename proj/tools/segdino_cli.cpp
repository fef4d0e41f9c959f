// segdino: generate data, train, evaluate, predict, check gradients, bench.
//
// Exit codes: 0 success, 1 validation/usage error, 2 runtime or numeric error.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "segdino/pipeline.hpp"

namespace fs = std::filesystem;
using namespace segdino;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool paper_defaults = false;
};

RunConfig effective_config(const Globals& g) {
    RunConfig cfg = g.paper_defaults ? paper_defaults() : RunConfig{};
    if (!g.config_path.empty()) cfg = load_config(g.config_path, cfg);
    if (g.seed) {
        cfg.train.seed = *g.seed;
        cfg.data.synth.seed = *g.seed;
    }
    if (!g.out.empty()) cfg.output_dir = g.out;
    cfg.validate();
    std::cout << "# effective config\n" << to_text(cfg) << std::flush;
    return cfg;
}

std::string fmt17(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) { detail::write_file(path, text); }

void write_reports(const fs::path& dir, const std::vector<MetricReport>& reports, const RunConfig& cfg) {
    auto rows = reports;
    const MetricReport agg = aggregate(reports);
    rows.push_back(agg);
    std::ostringstream csv, summary;
    write_metrics_csv(csv, rows);
    write_summary(summary, agg, cfg.metrics.options);
    write_text(dir / "metrics.csv", csv.str());
    write_text(dir / "summary.txt", summary.str());
    std::cout << summary.str();
}

int cmd_gen_data(const Globals& g) {
    const RunConfig cfg = effective_config(g);
    const auto samples = synth_generate(cfg.data.synth);
    const auto s = write_dataset(samples, cfg.output_dir);
    std::cout << "samples " << s.samples << "\n"
              << "pixels " << s.pixels << "\n"
              << "foreground_fraction " << std::fixed << std::setprecision(4)
              << double(s.foreground) / double(s.pixels) << "\n"
              << "manifest " << (fs::path(cfg.output_dir) / "manifest.tsv").string() << "\n";
    return 0;
}

int cmd_train(const Globals& g) {
    const RunConfig cfg = effective_config(g);
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    write_text(dir / "config.txt", to_text(cfg));

    std::ofstream loss(dir / "loss.csv", std::ios::binary);
    if (!loss) throw IoError("cannot write " + (dir / "loss.csv").string());
    loss << "step,epoch,loss\n";
    const auto t0 = std::chrono::steady_clock::now();
    const TrainingRun run = run_training(cfg, [&](const LossRecord& r) {
        loss << r.step << ',' << r.epoch << ',' << fmt17(r.loss) << '\n';
        if (r.step % 50 == 0) std::cerr << "step " << r.step << " epoch " << r.epoch << " loss " << r.loss << "\n";
    });
    loss.close();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    save_checkpoint(model_arrays(run.model), dir / "checkpoint.sgdw");
    std::cout << "train_samples " << run.split.train.size() << "\n"
              << "test_samples " << run.split.test.size() << "\n"
              << "steps " << run.curve.size() << "\n"
              << "final_loss " << fmt17(run.curve.back().loss) << "\n"
              << "encoder_checksum " << run.encoder_checksum_before << " -> " << run.encoder_checksum_after << "\n"
              << "train_seconds " << secs << "\n";
    write_reports(dir, evaluate(run.split.test, run.model, cfg), cfg);
    return 0;
}

std::vector<Sample> pick_split(std::vector<Sample> samples, const std::string& which, std::uint64_t seed) {
    if (which == "all") return samples;
    Split s = split_samples(std::move(samples), seed);
    return which == "train" ? s.train : s.test;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& manifest, const std::string& split,
             bool gt_as_pred) {
    RunConfig cfg = effective_config(g);
    if (!manifest.empty()) cfg.data.manifest = manifest;
    const fs::path dir = cfg.output_dir;
    const fs::path ckpt = checkpoint.empty() ? dir / "checkpoint.sgdw" : fs::path(checkpoint);
    const Model model = load_model(load_checkpoint(ckpt), cfg);
    const auto samples = pick_split(load_samples(cfg), split, cfg.data.synth.seed);
    fs::create_directories(dir);
    write_reports(dir, evaluate(samples, model, cfg, gt_as_pred), cfg);
    return 0;
}

int cmd_predict(const Globals& g, const std::string& checkpoint, const std::string& image, std::string output) {
    const RunConfig cfg = effective_config(g);
    const fs::path dir = cfg.output_dir;
    const Model model = load_model(load_checkpoint(checkpoint.empty() ? dir / "checkpoint.sgdw" : fs::path(checkpoint)), cfg);
    const Tensor<float> raw = load_image(image);
    const Prediction p = predict(prepare_image(raw, cfg), model, cfg);
    const Mask mask = resize_mask(p.mask, raw.dim(0), raw.dim(1));
    if (output.empty()) output = (dir / "prediction.pgm").string();
    save_mask(mask, output);
    std::cout << "foreground_pixels " << mask.count(1) << " of " << mask.size() << "\n"
              << "mask " << output << "\n";
    return 0;
}

int cmd_gradcheck(const Globals& g, std::size_t per_group, std::size_t n_samples, double perturb) {
    RunConfig cfg = effective_config(g);
    if (cfg.data.manifest.empty()) cfg.data.synth.n_samples = std::min(cfg.data.synth.n_samples, n_samples);
    auto samples = load_samples(cfg);
    samples.resize(std::min(samples.size(), n_samples));

    const auto t0 = std::chrono::steady_clock::now();
    const auto enc = init_frozen<double>(cfg.encoder);
    const Grid eg{cfg.encoder.grid_h(), cfg.encoder.grid_w()};
    const Grid cg = cfg.decoder.common_grid(cfg.encoder);
    std::vector<FeatureSample<double>> feats;
    for (const auto& s : samples)
        feats.push_back(extract_features(prepare_image(s.image, cfg).cast<double>(), prepare_mask(s.mask, cfg), enc,
                                         cfg.encoder, cg));
    const auto params = init_decoder<double>(cfg.decoder, cfg.encoder.embed_dim, cfg.train.seed);
    const auto report =
        check_gradients(feats, params, eg, cg, cfg.train.loss_resolution, per_group, cfg.train.seed, perturb);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    constexpr double tol = 1e-4;
    bool ok = true;
    std::cout << "mode " << to_string(cfg.train.loss_resolution) << ", " << feats.size() << " samples, tolerance "
              << tol << "\n";
    std::cout << std::left << std::setw(30) << "group" << std::setw(9) << "checked" << "max_rel_error\n";
    for (const auto& gc : report) {
        const bool pass = gc.max_rel_error <= tol;
        ok &= pass;
        std::cout << std::setw(30) << gc.name << std::setw(9) << gc.checked << std::scientific << std::setprecision(3)
                  << gc.max_rel_error << std::defaultfloat << (pass ? "  ok" : "  FAIL") << "\n";
    }
    std::cout << "groups " << report.size() << "\n"
              << "seconds " << secs << "\n"
              << (ok ? "gradcheck PASS" : "gradcheck FAIL") << "\n";
    return ok ? 0 : 2;
}

int cmd_bench(const Globals& g, std::size_t iters, std::size_t warmup, bool include_io) {
    const RunConfig cfg = effective_config(g);
    if (iters < 100) throw ValidationError("bench: --iters must be >= 100");
    const Model model = init_model(cfg);
    SynthConfig sc = cfg.data.synth;
    sc.size = std::max(cfg.encoder.image_h, cfg.encoder.image_w);
    const Sample s = synth_sample(sc, 0);
    const Tensor<float> prepared = prepare_image(s.image, cfg);
    fs::path input;
    if (include_io) {
        input = fs::path(cfg.output_dir) / "bench_input.ppm";
        save_image(s.image, input);
    }

    auto once = [&] {
        if (include_io) return forward(prepare_image(load_image(input), cfg), model.encoder, cfg.encoder,
                                       model.decoder, cfg.decoder);
        return forward(prepared, model.encoder, cfg.encoder, model.decoder, cfg.decoder);
    };
    std::size_t sink = 0;
    for (std::size_t i = 0; i < warmup; ++i) sink += once().mask.count(1);
    std::vector<double> ms;
    ms.reserve(iters);
    for (std::size_t i = 0; i < iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        sink += once().mask.count(1);
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / double(ms.size());
    std::sort(ms.begin(), ms.end());
    const std::size_t n = ms.size();
    const double median = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);

    std::cout << "bench.iterations = " << iters << "\n"
              << "bench.include_io = " << (include_io ? "true" : "false") << "\n"
              << "bench.mean_ms = " << fmt17(mean) << "\n"
              << "bench.median_ms = " << fmt17(median) << "\n"
              << "bench.p95_ms = " << fmt17(percentile_sorted(ms, 0.95)) << "\n"
              << "bench.fps = " << fmt17(1000.0 / mean) << "\n"
              << "bench.trainable_params = " << model.decoder.element_count() << "\n"
              << "bench.frozen_params = " << model.encoder.element_count() << "\n"
              << "bench.foreground_checksum = " << sink << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"segdino: frozen ViT encoder + lightweight decoder segmentation"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "config file of `section.key = value` lines");
    app.add_option("--seed", g.seed, "overrides train.seed and data.seed");
    app.add_option("--out", g.out, "output directory (output.dir)");
    app.add_flag("--paper-defaults", g.paper_defaults, "start from the reference 256x256 ViT-S/16 setup");

    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset and manifest");
    auto* train = app.add_subcommand("train", "train the decoder; writes loss.csv, checkpoint.sgdw, metrics.csv");

    std::string checkpoint, manifest, split = "test";
    bool gt_as_pred = false;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "defaults to <out>/checkpoint.sgdw");
    eval->add_option("--manifest", manifest, "overrides data.manifest");
    eval->add_option("--split", split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));
    eval->add_flag("--ground-truth-as-prediction", gt_as_pred, "score ground truth against itself");

    std::string image, output;
    auto* pred = app.add_subcommand("predict", "segment one PPM image into a PGM mask");
    pred->add_option("--checkpoint", checkpoint, "defaults to <out>/checkpoint.sgdw");
    pred->add_option("--image", image, "input PPM")->required();
    pred->add_option("--output", output, "defaults to <out>/prediction.pgm");

    std::size_t per_group = 16, n_samples = 2;
    double perturb = 0;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every decoder gradient in f64");
    grad->add_option("--per-group", per_group, "elements checked per parameter group");
    grad->add_option("--samples", n_samples, "samples in the checked batch");
    grad->add_option("--perturb-analytic", perturb)->group("");  // negative-control hook

    std::size_t iters = 100, warmup = 10;
    bool include_io = false;
    auto* bench = app.add_subcommand("bench", "forward latency and parameter counts");
    bench->add_option("--iters", iters, "timed iterations (>= 100)");
    bench->add_option("--warmup", warmup, "untimed iterations");
    bench->add_flag("--include-io", include_io, "time PPM decode and preprocessing too");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*gen) return cmd_gen_data(g);
        if (*train) return cmd_train(g);
        if (*eval) return cmd_eval(g, checkpoint, manifest, split, gt_as_pred);
        if (*pred) return cmd_predict(g, checkpoint, image, output);
        if (*grad) return cmd_gradcheck(g, per_group, n_samples, perturb);
        if (*bench) return cmd_bench(g, iters, warmup, include_io);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
