#pragma once

// End-to-end glue shared by the CLI and the acceptance suite: dataset
// preparation, training runs and evaluation.

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "segdino/checkpoint.hpp"
#include "segdino/config.hpp"
#include "segdino/data.hpp"
#include "segdino/decoder.hpp"
#include "segdino/encoder.hpp"
#include "segdino/metrics.hpp"
#include "segdino/trainer.hpp"

namespace segdino {

/// Resize to the encoder input size, then normalize.
inline Tensor<float> prepare_image(const Tensor<float>& raw, const RunConfig& cfg) {
    const auto& e = cfg.encoder;
    const Tensor<float> sized =
        raw.dim(0) == e.image_h && raw.dim(1) == e.image_w ? raw : resize_image(raw, e.image_h, e.image_w);
    return normalize(sized, cfg.data.norm);
}

inline Mask prepare_mask(const Mask& raw, const RunConfig& cfg) {
    const auto& e = cfg.encoder;
    return raw.height == e.image_h && raw.width == e.image_w ? raw : resize_mask(raw, e.image_h, e.image_w);
}

/// The manifest when one is configured, otherwise a synthetic set.
inline std::vector<Sample> load_samples(const RunConfig& cfg) {
    return cfg.data.manifest.empty() ? synth_generate(cfg.data.synth) : load_dataset(cfg.data.manifest);
}

struct Split {
    std::vector<Sample> train, test;
};

/// Hash split keyed by data.seed; an empty side falls back to the full set
/// so tiny datasets can still train and evaluate.
inline Split split_samples(std::vector<Sample> samples, std::uint64_t seed) {
    Split s;
    for (auto& smp : samples) (is_test_sample(smp.id, seed) ? s.test : s.train).push_back(std::move(smp));
    if (s.train.empty()) s.train = s.test;
    if (s.test.empty()) s.test = s.train;
    return s;
}

/// Frozen encoder plus trainable decoder in runtime precision.
struct Model {
    EncoderParams<float> encoder;
    DecoderParams<float> decoder;
};

inline Model init_model(const RunConfig& cfg) {
    return {init_frozen<float>(cfg.encoder),
            init_decoder<float>(cfg.decoder, cfg.encoder.embed_dim, cfg.train.seed)};
}

inline std::vector<NamedArray> model_arrays(const Model& m) {
    std::vector<NamedArray> out;
    append_arrays(out, m.encoder);
    append_arrays(out, m.decoder);
    return out;
}

inline Model load_model(const Checkpoint& ckpt, const RunConfig& cfg) {
    return {load_encoder<float>(ckpt, cfg.encoder), load_decoder<float>(ckpt, cfg.decoder, cfg.encoder.embed_dim)};
}

struct Prediction {
    Mask mask;
    Tensor<double> foreground;  // class-1 probability per pixel
};

inline Prediction predict(const Tensor<float>& prepared, const Model& m, const RunConfig& cfg) {
    const auto out = forward(prepared, m.encoder, cfg.encoder, m.decoder, cfg.decoder);
    const Grid cg = cfg.decoder.common_grid(cfg.encoder);
    return {out.mask,
            foreground_probability(out.logits, cg, cfg.encoder.image_h, cfg.encoder.image_w).cast<double>()};
}

/// Per-sample metric reports in input order. With `ground_truth_as_pred`
/// the ground truth is scored against itself.
inline std::vector<MetricReport> evaluate(const std::vector<Sample>& samples, const Model& m, const RunConfig& cfg,
                                          bool ground_truth_as_pred = false) {
    std::vector<MetricReport> out;
    for (const auto& s : samples) {
        const Mask gt = prepare_mask(s.mask, cfg);
        if (ground_truth_as_pred) {
            Tensor<double> prob({gt.height, gt.width});
            for (std::size_t i = 0; i < gt.size(); ++i) prob[i] = gt.labels[i];
            out.push_back(evaluate_sample(s.id, gt, prob, gt, cfg.metrics.options));
            continue;
        }
        const Prediction p = predict(prepare_image(s.image, cfg), m, cfg);
        out.push_back(evaluate_sample(s.id, p.mask, p.foreground, gt, cfg.metrics.options));
    }
    return out;
}

inline std::vector<FeatureSample<float>> extract_all(const std::vector<Sample>& samples, const Model& m,
                                                     const RunConfig& cfg) {
    std::vector<FeatureSample<float>> out;
    out.reserve(samples.size());
    const Grid cg = cfg.decoder.common_grid(cfg.encoder);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        try {
            out.push_back(extract_features(prepare_image(samples[i].image, cfg), prepare_mask(samples[i].mask, cfg),
                                           m.encoder, cfg.encoder, cg));
        } catch (const ShapeError& e) {
            throw ShapeError("sample " + std::to_string(i) + " (" + samples[i].id + "): " + e.what());
        }
    }
    return out;
}

struct TrainingRun {
    Model model;
    std::vector<LossRecord> curve;
    std::uint64_t encoder_checksum_before = 0;
    std::uint64_t encoder_checksum_after = 0;
    Split split;
};

/// Splits, extracts frozen features once, trains the decoder.
inline TrainingRun run_training(const RunConfig& cfg, const std::function<void(const LossRecord&)>& on_step = {}) {
    cfg.validate();
    TrainingRun run;
    run.split = split_samples(load_samples(cfg), cfg.data.synth.seed);
    run.model = init_model(cfg);
    run.encoder_checksum_before = run.model.encoder.checksum();
    const auto features = extract_all(run.split.train, run.model, cfg);
    auto result = train(features, run.model.encoder, cfg.encoder, cfg.decoder, cfg.train, run.model.decoder, on_step);
    run.model.decoder = std::move(result.params);
    run.curve = std::move(result.curve);
    run.encoder_checksum_after = run.model.encoder.checksum();
    return run;
}

}  // namespace segdino
