#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "segdino/error.hpp"
#include "segdino/mask.hpp"
#include "segdino/tensor.hpp"

namespace segdino {

/// Binary pixel counts; foreground is class 1.
struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t total() const noexcept { return tp + fp + fn + tn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

namespace detail {

inline void require_same_dims(const Mask& a, const Mask& b, const char* what) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError(std::string(what) + ": mask size " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
}

inline void require_binary(const Mask& m, const char* what) {
    if (!m.is_binary()) throw DomainError(std::string(what) + ": mask is not binary");
}

}  // namespace detail

inline ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
    detail::require_same_dims(pred, gt, "confusion");
    detail::require_binary(pred, "confusion (prediction)");
    detail::require_binary(gt, "confusion (ground truth)");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.labels[i] == 1, g = gt.labels[i] == 1;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

/// 2tp / (2tp + fp + fn); 1 when both masks are empty.
inline double dice(const ConfusionCounts& c) {
    const std::size_t den = 2 * c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : double(2 * c.tp) / double(den);
}

/// tp / (tp + fp + fn); 1 when both masks are empty.
inline double iou(const ConfusionCounts& c) {
    const std::size_t den = c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : double(c.tp) / double(den);
}

inline double pixel_accuracy(const ConfusionCounts& c) {
    return c.total() == 0 ? 1.0 : double(c.tp + c.tn) / double(c.total());
}

/// Percentile with linear interpolation between order statistics at
/// rank q·(n − 1). `sorted` must be ascending and non-empty.
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
    const double pos = q * double(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - double(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Exact squared Euclidean distance from every pixel center to the nearest
/// foreground pixel of `m` (Meijster, Roerdink & Hesselink 2000), in
/// integer arithmetic. Requires at least one foreground pixel.
inline std::vector<std::int64_t> squared_distance_transform(const Mask& m) {
    const auto H = static_cast<std::int64_t>(m.height), W = static_cast<std::int64_t>(m.width);
    const std::int64_t inf = H + W;
    std::vector<std::int64_t> g(static_cast<std::size_t>(H * W));
    auto G = [&](std::int64_t y, std::int64_t x) -> std::int64_t& { return g[static_cast<std::size_t>(y * W + x)]; };
    for (std::int64_t x = 0; x < W; ++x) {
        G(0, x) = m.at(0, static_cast<std::size_t>(x)) == 1 ? 0 : inf;
        for (std::int64_t y = 1; y < H; ++y)
            G(y, x) = m.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) == 1 ? 0 : 1 + G(y - 1, x);
        for (std::int64_t y = H - 2; y >= 0; --y)
            if (G(y + 1, x) < G(y, x)) G(y, x) = 1 + G(y + 1, x);
    }
    std::vector<std::int64_t> dt(g.size());
    std::vector<std::int64_t> s(static_cast<std::size_t>(W)), t(static_cast<std::size_t>(W));
    for (std::int64_t y = 0; y < H; ++y) {
        auto f = [&](std::int64_t x, std::int64_t i) { return (x - i) * (x - i) + G(y, i) * G(y, i); };
        auto sep = [&](std::int64_t i, std::int64_t u) {
            return (u * u - i * i + G(y, u) * G(y, u) - G(y, i) * G(y, i)) / (2 * (u - i));
        };
        std::int64_t q = 0;
        s[0] = 0;
        t[0] = 0;
        for (std::int64_t u = 1; u < W; ++u) {
            while (q >= 0 && f(t[q], s[q]) > f(t[q], u)) --q;
            if (q < 0) {
                q = 0;
                s[0] = u;
            } else {
                const std::int64_t w = 1 + sep(s[q], u);
                if (w < W) {
                    ++q;
                    s[q] = u;
                    t[q] = w;
                }
            }
        }
        for (std::int64_t u = W - 1; u >= 0; --u) {
            dt[static_cast<std::size_t>(y * W + u)] = f(u, s[q]);
            if (u == t[q]) --q;
        }
    }
    return dt;
}

/// 95th percentile of the distances from each foreground pixel of `from`
/// to the nearest foreground pixel of `to`. Both must be non-empty.
inline double directed_hd95(const Mask& from, const Mask& to) {
    const auto dt = squared_distance_transform(to);
    std::vector<double> d;
    for (std::size_t i = 0; i < from.size(); ++i)
        if (from.labels[i] == 1) d.push_back(std::sqrt(static_cast<double>(dt[i])));
    std::sort(d.begin(), d.end());
    return percentile_sorted(d, 0.95);
}

/// Symmetric HD95: max of the two directed 95th percentiles over
/// foreground pixel centers, unit spacing. Both empty → 0; exactly one
/// empty → undefined.
inline std::optional<double> hd95(const Mask& pred, const Mask& gt) {
    detail::require_same_dims(pred, gt, "hd95");
    detail::require_binary(pred, "hd95 (prediction)");
    detail::require_binary(gt, "hd95 (ground truth)");
    const bool pe = pred.count(1) == 0, ge = gt.count(1) == 0;
    if (pe && ge) return 0.0;
    if (pe || ge) return std::nullopt;
    return std::max(directed_hd95(pred, gt), directed_hd95(gt, pred));
}

namespace detail {

inline void require_probabilities(const Tensor<double>& p, const Mask& gt, const char* what) {
    if (p.rank() != 2 || p.dim(0) != gt.height || p.dim(1) != gt.width)
        throw ShapeError(std::string(what) + ": probability map " + shape_str(p.shape()) + " vs mask " +
                         std::to_string(gt.height) + "x" + std::to_string(gt.width));
    for (double v : p.data())
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError(std::string(what) + ": probability outside [0, 1]");
    require_binary(gt, what);
}

}  // namespace detail

/// Binarizes at `threshold` (p >= threshold is foreground), then
/// (1 + β²)·P·R / (β²·P + R). Zero denominators give 0.
inline double f_beta(const Tensor<double>& pred_prob, const Mask& gt, double beta_sq = 0.3, double threshold = 0.5) {
    detail::require_probabilities(pred_prob, gt, "f_beta");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool p = pred_prob[i] >= threshold, g = gt.labels[i] == 1;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    const double precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    const double den = beta_sq * precision + recall;
    return den > 0 ? (1 + beta_sq) * precision * recall / den : 0.0;
}

inline double mae(const Tensor<double>& pred_prob, const Mask& gt) {
    detail::require_probabilities(pred_prob, gt, "mae");
    double s = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) s += std::abs(pred_prob[i] - double(gt.labels[i]));
    return s / double(gt.size());
}

/// Balanced error rate in percent. A component is undefined when its class
/// is absent from the ground truth; BER is then undefined too.
struct BerResult {
    std::optional<double> ber, s_ber, n_ber;
};

inline BerResult ber(const ConfusionCounts& c) {
    BerResult r;
    if (c.tp + c.fn > 0) r.s_ber = 100.0 * double(c.fn) / double(c.tp + c.fn);
    if (c.tn + c.fp > 0) r.n_ber = 100.0 * double(c.fp) / double(c.tn + c.fp);
    if (r.s_ber && r.n_ber) r.ber = (*r.s_ber + *r.n_ber) / 2.0;
    return r;
}

/// Column order of the metric CSV.
inline constexpr std::array<const char*, 9> kMetricNames{"dsc", "iou", "hd95", "acc", "fbeta",
                                                         "mae", "ber", "s_ber", "n_ber"};

inline constexpr const char* kHd95Convention = "max-of-directed-p95 linear-interp unit-spacing";

/// Named values for one sample, or their mean over a set of samples when
/// `aggregate` is set. Undefined metrics are absent from `values`.
struct MetricReport {
    std::string id;
    std::map<std::string, double> values;
    bool aggregate = false;
    std::size_t samples = 1;
    std::map<std::string, std::size_t> defined;  // per metric, aggregates only

    std::optional<double> get(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end()) return std::nullopt;
        return it->second;
    }
};

struct MetricOptions {
    double beta_sq = 0.3;
    double threshold = 0.5;
};

/// Every metric for one prediction. `pred_prob` is the foreground
/// probability map used by F_β and MAE.
inline MetricReport evaluate_sample(const std::string& id, const Mask& pred, const Tensor<double>& pred_prob,
                                    const Mask& gt, const MetricOptions& opt = {}) {
    const ConfusionCounts c = confusion(pred, gt);
    MetricReport r;
    r.id = id;
    r.values["dsc"] = dice(c);
    r.values["iou"] = iou(c);
    if (auto h = hd95(pred, gt)) r.values["hd95"] = *h;
    r.values["acc"] = pixel_accuracy(c);
    r.values["fbeta"] = f_beta(pred_prob, gt, opt.beta_sq, opt.threshold);
    r.values["mae"] = mae(pred_prob, gt);
    const BerResult b = ber(c);
    if (b.ber) r.values["ber"] = *b.ber;
    if (b.s_ber) r.values["s_ber"] = *b.s_ber;
    if (b.n_ber) r.values["n_ber"] = *b.n_ber;
    return r;
}

/// Per-metric mean over the samples where the metric is defined, summed in
/// list order.
inline MetricReport aggregate(const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw UsageError("aggregate: no reports");
    MetricReport out;
    out.id = "mean";
    out.aggregate = true;
    out.samples = reports.size();
    for (const char* name : kMetricNames) {
        double sum = 0;
        std::size_t n = 0;
        for (const auto& r : reports)
            if (auto v = r.get(name)) {
                sum += *v;
                ++n;
            }
        out.defined[name] = n;
        if (n) out.values[name] = sum / double(n);
    }
    return out;
}

namespace detail {

inline std::string format_value(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace detail

/// `sample_id,dsc,iou,hd95,acc,fbeta,mae,ber,s_ber,n_ber`; undefined cells
/// are empty. Values are written with 17 significant digits.
inline void write_metrics_csv(std::ostream& os, const std::vector<MetricReport>& reports) {
    os << "sample_id";
    for (const char* n : kMetricNames) os << ',' << n;
    os << '\n';
    for (const auto& r : reports) {
        os << r.id;
        for (const char* n : kMetricNames) {
            os << ',';
            if (auto v = r.get(n)) os << detail::format_value(*v);
        }
        os << '\n';
    }
}

/// Human-readable table of an aggregate report, with the conventions that
/// affect the numbers.
inline void write_summary(std::ostream& os, const MetricReport& agg, const MetricOptions& opt) {
    os << "# samples: " << agg.samples << '\n';
    os << "# hd95: " << kHd95Convention << "; one empty mask -> undefined (excluded)\n";
    os << "# dsc/iou: both masks empty -> 1\n";
    os << "# fbeta: beta_sq=" << opt.beta_sq << " threshold=" << opt.threshold << '\n';
    os << "# ber family in percent; undefined when a class is absent from ground truth\n";
    os << std::left << std::setw(8) << "metric" << std::setw(14) << "mean" << "defined\n";
    for (const char* n : kMetricNames) {
        os << std::setw(8) << n << std::setw(14);
        if (auto v = agg.get(n)) {
            std::ostringstream val;
            val << std::fixed << std::setprecision(6) << *v;
            os << val.str();
        } else {
            os << "-";
        }
        const auto it = agg.defined.find(n);
        const std::size_t d = it == agg.defined.end() ? 0 : it->second;
        os << d << '/' << agg.samples;
        if (std::string(n) == "hd95") os << " (excluded " << agg.samples - d << ")";
        os << '\n';
    }
}

}  // namespace segdino
