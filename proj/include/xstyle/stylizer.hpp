#pragma once

// Inference-side operations: one-pass stylization of images (alpha passed
// through untouched), a checkpoint-free iterative pixel optimizer used to
// validate the losses end to end, forward-throughput benchmarking, and
// activation-magnitude inspection of the loss network.

#include <chrono>
#include <fstream>

#include "xstyle/image.hpp"
#include "xstyle/losses.hpp"
#include "xstyle/transformer.hpp"

namespace xstyle {

// Forward pass through trained parameters. Alpha, when present, is detached
// before inference and reattached bit-identically.
inline Image stylize(const TransformerParams<float>& params, const Image& img) {
    Tensor<float> rgb = image_to_tensor<float>(img);
    Image out = tensor_to_image(transformer_forward(params, rgb));
    out.alpha = img.alpha;
    return out;
}

inline Image stylize(const TransformerCheckpoint<float>& ckpt, const Image& img) {
    return stylize(ckpt.params, img);
}

// ---------------------------------------------------------------------------
// Iterative pixel-space optimization (desk-scale oracle for the losses).
// ---------------------------------------------------------------------------
template <typename T>
struct OptimizeResult {
    Tensor<T> image;
    std::vector<LossBreakdown> trajectory;  // entry 0 is the initial loss
    double final_step_size = 0.0;
};

// Gradient descent on the pixels of y (initialized from the content image)
// with step-halving on loss increase: accepted steps never increase the
// total loss.
template <typename T>
OptimizeResult<T> optimize_image(const Tensor<T>& content, const Tensor<T>& style,
                                 const LossNetwork<T>& net, const LossWeights& w, int iters,
                                 double step_size = 2e-3) {
    if (iters < 1) throw ConfigError("optimize_image: iters must be >= 1");
    if (step_size <= 0) throw ConfigError("optimize_image: step size must be positive");
    w.validate();

    StyleTargets<T> targets = compute_style_targets(net, style, w, "inline");
    OptimizeResult<T> res;
    res.image = content;
    for (auto& v : res.image.v) v = std::clamp(v, T(0), T(1));

    auto eval = [&](const Tensor<T>& y, bool grad) {
        auto r = total_loss(content, targets, y, net, w, grad);
        if (!std::isfinite(r.breakdown.total))
            throw NumericError("optimize_image: non-finite loss (content=" +
                               std::to_string(r.breakdown.content) + ", texture=" +
                               std::to_string(r.breakdown.texture) + ", structure=" +
                               std::to_string(r.breakdown.structure) + ")");
        return r;
    };

    auto cur = eval(res.image, true);
    res.trajectory.push_back(cur.breakdown);
    double step = step_size;

    for (int it = 0; it < iters; ++it) {
        bool accepted = false;
        for (int halvings = 0; halvings < 24 && !accepted; ++halvings) {
            Tensor<T> cand(3, res.image.height, res.image.width);
            for (std::size_t i = 0; i < cand.v.size(); ++i)
                cand.v[i] = std::clamp(res.image.v[i] - T(step) * cur.dy.v[i], T(0), T(1));
            auto trial = eval(cand, false);
            if (trial.breakdown.total <= cur.breakdown.total) {
                res.image = std::move(cand);
                cur = eval(res.image, true);
                accepted = true;
            } else {
                step *= 0.5;
            }
        }
        // A rejected iteration keeps the image; the trajectory stays flat.
        res.trajectory.push_back(cur.breakdown);
        if (accepted) step *= 1.25;
    }
    res.final_step_size = step;
    return res;
}

// ---------------------------------------------------------------------------
// Benchmarking
// ---------------------------------------------------------------------------
struct BenchmarkRow {
    int width = 0;
    int height = 0;
    std::vector<double> samples_ms;  // timed forward passes only
    double mean_ms = 0.0;
    double stddev_ms = 0.0;
    double per_pixel_us = 0.0;
};

struct BenchmarkReport {
    std::vector<BenchmarkRow> rows;
    std::string hardware;
    int runs = 0;
};

inline std::string hardware_descriptor() {
    std::string model = "unknown cpu";
    std::ifstream cpuinfo("/proc/cpuinfo");
    std::string line;
    while (std::getline(cpuinfo, line)) {
        if (line.rfind("model name", 0) == 0) {
            auto colon = line.find(':');
            if (colon != std::string::npos) model = line.substr(colon + 2);
            break;
        }
    }
    return model + ", " + std::to_string(std::thread::hardware_concurrency()) +
           " hw threads, " + std::to_string(thread_count()) + " used";
}

// Times forward passes only (one untimed warmup per size); no disk I/O
// inside the timed region.
inline BenchmarkReport benchmark(const TransformerParams<float>& params,
                                 const std::vector<std::pair<int, int>>& sizes_wh, int runs) {
    if (runs < 5) throw ConfigError("benchmark: need at least 5 runs per size");
    if (sizes_wh.empty()) throw ConfigError("benchmark: no sizes given");
    using clock = std::chrono::steady_clock;

    BenchmarkReport report;
    report.hardware = hardware_descriptor();
    report.runs = runs;
    for (auto [w, h] : sizes_wh) {
        if (w < 16 || h < 16)
            throw ConfigError("benchmark: size " + std::to_string(w) + "x" + std::to_string(h) +
                              " below the 16px minimum");
        Rng rng(std::uint64_t(w) * 1000003u + std::uint64_t(h));
        Tensor<float> img(3, h, w);
        for (auto& v : img.v) v = float(rng.uniform());

        BenchmarkRow row;
        row.width = w;
        row.height = h;
        (void)transformer_forward(params, img);  // warmup
        for (int r = 0; r < runs; ++r) {
            auto t0 = clock::now();
            (void)transformer_forward(params, img);
            auto t1 = clock::now();
            row.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        double mean = 0;
        for (double s : row.samples_ms) mean += s;
        mean /= double(runs);
        double var = 0;
        for (double s : row.samples_ms) var += (s - mean) * (s - mean);
        row.mean_ms = mean;
        row.stddev_ms = std::sqrt(var / double(runs > 1 ? runs - 1 : 1));
        row.per_pixel_us = mean * 1000.0 / (double(w) * h);
        report.rows.push_back(std::move(row));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Activation inspection
// ---------------------------------------------------------------------------

// Per-layer spatial maps of channel-averaged activation magnitude at the
// layer's native resolution; single-channel tensors, exportable as images.
template <typename T>
std::map<std::string, Tensor<T>> inspect_activations(const LossNetwork<T>& net,
                                                     const Tensor<T>& rgb,
                                                     const LayerSet& layers) {
    auto feats = net.extract_features(net.preprocess(rgb), layers);
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, f] : feats) {
        Tensor<T> mag(1, f.height, f.width);
        for (int c = 0; c < f.channels; ++c) {
            const T* p = f.plane(c);
            for (std::int64_t i = 0, n = f.spatial_size(); i < n; ++i)
                mag.v[std::size_t(i)] += std::abs(p[i]);
        }
        for (auto& v : mag.v) v /= T(f.channels);
        out.emplace(name, std::move(mag));
    }
    return out;
}

// Normalizes a magnitude map to [0,1] by its max and widens to gray RGB.
template <typename T>
Image magnitude_to_image(const Tensor<T>& mag) {
    T peak = T(0);
    for (const T& v : mag.v) peak = std::max(peak, v);
    Image img(mag.height, mag.width);
    double inv = peak > T(0) ? 1.0 / double(peak) : 0.0;
    for (std::int64_t i = 0, n = mag.spatial_size(); i < n; ++i) {
        float g = float(double(mag.v[std::size_t(i)]) * inv);
        img.plane(0)[i] = g;
        img.plane(1)[i] = g;
        img.plane(2)[i] = g;
    }
    return img;
}

}  // namespace xstyle
