#pragma once

// Shared test fixtures: a deterministic synthetic VGG weight set and common
// scratch-directory helpers.

#include <filesystem>

#include "xstyle/losses.hpp"
#include "xstyle/vgg.hpp"

namespace fixtures {

inline const xstyle::vgg::Weights& vgg_weights() {
    static xstyle::vgg::Weights w = xstyle::vgg::Weights::random(1234);
    return w;
}

inline const xstyle::LossNetwork<float>& net_f() {
    static xstyle::LossNetwork<float> net(vgg_weights());
    return net;
}

inline const xstyle::LossNetwork<double>& net_d() {
    static xstyle::LossNetwork<double> net(vgg_weights());
    return net;
}

inline std::filesystem::path scratch_dir(const std::string& sub) {
    auto d = std::filesystem::temp_directory_path() / "xstyle_tests" / sub;
    std::filesystem::create_directories(d);
    return d;
}

template <typename T>
xstyle::Tensor<T> random_rgb(xstyle::Rng& rng, int h, int w, double lo = 0.02,
                             double hi = 0.98) {
    xstyle::Tensor<T> t(3, h, w);
    for (auto& v : t.v) v = T(rng.uniform(lo, hi));
    return t;
}

// Smooth random RGB (piecewise blobs), closer to natural images than white
// noise; useful for style/content stand-ins.
template <typename T>
xstyle::Tensor<T> blobby_rgb(xstyle::Rng& rng, int h, int w, int blobs = 12) {
    xstyle::Tensor<T> t(3, h, w);
    for (int c = 0; c < 3; ++c) {
        double base = rng.uniform(0.2, 0.8);
        T* p = t.plane(c);
        for (std::int64_t i = 0; i < t.spatial_size(); ++i) p[i] = T(base);
    }
    for (int b = 0; b < blobs; ++b) {
        double cy = rng.uniform(0, h), cx = rng.uniform(0, w);
        double r = rng.uniform(double(std::min(h, w)) / 8, double(std::min(h, w)) / 2.5);
        double col[3] = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                         rng.uniform(0.05, 0.95)};
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                if (d2 < r * r) {
                    double a = 1.0 - std::sqrt(d2) / r;
                    for (int c = 0; c < 3; ++c) {
                        auto& v = t.at(c, y, x);
                        v = T(double(v) * (1 - a) + col[c] * a);
                    }
                }
            }
    }
    return t;
}

// Writes n blobby PNGs into dir; returns their paths.
inline std::vector<std::filesystem::path> write_synthetic_corpus(
    const std::filesystem::path& dir, int n, int size, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    xstyle::Rng rng(seed);
    std::vector<std::filesystem::path> out;
    for (int i = 0; i < n; ++i) {
        auto t = blobby_rgb<float>(rng, size, size);
        char name[32];
        std::snprintf(name, sizeof name, "img%03d.png", i);
        auto p = dir / name;
        xstyle::save_png(p, xstyle::tensor_to_image(t));
        out.push_back(p);
    }
    return out;
}

// A high-contrast striped/checkered style image: strong texture and strong
// cross-layer structure.
inline xstyle::Tensor<float> stripey_style(int size, std::uint64_t seed) {
    xstyle::Rng rng(seed);
    xstyle::Tensor<float> t(3, size, size);
    double col_a[3] = {0.95, 0.85, 0.1}, col_b[3] = {0.1, 0.2, 0.8}, col_c[3] = {0.9, 0.1, 0.2};
    int period = std::max(4, size / 8);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            int band = ((x + y) / period) % 3;
            const double* col = band == 0 ? col_a : (band == 1 ? col_b : col_c);
            bool check = ((x / (period / 2)) + (y / (period / 2))) % 2 == 0;
            for (int c = 0; c < 3; ++c) {
                double v = col[c] * (check ? 1.0 : 0.55) + rng.uniform(-0.03, 0.03);
                t.at(c, y, x) = float(std::clamp(v, 0.0, 1.0));
            }
        }
    return t;
}

// Style with genuinely cross-scale statistics: large colored regions, each
// filled with a micro-pattern determined by its color. Per-layer grams see
// the global mix of colors and micro-textures; only the cross-layer
// covariance sees which pattern belongs to which context. Pattern periods
// are coarse enough (3-6 px) to register in groups 2-3 as well.
inline xstyle::Tensor<float> structured_style(int size, std::uint64_t seed) {
    xstyle::Rng rng(seed);
    xstyle::Tensor<float> t(3, size, size);
    for (int c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < t.spatial_size(); ++i) t.plane(c)[i] = 0.5f;
    struct Region { double cy, cx, r; int kind; };
    std::vector<Region> regions;
    const double cols[4][3] = {
        {0.9, 0.15, 0.1}, {0.1, 0.3, 0.9}, {0.95, 0.85, 0.15}, {0.15, 0.8, 0.3}};
    for (int k = 0; k < 14; ++k) {
        Region reg{rng.uniform(0, size), rng.uniform(0, size),
                   rng.uniform(size / 10.0, size / 4.0), int(rng.uniform_index(4))};
        regions.push_back(reg);
    }
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            for (const auto& reg : regions) {
                double d2 = (y - reg.cy) * (y - reg.cy) + (x - reg.cx) * (x - reg.cx);
                if (d2 >= reg.r * reg.r) continue;
                // Pattern is a function of the region color: 0 horizontal
                // stripes, 1 vertical stripes, 2 checker, 3 dots.
                bool on = false;
                switch (reg.kind) {
                    case 0: on = (y / 3) % 2 == 0; break;
                    case 1: on = (x / 3) % 2 == 0; break;
                    case 2: on = ((x / 4) + (y / 4)) % 2 == 0; break;
                    default: on = (x % 6 < 2) && (y % 6 < 2); break;
                }
                for (int c = 0; c < 3; ++c)
                    t.at(c, y, x) = float(on ? cols[reg.kind][c] : cols[reg.kind][c] * 0.2);
                break;
            }
        }
    return t;
}

}  // namespace fixtures
