#pragma once

// Test-only reference implementations. These stay deliberately naive —
// triple loops and index arithmetic, no shared code with the library path
// they check.

#include <cmath>
#include <vector>

#include "xstyle/common.hpp"
#include "xstyle/tensor.hpp"

namespace oracle {

template <typename T>
xstyle::Tensor<T> random_map(xstyle::Rng& rng, int c, int h, int w, double lo = -1.0,
                             double hi = 1.0) {
    xstyle::Tensor<T> t(c, h, w);
    for (auto& x : t.v) x = T(rng.uniform(lo, hi));
    return t;
}

// Gram by brute-force triple loop over (i, j, k).
template <typename T>
std::vector<double> gram_brute(const xstyle::Tensor<T>& f) {
    int c = f.channels;
    std::int64_t n = f.spatial_size();
    std::vector<double> g(std::size_t(c) * c, 0.0);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::int64_t k = 0; k < n; ++k)
                acc += double(f.plane(i)[k]) * double(f.plane(j)[k]);
            g[std::size_t(i) * c + j] = acc;
        }
    return g;
}

// Cross-gram by direct index arithmetic: no materialized upsampling, no
// library calls. Shallow channels block-repeat, deep pixels nearest-neighbor,
// shallow map trailing-cropped to the common grid.
template <typename T>
std::vector<double> cross_gram_brute(const xstyle::Tensor<T>& lo,
                                     const xstyle::Tensor<T>& hi) {
    int sh = lo.height / hi.height;
    int sw = lo.width / hi.width;
    int ch = sh * hi.height;
    int cw = sw * hi.width;
    int c2 = hi.channels;
    int rep = hi.channels / lo.channels;
    std::vector<double> g(std::size_t(c2) * c2, 0.0);
    for (int i = 0; i < c2; ++i)
        for (int j = 0; j < c2; ++j) {
            double acc = 0.0;
            for (int y = 0; y < ch; ++y)
                for (int x = 0; x < cw; ++x)
                    acc += double(lo.at(i / rep, y, x)) * double(hi.at(j, y / sh, x / sw));
            g[std::size_t(i) * c2 + j] = acc;
        }
    return g;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
    double denom = std::max({std::fabs(a), std::fabs(b), floor});
    return std::fabs(a - b) / denom;
}

// Central-difference derivative of a scalar function of one coordinate.
template <typename Fn>
double central_diff(Fn&& f, double x0, double h) {
    return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

}  // namespace oracle
