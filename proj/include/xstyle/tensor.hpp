#pragma once

// Feature-map tensors and the covariance kernels the style losses are built
// on: same-layer Gram matrices, shape-matching upsampling, and cross-layer
// Gram matrices. Everything here is pure and re-entrant.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "xstyle/common.hpp"

namespace xstyle {

// Planar C×H×W tensor. Channel plane i is a contiguous H·W row-major block,
// so the same storage reads as the C×N feature-map matrix (row i = channel i
// flattened) without copying.
template <typename T>
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int c, int h, int w) : channels(c), height(h), width(w), v(std::size_t(c) * h * w, T(0)) {}

    std::int64_t spatial_size() const { return std::int64_t(height) * width; }
    std::int64_t size() const { return std::int64_t(channels) * height * width; }

    T* plane(int c) { return v.data() + std::size_t(c) * height * width; }
    const T* plane(int c) const { return v.data() + std::size_t(c) * height * width; }

    T& at(int c, int y, int x) { return v[(std::size_t(c) * height + y) * width + x]; }
    T at(int c, int y, int x) const { return v[(std::size_t(c) * height + y) * width + x]; }

    void fill(T value) { std::fill(v.begin(), v.end(), value); }

    bool same_shape(const Tensor& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    std::string shape_str() const {
        return std::to_string(channels) + "x" + std::to_string(height) + "x" +
               std::to_string(width);
    }

    bool all_finite() const {
        for (const T& x : v)
            if (!std::isfinite(double(x))) return false;
        return true;
    }
};

template <typename T>
using FeatureMap = Tensor<T>;

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Maps a tensor as its C×N feature matrix.
template <typename T>
Eigen::Map<const MatrixRM<T>> feature_matrix(const Tensor<T>& t) {
    return Eigen::Map<const MatrixRM<T>>(t.v.data(), t.channels, t.spatial_size());
}

template <typename T>
Eigen::Map<MatrixRM<T>> feature_matrix(Tensor<T>& t) {
    return Eigen::Map<MatrixRM<T>>(t.v.data(), t.channels, t.spatial_size());
}

enum class GramKind { SameLayer, CrossLayer };

// Uncentered (cross-)covariance of feature maps. Same-layer grams are
// symmetric PSD; cross-layer grams are square but not symmetric in general.
// Entries carry no normalization by N or C; the loss weights absorb scale.
template <typename T>
struct GramMatrix {
    int dim = 0;
    GramKind kind = GramKind::SameLayer;
    std::vector<T> m;

    GramMatrix() = default;
    GramMatrix(int d, GramKind k) : dim(d), kind(k), m(std::size_t(d) * d, T(0)) {}

    T& at(int i, int j) { return m[std::size_t(i) * dim + j]; }
    T at(int i, int j) const { return m[std::size_t(i) * dim + j]; }

    Eigen::Map<MatrixRM<T>> mat() { return {m.data(), dim, dim}; }
    Eigen::Map<const MatrixRM<T>> mat() const { return {m.data(), dim, dim}; }
};

namespace detail {
template <typename T>
void require_finite(const Tensor<T>& t, const char* who) {
    if (!t.all_finite())
        throw NumericError(std::string(who) + ": non-finite entries in feature map");
}
}  // namespace detail

// G = F·Fᵀ.
template <typename T>
GramMatrix<T> gram(const Tensor<T>& f) {
    detail::require_finite(f, "gram");
    GramMatrix<T> g(f.channels, GramKind::SameLayer);
    auto fm = feature_matrix(f);
    g.mat().noalias() = fm * fm.transpose();
    return g;
}

// Block-repeat channel upsampling: row i of the result is row ⌊i/r⌋ of the
// input, each channel repeated r consecutive times.
template <typename T>
Tensor<T> upsample_channels(const Tensor<T>& f, int target_channels) {
    if (target_channels <= 0 || f.channels <= 0 || target_channels % f.channels != 0)
        throw ShapeError("upsample_channels: " + std::to_string(target_channels) +
                         " is not an integer multiple of " + std::to_string(f.channels));
    int r = target_channels / f.channels;
    if (r == 1) return f;
    Tensor<T> out(target_channels, f.height, f.width);
    std::size_t plane_bytes = std::size_t(f.spatial_size()) * sizeof(T);
    for (int c = 0; c < target_channels; ++c)
        std::memcpy(out.plane(c), f.plane(c / r), plane_bytes);
    return out;
}

// Nearest-neighbor spatial upsampling aligned to the pooling grid:
// output (y,x) = input (⌊y/sH⌋, ⌊x/sW⌋).
template <typename T>
Tensor<T> upsample_spatial(const Tensor<T>& f, int target_h, int target_w) {
    if (target_h <= 0 || target_w <= 0 || f.height <= 0 || f.width <= 0 ||
        target_h % f.height != 0 || target_w % f.width != 0)
        throw ShapeError("upsample_spatial: target " + std::to_string(target_h) + "x" +
                         std::to_string(target_w) + " is not an integer multiple of " +
                         std::to_string(f.height) + "x" + std::to_string(f.width));
    int sh = target_h / f.height, sw = target_w / f.width;
    if (sh == 1 && sw == 1) return f;
    Tensor<T> out(f.channels, target_h, target_w);
    for (int c = 0; c < f.channels; ++c) {
        const T* src = f.plane(c);
        T* dst = out.plane(c);
        for (int y = 0; y < target_h; ++y) {
            const T* srow = src + std::size_t(y / sh) * f.width;
            T* drow = dst + std::size_t(y) * target_w;
            for (int x = 0; x < target_w; ++x) drow[x] = srow[x / sw];
        }
    }
    return out;
}

// Adjoint of upsample_spatial: sums each sH×sW block of grad back onto the
// source cell. Used by the structure-loss backward pass.
template <typename T>
Tensor<T> downsample_spatial_sum(const Tensor<T>& grad, int source_h, int source_w) {
    if (grad.height % source_h != 0 || grad.width % source_w != 0)
        throw ShapeError("downsample_spatial_sum: incompatible shapes");
    int sh = grad.height / source_h, sw = grad.width / source_w;
    Tensor<T> out(grad.channels, source_h, source_w);
    for (int c = 0; c < grad.channels; ++c) {
        const T* src = grad.plane(c);
        T* dst = out.plane(c);
        for (int y = 0; y < grad.height; ++y) {
            const T* srow = src + std::size_t(y) * grad.width;
            T* drow = dst + std::size_t(y / sh) * source_w;
            for (int x = 0; x < grad.width; ++x) drow[x / sw] += srow[x];
        }
    }
    return out;
}

// Adjoint of upsample_channels: sums each block of r duplicated rows.
template <typename T>
Tensor<T> downsample_channels_sum(const Tensor<T>& grad, int source_channels) {
    if (grad.channels % source_channels != 0)
        throw ShapeError("downsample_channels_sum: incompatible channels");
    int r = grad.channels / source_channels;
    Tensor<T> out(source_channels, grad.height, grad.width);
    std::int64_t n = grad.spatial_size();
    for (int c = 0; c < grad.channels; ++c) {
        const T* src = grad.plane(c);
        T* dst = out.plane(c / r);
        for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
    }
    return out;
}

// Trailing crop to (h, w). Identity when dims already match.
template <typename T>
Tensor<T> crop_spatial(const Tensor<T>& f, int h, int w) {
    if (h == f.height && w == f.width) return f;
    if (h > f.height || w > f.width) throw ShapeError("crop_spatial: target exceeds source");
    Tensor<T> out(f.channels, h, w);
    for (int c = 0; c < f.channels; ++c)
        for (int y = 0; y < h; ++y)
            std::memcpy(out.plane(c) + std::size_t(y) * w,
                        f.plane(c) + std::size_t(y) * f.width, std::size_t(w) * sizeof(T));
    return out;
}

// Zero-pads a gradient back to the pre-crop shape (adjoint of crop_spatial).
template <typename T>
Tensor<T> uncrop_spatial(const Tensor<T>& grad, int h, int w) {
    if (h == grad.height && w == grad.width) return grad;
    Tensor<T> out(grad.channels, h, w);
    for (int c = 0; c < grad.channels; ++c)
        for (int y = 0; y < grad.height; ++y)
            std::memcpy(out.plane(c) + std::size_t(y) * w,
                        grad.plane(c) + std::size_t(y) * grad.width,
                        std::size_t(grad.width) * sizeof(T));
    return out;
}

// Shape plan for a cross-layer gram: the shallow map (more spatial samples,
// fewer channels) is channel-upsampled, the deep map is spatially upsampled,
// and odd borders are cropped off the shallow map first. Factors come from
// the pooling grid, so they are the floor ratio of the spatial dims; a crop
// of at most factor-1 trailing rows/columns realigns non-multiples.
struct CrossGramPlan {
    int sh = 1, sw = 1;        // spatial upsample factors for the deep map
    int common_h = 0, common_w = 0;
    int channels = 0;          // output dim = deep map channels
};

template <typename T>
CrossGramPlan cross_gram_plan(const Tensor<T>& f_lo, const Tensor<T>& f_hi) {
    if (f_lo.channels > f_hi.channels)
        throw ShapeError("cross_gram: shallow map has more channels (" +
                         f_lo.shape_str() + " vs " + f_hi.shape_str() + ")");
    if (f_hi.channels % f_lo.channels != 0)
        throw ShapeError("cross_gram: channel counts not divisible (" +
                         std::to_string(f_lo.channels) + " vs " +
                         std::to_string(f_hi.channels) + ")");
    if (f_lo.height < f_hi.height || f_lo.width < f_hi.width)
        throw ShapeError("cross_gram: shallow map must have the larger spatial dims (" +
                         f_lo.shape_str() + " vs " + f_hi.shape_str() + ")");
    CrossGramPlan p;
    p.sh = f_lo.height / f_hi.height;
    p.sw = f_lo.width / f_hi.width;
    p.common_h = p.sh * f_hi.height;
    p.common_w = p.sw * f_hi.width;
    p.channels = f_hi.channels;
    return p;
}

// G^{l1,l2} = A·Bᵀ with A = channel-upsampled shallow map and B = spatially
// upsampled deep map, both of shape max(C)×max(N).
template <typename T>
GramMatrix<T> cross_gram(const Tensor<T>& f_lo, const Tensor<T>& f_hi) {
    detail::require_finite(f_lo, "cross_gram");
    detail::require_finite(f_hi, "cross_gram");
    CrossGramPlan p = cross_gram_plan(f_lo, f_hi);
    Tensor<T> a = upsample_channels(crop_spatial(f_lo, p.common_h, p.common_w), p.channels);
    Tensor<T> b = upsample_spatial(f_hi, p.common_h, p.common_w);
    GramMatrix<T> g(p.channels, GramKind::CrossLayer);
    g.mat().noalias() = feature_matrix(a) * feature_matrix(b).transpose();
    return g;
}

// Gradients of sum_{ij} dG_{ij}·G_{ij} w.r.t. both input maps; dG is the
// upstream gradient on the cross-gram. Returned pair is (d f_lo, d f_hi).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> cross_gram_backward(const Tensor<T>& f_lo,
                                                    const Tensor<T>& f_hi,
                                                    const GramMatrix<T>& dg) {
    CrossGramPlan p = cross_gram_plan(f_lo, f_hi);
    Tensor<T> lo_c = crop_spatial(f_lo, p.common_h, p.common_w);
    Tensor<T> a = upsample_channels(lo_c, p.channels);
    Tensor<T> b = upsample_spatial(f_hi, p.common_h, p.common_w);

    Tensor<T> da(p.channels, p.common_h, p.common_w);
    Tensor<T> db(p.channels, p.common_h, p.common_w);
    feature_matrix(da).noalias() = dg.mat() * feature_matrix(b);
    feature_matrix(db).noalias() = dg.mat().transpose() * feature_matrix(a);

    Tensor<T> dlo = uncrop_spatial(downsample_channels_sum(da, f_lo.channels),
                                   f_lo.height, f_lo.width);
    Tensor<T> dhi = downsample_spatial_sum(db, f_hi.height, f_hi.width);
    return {std::move(dlo), std::move(dhi)};
}

}  // namespace xstyle
