#pragma once

// Differentiable layer kernels: 2-D convolution (im2col + GEMM, strip-tiled
// so buffers stay bounded at large resolutions), 2x2 max pooling, relu,
// instance normalization, nearest-neighbor upsampling and a sigmoid output
// bound. Forward passes are paired with hand-derived backward passes; strip
// partitioning and reduction order are fixed, so results are run-to-run
// deterministic for a fixed thread count.

#include <Eigen/Dense>

#include "xstyle/common.hpp"
#include "xstyle/tensor.hpp"

namespace xstyle {

enum class PadMode { Zero, Reflect };

// Mirror-without-edge-repeat index; clamps degenerate 1-wide axes.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

struct Conv2dSpec {
    int in_c = 0;
    int out_c = 0;
    int kh = 3;
    int kw = 3;
    int stride = 1;
    int pad = 1;
    PadMode pad_mode = PadMode::Zero;

    int k() const { return in_c * kh * kw; }
    std::size_t weight_count() const { return std::size_t(out_c) * k(); }
    int out_h(int in_h) const { return (in_h + 2 * pad - kh) / stride + 1; }
    int out_w(int in_w) const { return (in_w + 2 * pad - kw) / stride + 1; }
};

namespace detail {

// Fills `cols` (k x L row-major) for output rows [y0, y1).
template <typename T>
void im2col_strip(const Tensor<T>& x, const Conv2dSpec& s, int out_w, int y0, int y1,
                  T* cols) {
    const std::int64_t L = std::int64_t(y1 - y0) * out_w;
    std::int64_t row = 0;
    for (int ci = 0; ci < s.in_c; ++ci) {
        const T* plane = x.plane(ci);
        for (int ky = 0; ky < s.kh; ++ky) {
            for (int kx = 0; kx < s.kw; ++kx, ++row) {
                T* dst = cols + row * L;
                std::int64_t j = 0;
                for (int yo = y0; yo < y1; ++yo) {
                    int yi = yo * s.stride - s.pad + ky;
                    bool y_in = (yi >= 0 && yi < x.height);
                    if (!y_in && s.pad_mode == PadMode::Reflect)
                        yi = reflect_index(yi, x.height), y_in = true;
                    const T* src_row = y_in ? plane + std::size_t(yi) * x.width : nullptr;
                    for (int xo = 0; xo < out_w; ++xo, ++j) {
                        int xi = xo * s.stride - s.pad + kx;
                        if (!y_in) {
                            dst[j] = T(0);
                        } else if (xi >= 0 && xi < x.width) {
                            dst[j] = src_row[xi];
                        } else if (s.pad_mode == PadMode::Reflect) {
                            dst[j] = src_row[reflect_index(xi, x.width)];
                        } else {
                            dst[j] = T(0);
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of `cols`-shaped gradients back onto the input tensor.
template <typename T>
void col2im_strip(Tensor<T>& dx, const Conv2dSpec& s, int out_w, int y0, int y1,
                  const T* cols) {
    const std::int64_t L = std::int64_t(y1 - y0) * out_w;
    std::int64_t row = 0;
    for (int ci = 0; ci < s.in_c; ++ci) {
        T* plane = dx.plane(ci);
        for (int ky = 0; ky < s.kh; ++ky) {
            for (int kx = 0; kx < s.kw; ++kx, ++row) {
                const T* src = cols + row * L;
                std::int64_t j = 0;
                for (int yo = y0; yo < y1; ++yo) {
                    int yi = yo * s.stride - s.pad + ky;
                    if (yi < 0 || yi >= dx.height) {
                        if (s.pad_mode == PadMode::Zero) {
                            j += out_w;
                            continue;
                        }
                        yi = reflect_index(yi, dx.height);
                    }
                    T* dst_row = plane + std::size_t(yi) * dx.width;
                    for (int xo = 0; xo < out_w; ++xo, ++j) {
                        int xi = xo * s.stride - s.pad + kx;
                        if (xi < 0 || xi >= dx.width) {
                            if (s.pad_mode == PadMode::Zero) continue;
                            xi = reflect_index(xi, dx.width);
                        }
                        dst_row[xi] += src[j];
                    }
                }
            }
        }
    }
}

// Strip height that keeps the im2col buffer near 16 MB.
inline int conv_strip_rows(int k, int out_w, int out_h) {
    std::int64_t budget = std::int64_t(4) << 20;  // elements
    std::int64_t rows = budget / (std::int64_t(k) * std::max(out_w, 1));
    return int(std::clamp<std::int64_t>(rows, 1, out_h));
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const std::vector<T>& w,
                         const std::vector<T>& b, const Conv2dSpec& s) {
    if (x.channels != s.in_c)
        throw ShapeError("conv2d: input has " + std::to_string(x.channels) +
                         " channels, spec wants " + std::to_string(s.in_c));
    if (w.size() != s.weight_count() || int(b.size()) != s.out_c)
        throw ShapeError("conv2d: parameter count mismatch");
    const int out_h = s.out_h(x.height), out_w = s.out_w(x.width);
    if (out_h <= 0 || out_w <= 0)
        throw ShapeError("conv2d: input " + x.shape_str() + " too small for kernel");

    Tensor<T> y(s.out_c, out_h, out_w);
    const int k = s.k();
    const int strip = detail::conv_strip_rows(k, out_w, out_h);
    const std::int64_t n_strips = (out_h + strip - 1) / strip;

    Eigen::Map<const MatrixRM<T>> wm(w.data(), s.out_c, k);
    Eigen::Map<const Eigen::Vector<T, Eigen::Dynamic>> bv(b.data(), s.out_c);

    parallel_chunks(n_strips, [&](int, std::int64_t sb, std::int64_t se) {
        std::vector<T> cols;
        for (std::int64_t si = sb; si < se; ++si) {
            int y0 = int(si) * strip, y1 = std::min(out_h, y0 + strip);
            std::int64_t L = std::int64_t(y1 - y0) * out_w;
            cols.resize(std::size_t(k) * L);
            detail::im2col_strip(x, s, out_w, y0, y1, cols.data());
            Eigen::Map<const MatrixRM<T>> cm(cols.data(), k, L);
            Eigen::Map<MatrixRM<T>, Eigen::Unaligned, Eigen::OuterStride<>> ym(
                y.v.data() + std::size_t(y0) * out_w, s.out_c, L,
                Eigen::OuterStride<>(std::int64_t(out_h) * out_w));
            ym.noalias() = wm * cm;
            ym.colwise() += bv;
        }
    });
    return y;
}

template <typename T>
struct ConvGrads {
    Tensor<T> dx;          // empty when not requested
    std::vector<T> dw;
    std::vector<T> db;
};

// Backward through a convolution. `x` may be an empty tensor when need_dw is
// false (the data gradient only needs the weights).
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& dy,
                             const std::vector<T>& w, const Conv2dSpec& s, int in_h,
                             int in_w, bool need_dx, bool need_dw) {
    const int out_h = dy.height, out_w = dy.width;
    if (dy.channels != s.out_c) throw ShapeError("conv2d_backward: dy channel mismatch");
    const int k = s.k();
    const int strip = detail::conv_strip_rows(k, out_w, out_h);
    const std::int64_t n_strips = (out_h + strip - 1) / strip;
    const int nt = thread_count();

    ConvGrads<T> g;
    if (need_dw) {
        g.dw.assign(s.weight_count(), T(0));
        g.db.assign(std::size_t(s.out_c), T(0));
        for (int c = 0; c < s.out_c; ++c) {
            const T* p = dy.plane(c);
            T acc = T(0);
            for (std::int64_t i = 0, n = dy.spatial_size(); i < n; ++i) acc += p[i];
            g.db[std::size_t(c)] = acc;
        }
    }

    // Per-chunk partial accumulators, reduced in fixed chunk order below.
    std::vector<Tensor<T>> dx_parts;
    std::vector<std::vector<T>> dw_parts;
    if (need_dx) dx_parts.assign(std::size_t(nt), Tensor<T>());
    if (need_dw) dw_parts.assign(std::size_t(nt), std::vector<T>());

    Eigen::Map<const MatrixRM<T>> wm(w.data(), s.out_c, k);

    parallel_chunks(n_strips, [&](int chunk, std::int64_t sb, std::int64_t se) {
        std::vector<T> cols, dcols;
        Tensor<T>* dxp = nullptr;
        std::vector<T>* dwp = nullptr;
        if (need_dx) {
            dx_parts[std::size_t(chunk)] = Tensor<T>(s.in_c, in_h, in_w);
            dxp = &dx_parts[std::size_t(chunk)];
        }
        if (need_dw) {
            dw_parts[std::size_t(chunk)].assign(s.weight_count(), T(0));
            dwp = &dw_parts[std::size_t(chunk)];
        }
        for (std::int64_t si = sb; si < se; ++si) {
            int y0 = int(si) * strip, y1 = std::min(out_h, y0 + strip);
            std::int64_t L = std::int64_t(y1 - y0) * out_w;
            Eigen::Map<const MatrixRM<T>, Eigen::Unaligned, Eigen::OuterStride<>> dym(
                dy.v.data() + std::size_t(y0) * out_w, s.out_c, L,
                Eigen::OuterStride<>(std::int64_t(out_h) * out_w));
            if (need_dw) {
                cols.resize(std::size_t(k) * L);
                detail::im2col_strip(x, s, out_w, y0, y1, cols.data());
                Eigen::Map<const MatrixRM<T>> cm(cols.data(), k, L);
                Eigen::Map<MatrixRM<T>> dwm(dwp->data(), s.out_c, k);
                dwm.noalias() += dym * cm.transpose();
            }
            if (need_dx) {
                dcols.resize(std::size_t(k) * L);
                Eigen::Map<MatrixRM<T>> dcm(dcols.data(), k, L);
                dcm.noalias() = wm.transpose() * dym;
                detail::col2im_strip(*dxp, s, out_w, y0, y1, dcols.data());
            }
        }
    });

    if (need_dx) {
        g.dx = Tensor<T>(s.in_c, in_h, in_w);
        for (auto& part : dx_parts) {
            if (part.v.empty()) continue;
            for (std::size_t i = 0; i < g.dx.v.size(); ++i) g.dx.v[i] += part.v[i];
        }
    }
    if (need_dw) {
        for (auto& part : dw_parts) {
            if (part.empty()) continue;
            for (std::size_t i = 0; i < g.dw.size(); ++i) g.dw[i] += part[i];
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------
template <typename T>
void relu_inplace(Tensor<T>& x) {
    for (auto& v : x.v)
        if (v < T(0)) v = T(0);
}

// dX from dY using the post-activation values as the mask.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& post, const Tensor<T>& dy) {
    Tensor<T> dx(dy.channels, dy.height, dy.width);
    for (std::size_t i = 0; i < dx.v.size(); ++i)
        dx.v[i] = post.v[i] > T(0) ? dy.v[i] : T(0);
    return dx;
}

// ---------------------------------------------------------------------------
// 2x2 stride-2 max pooling, floor mode: odd trailing rows/cols are dropped.
// ---------------------------------------------------------------------------
template <typename T>
struct PoolResult {
    Tensor<T> y;
    std::vector<std::uint8_t> argmax;  // 2*dy+dx per output cell
};

template <typename T>
PoolResult<T> maxpool2_forward(const Tensor<T>& x) {
    int oh = x.height / 2, ow = x.width / 2;
    if (oh < 1 || ow < 1) throw ShapeError("maxpool2: input " + x.shape_str() + " too small");
    PoolResult<T> r;
    r.y = Tensor<T>(x.channels, oh, ow);
    r.argmax.resize(std::size_t(x.channels) * oh * ow);
    for (int c = 0; c < x.channels; ++c) {
        const T* src = x.plane(c);
        T* dst = r.y.plane(c);
        std::uint8_t* am = r.argmax.data() + std::size_t(c) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            const T* r0 = src + std::size_t(2 * y) * x.width;
            const T* r1 = r0 + x.width;
            for (int x2 = 0; x2 < ow; ++x2) {
                int xi = 2 * x2;
                T best = r0[xi];
                std::uint8_t arg = 0;
                if (r0[xi + 1] > best) { best = r0[xi + 1]; arg = 1; }
                if (r1[xi] > best) { best = r1[xi]; arg = 2; }
                if (r1[xi + 1] > best) { best = r1[xi + 1]; arg = 3; }
                dst[std::size_t(y) * ow + x2] = best;
                am[std::size_t(y) * ow + x2] = arg;
            }
        }
    }
    return r;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const std::vector<std::uint8_t>& argmax,
                            int in_h, int in_w) {
    Tensor<T> dx(dy.channels, in_h, in_w);
    int oh = dy.height, ow = dy.width;
    for (int c = 0; c < dy.channels; ++c) {
        const T* src = dy.plane(c);
        const std::uint8_t* am = argmax.data() + std::size_t(c) * oh * ow;
        T* dst = dx.plane(c);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                std::uint8_t a = am[std::size_t(y) * ow + x];
                int yi = 2 * y + (a >> 1), xi = 2 * x + (a & 1);
                dst[std::size_t(yi) * in_w + xi] += src[std::size_t(y) * ow + x];
            }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Instance normalization with affine parameters.
// ---------------------------------------------------------------------------
template <typename T>
struct InstanceNormCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;  // per channel
};

template <typename T>
Tensor<T> instance_norm_forward(const Tensor<T>& x, const std::vector<T>& gamma,
                                const std::vector<T>& beta, InstanceNormCache<T>* cache,
                                T eps = T(1e-5)) {
    if (int(gamma.size()) != x.channels || int(beta.size()) != x.channels)
        throw ShapeError("instance_norm: affine parameter count mismatch");
    Tensor<T> y(x.channels, x.height, x.width);
    if (cache) {
        cache->xhat = Tensor<T>(x.channels, x.height, x.width);
        cache->inv_std.assign(std::size_t(x.channels), T(0));
    }
    const std::int64_t n = x.spatial_size();
    parallel_chunks(x.channels, [&](int, std::int64_t cb, std::int64_t ce) {
        for (std::int64_t c = cb; c < ce; ++c) {
            const T* src = x.plane(int(c));
            T mean = T(0);
            for (std::int64_t i = 0; i < n; ++i) mean += src[i];
            mean /= T(n);
            T var = T(0);
            for (std::int64_t i = 0; i < n; ++i) {
                T d = src[i] - mean;
                var += d * d;
            }
            var /= T(n);
            T inv_std = T(1) / std::sqrt(var + eps);
            T g = gamma[std::size_t(c)], b = beta[std::size_t(c)];
            T* dst = y.plane(int(c));
            T* xh = cache ? cache->xhat.plane(int(c)) : nullptr;
            for (std::int64_t i = 0; i < n; ++i) {
                T h = (src[i] - mean) * inv_std;
                if (xh) xh[i] = h;
                dst[i] = g * h + b;
            }
            if (cache) cache->inv_std[std::size_t(c)] = inv_std;
        }
    });
    return y;
}

template <typename T>
struct InstanceNormGrads {
    Tensor<T> dx;
    std::vector<T> dgamma;
    std::vector<T> dbeta;
};

template <typename T>
InstanceNormGrads<T> instance_norm_backward(const Tensor<T>& dy,
                                            const InstanceNormCache<T>& cache,
                                            const std::vector<T>& gamma) {
    InstanceNormGrads<T> g;
    g.dx = Tensor<T>(dy.channels, dy.height, dy.width);
    g.dgamma.assign(std::size_t(dy.channels), T(0));
    g.dbeta.assign(std::size_t(dy.channels), T(0));
    const std::int64_t n = dy.spatial_size();
    parallel_chunks(dy.channels, [&](int, std::int64_t cb, std::int64_t ce) {
        for (std::int64_t c = cb; c < ce; ++c) {
            const T* d = dy.plane(int(c));
            const T* xh = cache.xhat.plane(int(c));
            T sum_dy = T(0), sum_dy_xh = T(0);
            for (std::int64_t i = 0; i < n; ++i) {
                sum_dy += d[i];
                sum_dy_xh += d[i] * xh[i];
            }
            g.dbeta[std::size_t(c)] = sum_dy;
            g.dgamma[std::size_t(c)] = sum_dy_xh;
            T mean_dy = sum_dy / T(n);
            T mean_dy_xh = sum_dy_xh / T(n);
            T scale = gamma[std::size_t(c)] * cache.inv_std[std::size_t(c)];
            T* dst = g.dx.plane(int(c));
            for (std::int64_t i = 0; i < n; ++i)
                dst[i] = scale * (d[i] - mean_dy - xh[i] * mean_dy_xh);
        }
    });
    return g;
}

// ---------------------------------------------------------------------------
// Nearest-neighbor upsampling (integer factor) for the decoder.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
    return upsample_spatial(x, x.height * factor, x.width * factor);
}

template <typename T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& dy, int factor) {
    return downsample_spatial_sum(dy, dy.height / factor, dy.width / factor);
}

// ---------------------------------------------------------------------------
// Sigmoid output bound to (0,1).
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
    Tensor<T> y(x.channels, x.height, x.width);
    for (std::size_t i = 0; i < x.v.size(); ++i)
        y.v[i] = T(1) / (T(1) + std::exp(-x.v[i]));
    return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& post, const Tensor<T>& dy) {
    Tensor<T> dx(dy.channels, dy.height, dy.width);
    for (std::size_t i = 0; i < dx.v.size(); ++i)
        dx.v[i] = dy.v[i] * post.v[i] * (T(1) - post.v[i]);
    return dx;
}

// Reflect-pads the right/bottom borders (used to round sizes up to the
// network's downsampling factor before a forward pass).
template <typename T>
Tensor<T> pad_bottom_right(const Tensor<T>& x, int pad_h, int pad_w) {
    if (pad_h == 0 && pad_w == 0) return x;
    Tensor<T> out(x.channels, x.height + pad_h, x.width + pad_w);
    for (int c = 0; c < x.channels; ++c)
        for (int y = 0; y < out.height; ++y) {
            int yi = reflect_index(y, x.height);
            const T* src = x.plane(c) + std::size_t(yi) * x.width;
            T* dst = out.plane(c) + std::size_t(y) * out.width;
            for (int xo = 0; xo < out.width; ++xo) dst[xo] = src[reflect_index(xo, x.width)];
        }
    return out;
}

}  // namespace xstyle
