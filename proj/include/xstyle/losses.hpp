#pragma once

// The training objective: content, texture (same-layer gram), structure
// (cross-layer gram) and total-variation terms, their weighted total, and
// analytic gradients w.r.t. the generated image. Style targets are
// precomputed once per style and persistable to a versioned container.

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "xstyle/common.hpp"
#include "xstyle/tensor.hpp"
#include "xstyle/vgg.hpp"

namespace xstyle {

using LayerPair = std::pair<std::string, std::string>;

inline std::string pair_key(const LayerPair& p) { return p.first + "x" + p.second; }

struct LossWeights {
    std::map<std::string, double> content;    // layer -> folded weight
    std::map<std::string, double> texture;    // layer -> beta
    std::map<LayerPair, double> structure;    // (l1, l2) -> gamma, l1 < l2 in net order
    double tv = 0.0;

    // The tuned defaults: content relu4_1 5.6; texture 1.1/1.3/0.5/1.0 on
    // relu1_1..relu4_1; structure 1.5 on the four low-level pairs; tv 150.
    static LossWeights defaults() {
        LossWeights w;
        w.content = {{"relu4_1", 5.6}};
        w.texture = {{"relu1_1", 1.1}, {"relu2_1", 1.3}, {"relu3_1", 0.5}, {"relu4_1", 1.0}};
        w.structure = {{{"relu1_1", "relu1_2"}, 1.5},
                       {{"relu1_1", "relu2_1"}, 1.5},
                       {{"relu2_1", "relu2_2"}, 1.5},
                       {{"relu2_1", "relu3_1"}, 1.5}};
        w.tv = 150.0;
        return w;
    }

    void validate() const {
        static const std::set<std::string> texture_ok = {"relu1_1", "relu2_1", "relu3_1",
                                                         "relu4_1"};
        auto check_nonneg = [](double v, const std::string& what) {
            if (!(v >= 0.0)) throw ConfigError("loss weight for " + what + " must be >= 0");
        };
        for (const auto& [l, v] : content) {
            vgg::conv_index_of_relu(l);
            check_nonneg(v, l);
        }
        for (const auto& [l, v] : texture) {
            if (!texture_ok.count(l))
                throw ConfigError("texture layer " + l + " not in {relu1_1,relu2_1,relu3_1,relu4_1}");
            check_nonneg(v, l);
        }
        for (const auto& [p, v] : structure) {
            int i1 = vgg::conv_index_of_relu(p.first);
            int i2 = vgg::conv_index_of_relu(p.second);
            if (i1 >= i2)
                throw ConfigError("structure pair " + pair_key(p) +
                                  " must be ordered shallow x deep");
            check_nonneg(v, pair_key(p));
        }
        check_nonneg(tv, "tv");
    }

    // Union of all referenced layers, in network order.
    LayerSet all_layers() const {
        std::set<std::string> names;
        for (const auto& [l, v] : content) names.insert(l);
        for (const auto& [l, v] : texture) names.insert(l);
        for (const auto& [p, v] : structure) {
            names.insert(p.first);
            names.insert(p.second);
        }
        LayerSet out(names.begin(), names.end());
        std::sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
            return vgg::conv_index_of_relu(a) < vgg::conv_index_of_relu(b);
        });
        return out;
    }

    LayerSet style_layers() const {
        std::set<std::string> names;
        for (const auto& [l, v] : texture) names.insert(l);
        for (const auto& [p, v] : structure) {
            names.insert(p.first);
            names.insert(p.second);
        }
        return LayerSet(names.begin(), names.end());
    }
};

// ---------------------------------------------------------------------------
// Style targets
// ---------------------------------------------------------------------------
template <typename T>
struct StyleTargets {
    std::string style_id;
    int source_h = 0;
    int source_w = 0;
    std::string source_digest;
    std::map<std::string, GramMatrix<T>> grams;
    std::map<std::string, GramMatrix<T>> cross_grams;  // keyed by pair_key
};

template <typename T>
std::string image_tensor_digest(const Tensor<T>& rgb) {
    Sha256 h;
    std::uint32_t dims[3] = {std::uint32_t(rgb.channels), std::uint32_t(rgb.height),
                             std::uint32_t(rgb.width)};
    h.update(dims, sizeof(dims));
    for (const T& v : rgb.v) {
        float f = float(v);
        h.update(&f, sizeof(f));
    }
    return h.hex();
}

// Grams and cross-grams of the style image for every configured layer/pair.
template <typename T>
StyleTargets<T> compute_style_targets(const LossNetwork<T>& net, const Tensor<T>& style_rgb,
                                      const LossWeights& w, std::string style_id = "style") {
    w.validate();
    StyleTargets<T> t;
    t.style_id = std::move(style_id);
    t.source_h = style_rgb.height;
    t.source_w = style_rgb.width;
    t.source_digest = image_tensor_digest(style_rgb);
    auto feats = net.extract_features(net.preprocess(style_rgb), w.style_layers());
    for (const auto& [layer, beta] : w.texture) t.grams.emplace(layer, gram(feats.at(layer)));
    for (const auto& [p, gamma] : w.structure)
        t.cross_grams.emplace(pair_key(p), cross_gram(feats.at(p.first), feats.at(p.second)));
    return t;
}

// ---------------------------------------------------------------------------
// Individual loss terms
// ---------------------------------------------------------------------------

// Unnormalized sum of squared feature differences.
template <typename T>
double content_loss(const Tensor<T>& fx, const Tensor<T>& fy) {
    if (!(fx.channels == fy.channels && fx.spatial_size() == fy.spatial_size()))
        throw ShapeError("content_loss: shape mismatch " + fx.shape_str() + " vs " +
                         fy.shape_str());
    double acc = 0.0;
    for (std::size_t i = 0; i < fx.v.size(); ++i) {
        double d = double(fx.v[i]) - double(fy.v[i]);
        acc += d * d;
    }
    return acc;
}

namespace detail {

template <typename T>
double gram_sq_err(const GramMatrix<T>& a, const GramMatrix<T>& b) {
    if (a.dim != b.dim) throw ShapeError("gram dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.m.size(); ++i) {
        double d = double(a.m[i]) - double(b.m[i]);
        acc += d * d;
    }
    return acc;
}

template <typename T>
const Tensor<T>& feature_or_throw(const FeatureDict<T>& feats, const std::string& layer,
                                  const char* who) {
    auto it = feats.find(layer);
    if (it == feats.end())
        throw Error(std::string(who) + ": missing feature map for layer " + layer);
    return it->second;
}

}  // namespace detail

// Weighted squared gram error over the configured texture layers.
template <typename T>
double texture_loss(const StyleTargets<T>& targets, const FeatureDict<T>& y_feats,
                    const LossWeights& w) {
    double acc = 0.0;
    for (const auto& [layer, beta] : w.texture) {
        const auto& fy = detail::feature_or_throw(y_feats, layer, "texture_loss");
        auto it = targets.grams.find(layer);
        if (it == targets.grams.end())
            throw Error("texture_loss: style targets lack gram for " + layer);
        acc += beta * detail::gram_sq_err(it->second, gram(fy));
    }
    return acc;
}

// Weighted squared cross-gram error over the configured layer pairs.
template <typename T>
double structure_loss(const StyleTargets<T>& targets, const FeatureDict<T>& y_feats,
                      const LossWeights& w) {
    double acc = 0.0;
    for (const auto& [p, gamma] : w.structure) {
        const auto& lo = detail::feature_or_throw(y_feats, p.first, "structure_loss");
        const auto& hi = detail::feature_or_throw(y_feats, p.second, "structure_loss");
        auto it = targets.cross_grams.find(pair_key(p));
        if (it == targets.cross_grams.end())
            throw Error("structure_loss: style targets lack cross-gram for " + pair_key(p));
        acc += gamma * detail::gram_sq_err(it->second, cross_gram(lo, hi));
    }
    return acc;
}

// Squared anisotropic total variation: sum over channels of squared
// horizontal and vertical neighbor differences.
template <typename T>
double tv_loss(const Tensor<T>& y) {
    double acc = 0.0;
    for (int c = 0; c < y.channels; ++c) {
        const T* p = y.plane(c);
        for (int r = 0; r < y.height; ++r) {
            const T* row = p + std::size_t(r) * y.width;
            for (int x = 0; x + 1 < y.width; ++x) {
                double d = double(row[x + 1]) - double(row[x]);
                acc += d * d;
            }
        }
        for (int r = 0; r + 1 < y.height; ++r) {
            const T* row = p + std::size_t(r) * y.width;
            const T* next = row + y.width;
            for (int x = 0; x < y.width; ++x) {
                double d = double(next[x]) - double(row[x]);
                acc += d * d;
            }
        }
    }
    return acc;
}

// d(tv_loss)/dy accumulated into dy (scaled by `scale`).
template <typename T>
void tv_loss_backward(const Tensor<T>& y, double scale, Tensor<T>& dy) {
    for (int c = 0; c < y.channels; ++c) {
        const T* p = y.plane(c);
        T* g = dy.plane(c);
        for (int r = 0; r < y.height; ++r) {
            std::size_t off = std::size_t(r) * y.width;
            for (int x = 0; x + 1 < y.width; ++x) {
                double d = 2.0 * scale * (double(p[off + x + 1]) - double(p[off + x]));
                g[off + x + 1] += T(d);
                g[off + x] -= T(d);
            }
        }
        for (int r = 0; r + 1 < y.height; ++r) {
            std::size_t off = std::size_t(r) * y.width;
            for (int x = 0; x < y.width; ++x) {
                double d = 2.0 * scale * (double(p[off + y.width + x]) - double(p[off + x]));
                g[off + y.width + x] += T(d);
                g[off + x] -= T(d);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Weighted total
// ---------------------------------------------------------------------------
struct LossBreakdown {
    double content = 0.0;
    double texture = 0.0;
    double structure = 0.0;
    double tv = 0.0;
    double total = 0.0;
};

template <typename T>
struct TotalLossResult {
    LossBreakdown breakdown;
    Tensor<T> dy;  // gradient w.r.t. the generated image; empty unless requested
};

// Evaluates the weighted total loss of generated image y against content
// image x and precomputed style targets. Extracts features of x and y once
// each; optionally returns d(total)/dy.
template <typename T>
TotalLossResult<T> total_loss(const Tensor<T>& x_rgb, const StyleTargets<T>& targets,
                              const Tensor<T>& y_rgb, const LossNetwork<T>& net,
                              const LossWeights& w, bool with_grad = false) {
    if (x_rgb.height != y_rgb.height || x_rgb.width != y_rgb.width)
        throw ShapeError("total_loss: x is " + x_rgb.shape_str() + " but y is " +
                         y_rgb.shape_str());
    w.validate();

    TotalLossResult<T> res;
    LayerSet y_layers = w.all_layers();

    typename LossNetwork<T>::Tape tape;
    FeatureDict<T> y_feats =
        y_layers.empty()
            ? FeatureDict<T>{}
            : net.extract_features(net.preprocess(y_rgb), y_layers, with_grad ? &tape : nullptr);

    LayerSet x_layers;
    for (const auto& [l, v] : w.content) x_layers.push_back(l);
    FeatureDict<T> x_feats =
        x_layers.empty() ? FeatureDict<T>{}
                         : net.extract_features(net.preprocess(x_rgb), x_layers);

    // Per-layer gradients on y's feature maps, accumulated across terms.
    FeatureDict<T> feat_grads;
    auto grad_slot = [&](const std::string& layer) -> Tensor<T>& {
        auto it = feat_grads.find(layer);
        if (it == feat_grads.end()) {
            const auto& f = y_feats.at(layer);
            it = feat_grads.emplace(layer, Tensor<T>(f.channels, f.height, f.width)).first;
        }
        return it->second;
    };

    for (const auto& [layer, wl] : w.content) {
        const auto& fx = detail::feature_or_throw(x_feats, layer, "total_loss");
        const auto& fy = detail::feature_or_throw(y_feats, layer, "total_loss");
        res.breakdown.content += wl * content_loss(fx, fy);
        if (with_grad && wl != 0.0) {
            auto& g = grad_slot(layer);
            for (std::size_t i = 0; i < g.v.size(); ++i)
                g.v[i] += T(2.0 * wl) * (fy.v[i] - fx.v[i]);
        }
    }

    for (const auto& [layer, beta] : w.texture) {
        const auto& fy = detail::feature_or_throw(y_feats, layer, "texture_loss");
        auto it = targets.grams.find(layer);
        if (it == targets.grams.end())
            throw Error("total_loss: style targets lack gram for " + layer);
        GramMatrix<T> gy = gram(fy);
        res.breakdown.texture += beta * detail::gram_sq_err(it->second, gy);
        if (with_grad && beta != 0.0) {
            // d/dF of sum (Gy - Gs)^2 with Gy = F F^T: (dG + dG^T) F.
            GramMatrix<T> dg(gy.dim, gy.kind);
            for (std::size_t i = 0; i < gy.m.size(); ++i)
                dg.m[i] = T(2.0 * beta) * (gy.m[i] - it->second.m[i]);
            auto& g = grad_slot(layer);
            feature_matrix(g).noalias() +=
                (dg.mat() + dg.mat().transpose()) * feature_matrix(fy);
        }
    }

    for (const auto& [p, gamma] : w.structure) {
        const auto& lo = detail::feature_or_throw(y_feats, p.first, "structure_loss");
        const auto& hi = detail::feature_or_throw(y_feats, p.second, "structure_loss");
        auto it = targets.cross_grams.find(pair_key(p));
        if (it == targets.cross_grams.end())
            throw Error("total_loss: style targets lack cross-gram for " + pair_key(p));
        GramMatrix<T> cy = cross_gram(lo, hi);
        res.breakdown.structure += gamma * detail::gram_sq_err(it->second, cy);
        if (with_grad && gamma != 0.0) {
            GramMatrix<T> dg(cy.dim, cy.kind);
            for (std::size_t i = 0; i < cy.m.size(); ++i)
                dg.m[i] = T(2.0 * gamma) * (cy.m[i] - it->second.m[i]);
            auto [dlo, dhi] = cross_gram_backward(lo, hi, dg);
            auto& glo = grad_slot(p.first);
            for (std::size_t i = 0; i < glo.v.size(); ++i) glo.v[i] += dlo.v[i];
            auto& ghi = grad_slot(p.second);
            for (std::size_t i = 0; i < ghi.v.size(); ++i) ghi.v[i] += dhi.v[i];
        }
    }

    res.breakdown.tv = w.tv * tv_loss(y_rgb);
    res.breakdown.total = res.breakdown.content + res.breakdown.texture +
                          res.breakdown.structure + res.breakdown.tv;

    if (with_grad) {
        res.dy = Tensor<T>(3, y_rgb.height, y_rgb.width);
        if (!feat_grads.empty())
            res.dy = net.preprocess_backward(net.backward(tape, feat_grads));
        if (w.tv != 0.0) tv_loss_backward(y_rgb, w.tv, res.dy);
    }
    return res;
}

// ---------------------------------------------------------------------------
// StyleTargets container
// ---------------------------------------------------------------------------
inline constexpr char kTargetsMagic[9] = "XSTSTYT1";
inline constexpr std::uint32_t kTargetsVersion = 1;

template <typename T>
void save_style_targets(const std::filesystem::path& path, const StyleTargets<T>& t) {
    write_file_atomic(path, [&](std::ostream& os) {
        BinaryWriter bw(os);
        bw.bytes(kTargetsMagic, 8);
        bw.u32(kTargetsVersion);
        bw.str(t.style_id);
        bw.u32(std::uint32_t(t.source_h));
        bw.u32(std::uint32_t(t.source_w));
        bw.str(t.source_digest);
        bw.u32(std::uint32_t(t.grams.size()));
        for (const auto& [layer, g] : t.grams) {
            bw.str(layer);
            bw.u32(std::uint32_t(g.dim));
            for (const T& v : g.m) bw.f32(float(v));
        }
        bw.u32(std::uint32_t(t.cross_grams.size()));
        for (const auto& [key, g] : t.cross_grams) {
            bw.str(key);
            bw.u32(std::uint32_t(g.dim));
            for (const T& v : g.m) bw.f32(float(v));
        }
        bw.write_digest_tail();
    });
}

template <typename T>
StyleTargets<T> load_style_targets(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("style targets not found: " + path.string());
    BinaryReader br(is, path.filename().string());
    char magic[8];
    br.bytes(magic, 8);
    if (std::memcmp(magic, kTargetsMagic, 8) != 0)
        throw FormatError(path.string() + ": not a style-targets container");
    if (br.u32() != kTargetsVersion)
        throw FormatError(path.string() + ": unsupported style-targets version");
    StyleTargets<T> t;
    t.style_id = br.str(4096);
    t.source_h = int(br.u32());
    t.source_w = int(br.u32());
    t.source_digest = br.str(128);
    std::uint32_t ng = br.u32();
    for (std::uint32_t i = 0; i < ng; ++i) {
        std::string layer = br.str(256);
        int dim = int(br.u32());
        GramMatrix<T> g(dim, GramKind::SameLayer);
        for (auto& v : g.m) v = T(br.f32());
        t.grams.emplace(std::move(layer), std::move(g));
    }
    std::uint32_t nc = br.u32();
    for (std::uint32_t i = 0; i < nc; ++i) {
        std::string key = br.str(256);
        int dim = int(br.u32());
        GramMatrix<T> g(dim, GramKind::CrossLayer);
        for (auto& v : g.m) v = T(br.f32());
        t.cross_grams.emplace(std::move(key), std::move(g));
    }
    br.check_digest_tail();
    return t;
}

}  // namespace xstyle
