#pragma once

// Fixed VGG19-prefix feature extractor (through relu4_1). Weights are loaded
// from a versioned binary container and never trained; extraction exposes a
// tape so scalar functions of the returned feature maps can be
// backpropagated to the input image.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xstyle/common.hpp"
#include "xstyle/image.hpp"
#include "xstyle/nn.hpp"
#include "xstyle/tensor.hpp"

namespace xstyle {
namespace vgg {

struct ConvInfo {
    const char* conv_name;
    const char* relu_name;
    int in_c;
    int out_c;
    bool pool_after;  // max pool between this stage and the next
    int group;
};

// VGG19 prefix: groups 1-2 have two convs, group 3 has four, then conv4_1.
inline constexpr int kConvCount = 9;
inline const std::array<ConvInfo, kConvCount>& plan() {
    static const std::array<ConvInfo, kConvCount> p = {{
        {"conv1_1", "relu1_1", 3, 64, false, 1},
        {"conv1_2", "relu1_2", 64, 64, true, 1},
        {"conv2_1", "relu2_1", 64, 128, false, 2},
        {"conv2_2", "relu2_2", 128, 128, true, 2},
        {"conv3_1", "relu3_1", 128, 256, false, 3},
        {"conv3_2", "relu3_2", 256, 256, false, 3},
        {"conv3_3", "relu3_3", 256, 256, false, 3},
        {"conv3_4", "relu3_4", 256, 256, true, 3},
        {"conv4_1", "relu4_1", 256, 512, false, 4},
    }};
    return p;
}

inline int conv_index_of_relu(const std::string& relu_name) {
    for (int i = 0; i < kConvCount; ++i)
        if (relu_name == plan()[std::size_t(i)].relu_name) return i;
    throw Error("unknown layer name: " + relu_name);
}

inline int group_of_relu(const std::string& relu_name) {
    return plan()[std::size_t(conv_index_of_relu(relu_name))].group;
}

// ---------------------------------------------------------------------------
// Weight container
// ---------------------------------------------------------------------------
struct Weights {
    // Kernels flattened (out_c, in_c, 3, 3) in plan order.
    std::vector<std::vector<float>> kernels;
    std::vector<std::vector<float>> biases;
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> stdev{0.229f, 0.224f, 0.225f};
    std::string digest;  // sha256 hex of the container payload

    static Weights random(std::uint64_t seed);
};

inline constexpr char kWeightsMagic[9] = "XSTVGGW1";
inline constexpr std::uint32_t kWeightsVersion = 1;

inline void save_weights(const std::filesystem::path& path, const Weights& w) {
    write_file_atomic(path, [&](std::ostream& os) {
        BinaryWriter bw(os);
        bw.bytes(kWeightsMagic, 8);
        bw.u32(kWeightsVersion);
        bw.u32(kConvCount);
        for (int i = 0; i < kConvCount; ++i) {
            const auto& info = plan()[std::size_t(i)];
            bw.str(info.conv_name);
            bw.u32(std::uint32_t(info.out_c));
            bw.u32(std::uint32_t(info.in_c));
            bw.u32(3);
            bw.u32(3);
        }
        for (int c = 0; c < 3; ++c) bw.f32(w.mean[std::size_t(c)]);
        for (int c = 0; c < 3; ++c) bw.f32(w.stdev[std::size_t(c)]);
        for (int i = 0; i < kConvCount; ++i) {
            bw.f32_array(w.kernels[std::size_t(i)].data(), w.kernels[std::size_t(i)].size());
            bw.f32_array(w.biases[std::size_t(i)].data(), w.biases[std::size_t(i)].size());
        }
        bw.write_digest_tail();
    });
}

// Loads and verifies a weight container. When `pinned_digest` is non-empty
// the payload digest must match it exactly.
inline Weights load_weights(const std::filesystem::path& path,
                            const std::string& pinned_digest = "") {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("weight container not found: " + path.string());
    BinaryReader br(is, path.filename().string());

    char magic[8];
    br.bytes(magic, 8);
    if (std::memcmp(magic, kWeightsMagic, 8) != 0)
        throw FormatError(path.string() + ": not a VGG weight container");
    std::uint32_t version = br.u32();
    if (version != kWeightsVersion)
        throw FormatError(path.string() + ": unsupported container version " +
                          std::to_string(version));
    std::uint32_t n = br.u32();
    if (n != kConvCount)
        throw FormatError(path.string() + ": manifest has " + std::to_string(n) +
                          " conv layers, expected " + std::to_string(kConvCount));
    for (int i = 0; i < kConvCount; ++i) {
        const auto& info = plan()[std::size_t(i)];
        std::string name = br.str(256);
        std::uint32_t oc = br.u32(), ic = br.u32(), kh = br.u32(), kw = br.u32();
        if (name != info.conv_name)
            throw FormatError(path.string() + ": manifest layer " + std::to_string(i) +
                              " is '" + name + "', expected '" + info.conv_name + "'");
        if (int(oc) != info.out_c || int(ic) != info.in_c || kh != 3 || kw != 3)
            throw FormatError(path.string() + ": " + name + " has shape " +
                              std::to_string(oc) + "x" + std::to_string(ic) + "x" +
                              std::to_string(kh) + "x" + std::to_string(kw) +
                              ", expected " + std::to_string(info.out_c) + "x" +
                              std::to_string(info.in_c) + "x3x3");
    }

    Weights w;
    for (int c = 0; c < 3; ++c) w.mean[std::size_t(c)] = br.f32();
    for (int c = 0; c < 3; ++c) w.stdev[std::size_t(c)] = br.f32();
    w.kernels.resize(kConvCount);
    w.biases.resize(kConvCount);
    for (int i = 0; i < kConvCount; ++i) {
        const auto& info = plan()[std::size_t(i)];
        auto& k = w.kernels[std::size_t(i)];
        auto& b = w.biases[std::size_t(i)];
        k.resize(std::size_t(info.out_c) * info.in_c * 9);
        b.resize(std::size_t(info.out_c));
        try {
            br.f32_array(k.data(), k.size());
            br.f32_array(b.data(), b.size());
        } catch (const FormatError&) {
            throw FormatError(path.string() + ": truncated; first missing layer is " +
                              std::string(info.conv_name));
        }
    }
    w.digest = Sha256::to_hex(br.running_digest());
    br.check_digest_tail();
    if (!pinned_digest.empty() && pinned_digest != w.digest)
        throw FormatError(path.string() + ": weight digest " + w.digest +
                          " does not match pinned digest " + pinned_digest);
    return w;
}

// Deterministic synthetic weights for fixtures and demos: He-scaled noise
// with the DC component removed per filter, matching the contrast-detecting
// character of pretrained low-level filters.
inline Weights Weights::random(std::uint64_t seed) {
    Rng rng(seed);
    Weights w;
    w.kernels.resize(kConvCount);
    w.biases.resize(kConvCount);
    for (int i = 0; i < kConvCount; ++i) {
        const auto& info = plan()[std::size_t(i)];
        std::size_t fan_in = std::size_t(info.in_c) * 9;
        double std_dev = std::sqrt(2.0 / double(fan_in));
        auto& k = w.kernels[std::size_t(i)];
        auto& b = w.biases[std::size_t(i)];
        k.resize(std::size_t(info.out_c) * fan_in);
        b.resize(std::size_t(info.out_c));
        for (auto& v : k) v = float(rng.normal() * std_dev);
        for (int oc = 0; oc < info.out_c; ++oc) {
            float* f = k.data() + std::size_t(oc) * fan_in;
            double mean = 0.0;
            for (std::size_t j = 0; j < fan_in; ++j) mean += f[j];
            mean /= double(fan_in);
            for (std::size_t j = 0; j < fan_in; ++j) f[j] = float(f[j] - mean);
        }
        for (auto& v : b) v = float(rng.normal() * 0.02);
    }
    return w;
}

}  // namespace vgg

// Layer names whose activations are requested.
using LayerSet = std::vector<std::string>;

template <typename T>
using FeatureDict = std::map<std::string, Tensor<T>>;

// ---------------------------------------------------------------------------
// LossNetwork: immutable after construction; extraction is re-entrant.
// ---------------------------------------------------------------------------
template <typename T>
class LossNetwork {
public:
    explicit LossNetwork(const vgg::Weights& w) : digest_(w.digest) {
        if (w.kernels.size() != vgg::kConvCount)
            throw ShapeError("LossNetwork: weight set incomplete");
        kernels_.resize(vgg::kConvCount);
        biases_.resize(vgg::kConvCount);
        for (int i = 0; i < vgg::kConvCount; ++i) {
            const auto& info = vgg::plan()[std::size_t(i)];
            const auto& ks = w.kernels[std::size_t(i)];
            const auto& bs = w.biases[std::size_t(i)];
            if (ks.size() != std::size_t(info.out_c) * info.in_c * 9 ||
                bs.size() != std::size_t(info.out_c))
                throw ShapeError(std::string("LossNetwork: bad shape for ") + info.conv_name);
            kernels_[std::size_t(i)].assign(ks.begin(), ks.end());
            biases_[std::size_t(i)].assign(bs.begin(), bs.end());
        }
        for (int c = 0; c < 3; ++c) {
            mean_[std::size_t(c)] = T(w.mean[std::size_t(c)]);
            stdev_[std::size_t(c)] = T(w.stdev[std::size_t(c)]);
            if (!(stdev_[std::size_t(c)] > T(0)))
                throw NumericError("LossNetwork: non-positive preprocessing scale");
        }
    }

    const std::string& digest() const { return digest_; }

    // Per-channel (x - mean) / std. Input must be 3-channel RGB in [0,1].
    Tensor<T> preprocess(const Tensor<T>& rgb) const {
        if (rgb.channels != 3)
            throw ShapeError("preprocess: expected 3 channels, got " +
                             std::to_string(rgb.channels));
        Tensor<T> out(3, rgb.height, rgb.width);
        for (int c = 0; c < 3; ++c) {
            const T* src = rgb.plane(c);
            T* dst = out.plane(c);
            T m = mean_[std::size_t(c)], inv = T(1) / stdev_[std::size_t(c)];
            for (std::int64_t i = 0, n = rgb.spatial_size(); i < n; ++i) {
                T v = src[i];
                if (!(v >= T(0) && v <= T(1)))
                    throw NumericError("preprocess: pixel value " + std::to_string(double(v)) +
                                       " outside [0,1]");
                dst[i] = (v - m) * inv;
            }
        }
        return out;
    }

    // Chain rule of preprocess: d(pre)/d(rgb) = 1/std per channel.
    Tensor<T> preprocess_backward(const Tensor<T>& dpre) const {
        Tensor<T> out(3, dpre.height, dpre.width);
        for (int c = 0; c < 3; ++c) {
            const T* src = dpre.plane(c);
            T* dst = out.plane(c);
            T inv = T(1) / stdev_[std::size_t(c)];
            for (std::int64_t i = 0, n = dpre.spatial_size(); i < n; ++i) dst[i] = src[i] * inv;
        }
        return out;
    }

    struct Tape {
        int executed = 0;                              // convs run
        int in_h = 0, in_w = 0;
        std::vector<Tensor<T>> post_relu;              // per conv
        std::vector<std::vector<std::uint8_t>> pool_argmax;  // per conv, empty if unused
        std::vector<std::pair<int, int>> conv_in_dims;
    };

    // Activations (post-relu, C×N with spatial dims retained) of the
    // requested layers for a preprocessed input. When `tape` is given, the
    // intermediates needed by backward() are kept.
    FeatureDict<T> extract_features(const Tensor<T>& pre, const LayerSet& layers,
                                    Tape* tape = nullptr) const {
        if (layers.empty()) return {};
        int deepest = -1;
        for (const auto& name : layers) deepest = std::max(deepest, vgg::conv_index_of_relu(name));
        check_min_size(pre, deepest);

        if (tape) {
            tape->executed = 0;
            tape->in_h = pre.height;
            tape->in_w = pre.width;
            tape->post_relu.assign(vgg::kConvCount, Tensor<T>());
            tape->pool_argmax.assign(vgg::kConvCount, {});
            tape->conv_in_dims.assign(vgg::kConvCount, {0, 0});
        }

        FeatureDict<T> out;
        Tensor<T> cur = pre;
        for (int i = 0; i <= deepest; ++i) {
            const auto& info = vgg::plan()[std::size_t(i)];
            Conv2dSpec spec{info.in_c, info.out_c, 3, 3, 1, 1, PadMode::Zero};
            if (tape) tape->conv_in_dims[std::size_t(i)] = {cur.height, cur.width};
            Tensor<T> act = conv2d_forward(cur, kernels_[std::size_t(i)],
                                           biases_[std::size_t(i)], spec);
            relu_inplace(act);
            for (const auto& name : layers)
                if (name == info.relu_name) out.emplace(name, act);
            bool run_pool = (i < deepest) && info.pool_after;
            if (run_pool) {
                auto pooled = maxpool2_forward(act);
                if (tape) {
                    tape->post_relu[std::size_t(i)] = std::move(act);
                    tape->pool_argmax[std::size_t(i)] = std::move(pooled.argmax);
                }
                cur = std::move(pooled.y);
            } else {
                if (tape) tape->post_relu[std::size_t(i)] = act;
                cur = std::move(act);
            }
            if (tape) tape->executed = i + 1;
        }
        return out;
    }

    // Backpropagates per-layer gradients (on the returned feature maps) to
    // the preprocessed input image.
    Tensor<T> backward(const Tape& tape, const FeatureDict<T>& layer_grads) const {
        if (tape.executed == 0) throw Error("vgg backward: empty tape");
        int d = tape.executed - 1;
        for (const auto& [name, g] : layer_grads) {
            int idx = vgg::conv_index_of_relu(name);
            if (idx > d) throw Error("vgg backward: gradient for layer beyond tape");
            (void)g;
        }
        // Gradient w.r.t. the post-pool output of stage i, flowing backward.
        Tensor<T> grad_out;  // empty == all zeros
        for (int i = d; i >= 0; --i) {
            const auto& info = vgg::plan()[std::size_t(i)];
            const Tensor<T>& act = tape.post_relu[std::size_t(i)];
            Tensor<T> grad_act;
            bool pooled = !tape.pool_argmax[std::size_t(i)].empty();
            if (grad_out.v.empty()) {
                grad_act = Tensor<T>(act.channels, act.height, act.width);
            } else if (pooled) {
                grad_act = maxpool2_backward(grad_out, tape.pool_argmax[std::size_t(i)],
                                             act.height, act.width);
            } else {
                grad_act = std::move(grad_out);
            }
            auto it = layer_grads.find(info.relu_name);
            if (it != layer_grads.end()) {
                if (!it->second.same_shape(grad_act))
                    throw ShapeError(std::string("vgg backward: gradient shape mismatch at ") +
                                     info.relu_name);
                for (std::size_t j = 0; j < grad_act.v.size(); ++j)
                    grad_act.v[j] += it->second.v[j];
            }
            Tensor<T> dz = relu_backward(act, grad_act);
            auto [in_h, in_w] = tape.conv_in_dims[std::size_t(i)];
            Conv2dSpec spec{info.in_c, info.out_c, 3, 3, 1, 1, PadMode::Zero};
            grad_out = std::move(conv2d_backward(Tensor<T>(), dz, kernels_[std::size_t(i)],
                                                 spec, in_h, in_w, true, false)
                                     .dx);
        }
        return grad_out;
    }

    // Forward shape law: in group g the spatial dims are the input's after
    // g-1 floor-halvings.
    static std::pair<int, int> layer_dims(const std::string& relu_name, int h, int w) {
        int g = vgg::group_of_relu(relu_name);
        for (int i = 1; i < g; ++i) {
            h /= 2;
            w /= 2;
        }
        return {h, w};
    }

private:
    void check_min_size(const Tensor<T>& pre, int deepest) const {
        int g = vgg::plan()[std::size_t(deepest)].group;
        int need = 1 << (g - 1);
        if (pre.height < need || pre.width < need)
            throw ShapeError("image too small: " + std::to_string(pre.width) + "x" +
                             std::to_string(pre.height) + " input cannot reach " +
                             vgg::plan()[std::size_t(deepest)].relu_name +
                             " (needs at least " + std::to_string(need) + " per side)");
    }

    std::vector<std::vector<T>> kernels_;
    std::vector<std::vector<T>> biases_;
    std::array<T, 3> mean_{};
    std::array<T, 3> stdev_{};
    std::string digest_;
};

}  // namespace xstyle
