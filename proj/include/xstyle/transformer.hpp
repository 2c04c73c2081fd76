#pragma once

// The trainable feed-forward image transformation network: reflection-padded
// conv encoder (stride-2 downsamples), residual core, nearest-neighbor
// upsample decoder, sigmoid-bounded output. Instance norm follows every conv
// except the last. The manifest keeps block count and widths configurable.

#include <string>
#include <vector>

#include "xstyle/common.hpp"
#include "xstyle/nn.hpp"
#include "xstyle/tensor.hpp"

namespace xstyle {

struct TransformerManifest {
    int base_width = 32;      // encoder widths: base, 2*base, 4*base
    int residual_blocks = 5;
    int edge_kernel = 9;      // first and last conv
    int core_kernel = 3;      // everything else

    void validate() const {
        if (base_width < 1 || base_width > 1024)
            throw ConfigError("manifest: base_width out of range");
        if (residual_blocks < 0 || residual_blocks > 64)
            throw ConfigError("manifest: residual_blocks out of range");
        if (edge_kernel < 1 || edge_kernel % 2 == 0 || core_kernel < 1 || core_kernel % 2 == 0)
            throw ConfigError("manifest: kernels must be odd");
    }

    bool operator==(const TransformerManifest&) const = default;

    std::string str() const {
        return "base=" + std::to_string(base_width) +
               ",res=" + std::to_string(residual_blocks) +
               ",edge_k=" + std::to_string(edge_kernel) +
               ",core_k=" + std::to_string(core_kernel);
    }
};

enum class UnitRole { Stem, Down, ResA, ResB, Up, Out };

struct UnitDef {
    UnitRole role;
    Conv2dSpec spec;
    bool has_norm;
};

inline std::vector<UnitDef> transformer_units(const TransformerManifest& m) {
    m.validate();
    const int b1 = m.base_width, b2 = 2 * b1, b4 = 4 * b1;
    const int ek = m.edge_kernel, ck = m.core_kernel;
    auto conv = [](int ic, int oc, int k, int stride) {
        return Conv2dSpec{ic, oc, k, k, stride, k / 2, PadMode::Reflect};
    };
    std::vector<UnitDef> units;
    units.push_back({UnitRole::Stem, conv(3, b1, ek, 1), true});
    units.push_back({UnitRole::Down, conv(b1, b2, ck, 2), true});
    units.push_back({UnitRole::Down, conv(b2, b4, ck, 2), true});
    for (int r = 0; r < m.residual_blocks; ++r) {
        units.push_back({UnitRole::ResA, conv(b4, b4, ck, 1), true});
        units.push_back({UnitRole::ResB, conv(b4, b4, ck, 1), true});
    }
    units.push_back({UnitRole::Up, conv(b4, b2, ck, 1), true});
    units.push_back({UnitRole::Up, conv(b2, b1, ck, 1), true});
    units.push_back({UnitRole::Out, conv(b1, 3, ek, 1), false});
    return units;
}

template <typename T>
struct ConvUnit {
    std::vector<T> w;
    std::vector<T> b;
    std::vector<T> gamma;  // empty when the unit has no norm
    std::vector<T> beta;
};

template <typename T>
struct TransformerParams {
    TransformerManifest manifest;
    std::vector<ConvUnit<T>> units;

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& u : units)
            n += std::int64_t(u.w.size() + u.b.size() + u.gamma.size() + u.beta.size());
        return n;
    }

    bool all_finite() const {
        auto ok = [](const std::vector<T>& v) {
            for (const T& x : v)
                if (!std::isfinite(double(x))) return false;
            return true;
        };
        for (const auto& u : units)
            if (!(ok(u.w) && ok(u.b) && ok(u.gamma) && ok(u.beta))) return false;
        return true;
    }
};

// Variance-scaled (He) conv init, zero biases, identity norm parameters.
// Deterministic per seed.
template <typename T>
TransformerParams<T> init_transformer(const TransformerManifest& m, std::uint64_t seed) {
    auto defs = transformer_units(m);
    TransformerParams<T> p;
    p.manifest = m;
    Rng rng(seed);
    for (const auto& d : defs) {
        ConvUnit<T> u;
        double std_dev = std::sqrt(2.0 / (double(d.spec.in_c) * d.spec.kh * d.spec.kw));
        u.w.resize(d.spec.weight_count());
        for (auto& v : u.w) v = T(rng.normal() * std_dev);
        u.b.assign(std::size_t(d.spec.out_c), T(0));
        if (d.has_norm) {
            u.gamma.assign(std::size_t(d.spec.out_c), T(1));
            u.beta.assign(std::size_t(d.spec.out_c), T(0));
        }
        p.units.push_back(std::move(u));
    }
    return p;
}

template <typename T>
struct TransformerTape {
    int orig_h = 0, orig_w = 0;
    int run_h = 0, run_w = 0;  // padded dims actually forwarded
    std::vector<Tensor<T>> inputs;                 // conv input per unit
    std::vector<InstanceNormCache<T>> in_caches;
    std::vector<Tensor<T>> post;                   // unit output
};

// Single forward pass: output has the input's exact H×W and values in (0,1).
// Sizes that are not multiples of 4 are reflection-padded internally and the
// output is cropped back.
template <typename T>
Tensor<T> transformer_forward(const TransformerParams<T>& params, const Tensor<T>& rgb,
                              TransformerTape<T>* tape = nullptr) {
    if (rgb.channels != 3)
        throw ShapeError("transformer: expected 3-channel input, got " +
                         std::to_string(rgb.channels));
    if (rgb.height < 1 || rgb.width < 1) throw ShapeError("transformer: empty image");
    auto defs = transformer_units(params.manifest);
    if (defs.size() != params.units.size())
        throw ShapeError("transformer: parameter/unit count mismatch");

    const int pad_h = (4 - rgb.height % 4) % 4;
    const int pad_w = (4 - rgb.width % 4) % 4;
    Tensor<T> cur = pad_bottom_right(rgb, pad_h, pad_w);

    if (tape) {
        tape->orig_h = rgb.height;
        tape->orig_w = rgb.width;
        tape->run_h = cur.height;
        tape->run_w = cur.width;
        tape->inputs.assign(defs.size(), Tensor<T>());
        tape->in_caches.assign(defs.size(), InstanceNormCache<T>());
        tape->post.assign(defs.size(), Tensor<T>());
    }

    Tensor<T> skip;  // residual block input, set at ResA and consumed at ResB
    for (std::size_t u = 0; u < defs.size(); ++u) {
        const auto& d = defs[u];
        const auto& pu = params.units[u];
        if (d.role == UnitRole::Up) cur = upsample_nearest(cur, 2);
        if (d.role == UnitRole::ResA) skip = cur;
        if (tape) tape->inputs[u] = cur;
        Tensor<T> t = conv2d_forward(cur, pu.w, pu.b, d.spec);
        if (d.has_norm)
            t = instance_norm_forward(t, pu.gamma, pu.beta, tape ? &tape->in_caches[u] : nullptr);
        switch (d.role) {
            case UnitRole::ResB:
                // conv-norm plus the block input; no relu after the add.
                for (std::size_t i = 0; i < t.v.size(); ++i) t.v[i] += skip.v[i];
                break;
            case UnitRole::Out:
                t = sigmoid_forward(t);
                break;
            default:
                relu_inplace(t);
                break;
        }
        if (tape) tape->post[u] = t;
        cur = std::move(t);
    }

    if (pad_h || pad_w) cur = crop_spatial(cur, rgb.height, rgb.width);
    return cur;
}

template <typename T>
struct TransformerGrads {
    std::vector<ConvUnit<T>> units;  // same layout as params
};

// Backpropagates d(loss)/d(output image) to every parameter.
template <typename T>
TransformerGrads<T> transformer_backward(const TransformerParams<T>& params,
                                         const TransformerTape<T>& tape,
                                         const Tensor<T>& dy_out) {
    auto defs = transformer_units(params.manifest);
    if (tape.post.size() != defs.size()) throw Error("transformer backward: bad tape");
    TransformerGrads<T> grads;
    grads.units.resize(defs.size());

    Tensor<T> dcur = uncrop_spatial(dy_out, tape.run_h, tape.run_w);
    Tensor<T> pending_skip;

    for (int u = int(defs.size()) - 1; u >= 0; --u) {
        const auto& d = defs[std::size_t(u)];
        const auto& pu = params.units[std::size_t(u)];
        auto& gu = grads.units[std::size_t(u)];

        Tensor<T> g;
        switch (d.role) {
            case UnitRole::Out:
                g = sigmoid_backward(tape.post[std::size_t(u)], dcur);
                break;
            case UnitRole::ResB:
                pending_skip = dcur;  // flows around the block
                g = std::move(dcur);
                break;
            default:
                g = relu_backward(tape.post[std::size_t(u)], dcur);
                break;
        }
        if (d.has_norm) {
            auto ing = instance_norm_backward(g, tape.in_caches[std::size_t(u)], pu.gamma);
            g = std::move(ing.dx);
            gu.gamma = std::move(ing.dgamma);
            gu.beta = std::move(ing.dbeta);
        }
        const Tensor<T>& input = tape.inputs[std::size_t(u)];
        auto cg = conv2d_backward(input, g, pu.w, d.spec, input.height, input.width,
                                  /*need_dx=*/u > 0, /*need_dw=*/true);
        gu.w = std::move(cg.dw);
        gu.b = std::move(cg.db);
        if (u == 0) break;
        dcur = std::move(cg.dx);
        if (d.role == UnitRole::Up) dcur = upsample_nearest_backward(dcur, 2);
        if (d.role == UnitRole::ResA && !pending_skip.v.empty()) {
            for (std::size_t i = 0; i < dcur.v.size(); ++i) dcur.v[i] += pending_skip.v[i];
            pending_skip = Tensor<T>();
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------
struct CheckpointMeta {
    std::string style_id;
    std::uint64_t step = 0;
    double wall_seconds = 0.0;
    std::string config_digest;
};

template <typename T>
struct TransformerCheckpoint {
    TransformerParams<T> params;
    CheckpointMeta meta;
};

inline constexpr char kCheckpointMagic[9] = "XSTCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TransformerParams<T>& params,
                     const CheckpointMeta& meta) {
    write_file_atomic(path, [&](std::ostream& os) {
        BinaryWriter bw(os);
        bw.bytes(kCheckpointMagic, 8);
        bw.u32(kCheckpointVersion);
        bw.str(meta.style_id);
        bw.u64(meta.step);
        bw.f64(meta.wall_seconds);
        bw.str(meta.config_digest);
        bw.u32(std::uint32_t(params.manifest.base_width));
        bw.u32(std::uint32_t(params.manifest.residual_blocks));
        bw.u32(std::uint32_t(params.manifest.edge_kernel));
        bw.u32(std::uint32_t(params.manifest.core_kernel));
        bw.u32(std::uint32_t(params.units.size()));
        auto write_arr = [&](const std::vector<T>& v) {
            bw.u64(v.size());
            for (const T& x : v) bw.f32(float(x));
        };
        for (const auto& u : params.units) {
            write_arr(u.w);
            write_arr(u.b);
            write_arr(u.gamma);
            write_arr(u.beta);
        }
        bw.write_digest_tail();
    });
}

template <typename T = float>
TransformerCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint not found: " + path.string());
    BinaryReader br(is, path.filename().string());
    char magic[8];
    br.bytes(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError(path.string() + ": not a transformer checkpoint");
    if (br.u32() != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version");

    TransformerCheckpoint<T> c;
    c.meta.style_id = br.str(4096);
    c.meta.step = br.u64();
    c.meta.wall_seconds = br.f64();
    c.meta.config_digest = br.str(128);
    c.params.manifest.base_width = int(br.u32());
    c.params.manifest.residual_blocks = int(br.u32());
    c.params.manifest.edge_kernel = int(br.u32());
    c.params.manifest.core_kernel = int(br.u32());
    c.params.manifest.validate();

    auto defs = transformer_units(c.params.manifest);
    std::uint32_t n_units = br.u32();
    if (n_units != defs.size())
        throw FormatError(path.string() + ": manifest mismatch: file has " +
                          std::to_string(n_units) + " units, manifest " +
                          c.params.manifest.str() + " implies " +
                          std::to_string(defs.size()));
    auto read_arr = [&](std::vector<T>& v, std::size_t expect, const char* what,
                        std::size_t unit) {
        std::uint64_t n = br.u64();
        if (n != expect)
            throw FormatError(path.string() + ": manifest mismatch: unit " +
                              std::to_string(unit) + " " + what + " has " + std::to_string(n) +
                              " values, manifest implies " + std::to_string(expect));
        v.resize(n);
        for (auto& x : v) x = T(br.f32());
    };
    c.params.units.resize(defs.size());
    for (std::size_t u = 0; u < defs.size(); ++u) {
        const auto& d = defs[u];
        read_arr(c.params.units[u].w, d.spec.weight_count(), "kernel", u);
        read_arr(c.params.units[u].b, std::size_t(d.spec.out_c), "bias", u);
        std::size_t norm_n = d.has_norm ? std::size_t(d.spec.out_c) : 0;
        read_arr(c.params.units[u].gamma, norm_n, "gamma", u);
        read_arr(c.params.units[u].beta, norm_n, "beta", u);
    }
    br.check_digest_tail();
    return c;
}

// Loads and additionally insists on a specific architecture.
template <typename T = float>
TransformerCheckpoint<T> load_checkpoint_expect(const std::filesystem::path& path,
                                                const TransformerManifest& expected) {
    auto c = load_checkpoint<T>(path);
    if (!(c.params.manifest == expected))
        throw FormatError(path.string() + ": manifest mismatch: checkpoint has " +
                          c.params.manifest.str() + ", expected " + expected.str());
    return c;
}

}  // namespace xstyle
