// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exit code is the number of
// failed criteria.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "xstyle/xstyle.hpp"

namespace fs = std::filesystem;
using namespace xstyle;

namespace {

fs::path scratch_root() {
    auto d = fs::temp_directory_path() / "xstyle_acceptance";
    return d;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// ---------------------------------------------------------------------------
// 1. Gram / cross-gram oracle equivalence: 100 random maps each, brute-force
//    triple-loop oracles, 1e-10 absolute.
// ---------------------------------------------------------------------------
Outcome criterion1() {
    Rng rng(12001);
    double max_err = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        int c = 1 + int(rng.uniform_index(8));           // C <= 8
        int h = 1 + int(rng.uniform_index(8));
        int w = 1 + int(rng.uniform_index(8));           // N <= 64
        auto f = oracle::random_map<double>(rng, c, h, w, -2.0, 2.0);
        auto g = gram(f);
        auto ref = oracle::gram_brute(f);
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < c; ++j)
                max_err = std::max(max_err,
                                   std::fabs(g.at(i, j) - ref[std::size_t(i) * c + j]));
    }
    for (int trial = 0; trial < 100; ++trial) {
        int c1 = 1 + int(rng.uniform_index(4));
        int mult = 1 + int(rng.uniform_index(2));
        int c2 = c1 * mult;                              // C <= 8
        int h2 = 1 + int(rng.uniform_index(3));
        int w2 = 1 + int(rng.uniform_index(3));
        int sh = 1 + int(rng.uniform_index(3));
        int sw = 1 + int(rng.uniform_index(2));          // N <= 54
        auto lo = oracle::random_map<double>(rng, c1, h2 * sh, w2 * sw);
        auto hi = oracle::random_map<double>(rng, c2, h2, w2);
        auto g = cross_gram(lo, hi);
        auto ref = oracle::cross_gram_brute(lo, hi);
        for (int i = 0; i < c2; ++i)
            for (int j = 0; j < c2; ++j)
                max_err = std::max(max_err,
                                   std::fabs(g.at(i, j) - ref[std::size_t(i) * c2 + j]));
    }
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "100 gram + 100 cross-gram maps vs triple-loop oracles, max abs err %.2e"
                  " (tol 1e-10)", max_err);
    return {max_err <= 1e-10, buf};
}

// ---------------------------------------------------------------------------
// 2. Gradient fidelity: analytic d(total)/dy vs central differences, h=1e-4,
//    rel err <= 1e-3 on >= 99% of the 192 coordinates of an 8x8x3 image,
//    64-bit mode, default weights.
// ---------------------------------------------------------------------------
Outcome criterion2() {
    LossNetwork<double> net(fixtures::vgg_weights());
    Rng rng(1);
    auto x = fixtures::random_rgb<double>(rng, 8, 8, 0.0, 1.0);
    auto y = fixtures::random_rgb<double>(rng, 8, 8, 0.0, 1.0);
    auto style = fixtures::random_rgb<double>(rng, 16, 16, 0.0, 1.0);
    auto w = LossWeights::defaults();
    auto targets = compute_style_targets(net, style, w);
    auto res = total_loss(x, targets, y, net, w, true);

    double gmax = 0.0;
    for (double g : res.dy.v) gmax = std::max(gmax, std::fabs(g));
    const double h = 1e-4;
    int ok = 0;
    const int n = int(y.v.size());
    for (int i = 0; i < n; ++i) {
        double y0 = y.v[std::size_t(i)];
        y.v[std::size_t(i)] = y0 + h;
        double up = total_loss(x, targets, y, net, w).breakdown.total;
        y.v[std::size_t(i)] = y0 - h;
        double dn = total_loss(x, targets, y, net, w).breakdown.total;
        y.v[std::size_t(i)] = y0;
        double num = (up - dn) / (2 * h);
        if (oracle::rel_err(num, res.dy.v[std::size_t(i)], 1e-4 * gmax) <= 1e-3) ++ok;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "%d/%d coordinates within 1e-3 of central differences (h=1e-4, need >=99%%)",
                  ok, n);
    return {double(ok) >= 0.99 * n, buf};
}

// ---------------------------------------------------------------------------
// 3. Zero-at-target suite, exact.
// ---------------------------------------------------------------------------
Outcome criterion3() {
    LossNetwork<float> net(fixtures::vgg_weights());
    Rng rng(12003);
    auto f = oracle::random_map<float>(rng, 5, 6, 7);
    bool content_zero = content_loss(f, f) == 0.0;

    auto style = fixtures::stripey_style(32, 4);
    auto w = LossWeights::defaults();
    auto targets = compute_style_targets(net, style, w);
    auto feats = net.extract_features(net.preprocess(style), w.all_layers());
    bool texture_zero = texture_loss(targets, feats, w) == 0.0;
    bool structure_zero = structure_loss(targets, feats, w) == 0.0;

    Tensor<float> constant(3, 17, 13);
    constant.fill(0.4f);
    bool tv_zero = tv_loss(constant) == 0.0;

    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "content(F,F)=%s texture@style=%s structure@style=%s tv(const)=%s (exact)",
                  content_zero ? "0" : "NONZERO", texture_zero ? "0" : "NONZERO",
                  structure_zero ? "0" : "NONZERO", tv_zero ? "0" : "NONZERO");
    return {content_zero && texture_zero && structure_zero && tv_zero, buf};
}

// ---------------------------------------------------------------------------
// Shared training fixture setup.
// ---------------------------------------------------------------------------
fs::path write_vgg_container(const fs::path& dir) {
    fs::create_directories(dir);
    auto p = dir / "vgg.xsw";
    if (!fs::exists(p)) vgg::save_weights(p, fixtures::vgg_weights());
    return p;
}

// ---------------------------------------------------------------------------
// 4. Overfit smoke training: single-image corpus, 200 steps, 128x128 crops;
//    50-step moving average at step 200 < 0.5x the average over steps 1-50.
// ---------------------------------------------------------------------------
Outcome criterion4() {
    auto root = scratch_root() / "overfit";
    fs::remove_all(root);
    fs::create_directories(root / "corpus");
    Rng rng(44);
    xstyle::save_png(root / "corpus" / "only.png",
                     tensor_to_image(fixtures::blobby_rgb<float>(rng, 256, 256)));
    xstyle::save_png(root / "style.png", tensor_to_image(fixtures::stripey_style(256, 5)));

    TrainingConfig cfg;
    cfg.style_path = root / "style.png";
    cfg.corpus_dir = root / "corpus";
    cfg.out_dir = root / "out";
    cfg.vgg_weights = write_vgg_container(scratch_root());
    cfg.crop_size = 128;
    cfg.style_size = 128;  // gram scale matched to the crop size
    cfg.max_steps = 200;
    cfg.checkpoint_every = 0;
    cfg.seed = 7;
    // The production default (1e-3) descends too slowly to halve the
    // smoothed loss within a 200-step sprint; the smoke run uses 3e-3.
    cfg.learning_rate = 3e-3;

    auto report = train(cfg);
    if (report.steps.size() != 200) return {false, "training did not run 200 steps"};
    double initial = report.moving_average(49, 50);
    double final_ma = report.moving_average(199, 50);
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "50-step moving avg: steps1-50 %.4g -> steps151-200 %.4g (ratio %.3f,"
                  " need < 0.5; vs step-1 value alone the ratio is %.3f)",
                  initial, final_ma, final_ma / initial,
                  final_ma / report.moving_average(0, 50));
    return {final_ma < 0.5 * initial, buf};
}

// ---------------------------------------------------------------------------
// 5. Structure ablation: equal-budget training at gamma in {0, half, full};
//    held-out structure loss ordered full <= half <= zero on >= 70% of 20
//    images and mean(full) < 0.8 * mean(zero).
// ---------------------------------------------------------------------------
Outcome criterion5() {
    auto root = scratch_root() / "ablation";
    fs::remove_all(root);
    fs::create_directories(root / "corpus");
    Rng rng(55);
    for (int i = 0; i < 8; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img%02d.png", i);
        xstyle::save_png(root / "corpus" / name,
                         tensor_to_image(fixtures::blobby_rgb<float>(rng, 128, 128)));
    }
    // Style whose micro-patterns are paired with region colors: the pairing
    // is cross-layer information that per-layer grams cannot express, so the
    // gamma ablation has something real to show at desk scale. Style targets
    // share the 64px crop scale (unnormalized grams grow with N, so a scale
    // mismatch would drown the structure signal in a size term).
    xstyle::save_png(root / "style.png", tensor_to_image(fixtures::structured_style(64, 6)));

    auto train_with_gamma = [&](double scale, const fs::path& out) {
        TrainingConfig cfg;
        cfg.style_path = root / "style.png";
        cfg.corpus_dir = root / "corpus";
        cfg.out_dir = out;
        cfg.vgg_weights = write_vgg_container(scratch_root());
        cfg.crop_size = 64;
        cfg.style_size = 64;
        cfg.max_steps = 400;
        cfg.checkpoint_every = 0;
        cfg.seed = 9;
        cfg.learning_rate = 2e-3;
        cfg.manifest.base_width = 8;
        cfg.manifest.residual_blocks = 2;
        for (auto& [p, g] : cfg.weights.structure) g *= scale;
        auto report = train(cfg);
        return load_checkpoint<float>(report.final_checkpoint).params;
    };
    auto params_full = train_with_gamma(1.0, root / "full");
    auto params_half = train_with_gamma(0.5, root / "half");
    auto params_zero = train_with_gamma(0.0, root / "zero");

    // Fixed measurement: structure loss against the style targets with the
    // full default gammas, on 20 held-out images.
    LossNetwork<float> net(fixtures::vgg_weights());
    auto w = LossWeights::defaults();
    auto style_img = load_image(root / "style.png");
    auto targets = compute_style_targets(net, image_to_tensor<float>(style_img), w);

    int ordered = 0;
    double mean_full = 0, mean_half = 0, mean_zero = 0;
    Rng eval_rng(5005);
    const int n_eval = 20;
    for (int i = 0; i < n_eval; ++i) {
        auto held_out = fixtures::blobby_rgb<float>(eval_rng, 64, 64);
        auto measure = [&](const TransformerParams<float>& params) {
            auto y = transformer_forward(params, held_out);
            auto feats = net.extract_features(net.preprocess(y), w.style_layers());
            return structure_loss(targets, feats, w);
        };
        double sf = measure(params_full);
        double sh = measure(params_half);
        double sz = measure(params_zero);
        if (sf <= sh && sh <= sz) ++ordered;
        mean_full += sf;
        mean_half += sh;
        mean_zero += sz;
    }
    mean_full /= n_eval;
    mean_half /= n_eval;
    mean_zero /= n_eval;

    bool order_ok = ordered >= 14;  // 70% of 20
    bool margin_ok = mean_full < 0.8 * mean_zero;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "full<=half<=zero on %d/20 (need >=14); mean structure loss full %.4g vs"
                  " zero %.4g (ratio %.3f, need < 0.8); half %.4g",
                  ordered, mean_full, mean_zero, mean_full / mean_zero, mean_half);
    return {order_ok && margin_ok, buf};
}

// ---------------------------------------------------------------------------
// 6. Asset pipeline integrity over a 50-file mixed tree, exact.
// ---------------------------------------------------------------------------
Outcome criterion6() {
    auto root = scratch_root() / "assets";
    fs::remove_all(root);
    auto in_dir = root / "in";
    Rng rng(66);

    // 50 files: RGBA PNGs (various sizes incl. tiny), RGB PNGs, JPEGs and
    // non-raster files across nested directories.
    std::vector<std::string> subdirs = {"", "icons", "icons/small", "backgrounds", "meta"};
    for (const auto& s : subdirs) fs::create_directories(in_dir / s);
    int made = 0;
    std::vector<fs::path> rgba_files;
    for (int i = 0; i < 20; ++i) {  // RGBA PNGs
        int side = std::vector<int>{8, 16, 24, 33, 48}[std::size_t(i % 5)];
        Image img(side, side, true);
        for (auto& v : img.rgb) v = float(rng.uniform());
        for (auto& a : img.alpha) a = std::uint8_t(rng.uniform_index(256));
        auto p = in_dir / subdirs[std::size_t(i % subdirs.size())] /
                 ("rgba" + std::to_string(i) + ".png");
        save_png(p, img);
        rgba_files.push_back(p);
        ++made;
    }
    for (int i = 0; i < 10; ++i) {  // RGB PNGs
        Image img(20 + i, 30, false);
        for (auto& v : img.rgb) v = float(rng.uniform());
        save_png(in_dir / subdirs[std::size_t(i % subdirs.size())] /
                     ("rgb" + std::to_string(i) + ".png"),
                 img);
        ++made;
    }
    for (int i = 0; i < 10; ++i) {  // JPEGs
        Image img(32, 24, false);
        for (auto& v : img.rgb) v = float(rng.uniform());
        save_jpeg(in_dir / subdirs[std::size_t(i % subdirs.size())] /
                      ("photo" + std::to_string(i) + ".jpg"),
                  img);
        ++made;
    }
    for (int i = 0; i < 10; ++i) {  // non-raster files
        auto p = in_dir / subdirs[std::size_t(i % subdirs.size())] /
                 ("data" + std::to_string(i) + (i % 2 ? ".xml" : ".bin"));
        std::ofstream os(p, std::ios::binary);
        for (int b = 0; b < 100 + 13 * i; ++b) os.put(char(rng.uniform_index(256)));
        ++made;
    }

    TransformerManifest m;
    m.base_width = 4;
    m.residual_blocks = 1;
    m.edge_kernel = 5;
    auto params = init_transformer<float>(m, 321);
    auto report = restyle_assets(in_dir, root / "out", params);

    bool count_ok = int(report.files.size()) == made && report.failed == 0;
    bool tree_ok = true, alpha_ok = true, copy_ok = true;
    for (const auto& rec : report.files)
        if (!fs::exists(root / "out" / rec.relative)) tree_ok = false;
    for (const auto& p : rgba_files) {
        auto rel = fs::relative(p, in_dir);
        auto in_img = load_png(p);
        auto out_img = load_png(root / "out" / rel);
        if (!out_img.has_alpha() || out_img.alpha != in_img.alpha ||
            out_img.width != in_img.width || out_img.height != in_img.height)
            alpha_ok = false;
    }
    for (const auto& rec : report.files)
        if (rec.status == AssetStatus::CopiedThrough && rec.input_digest != rec.output_digest)
            copy_ok = false;

    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "%d files: restyled %d, copied %d, failed %d; tree %s, alpha %s,"
                  " copy-through %s (all exact)",
                  made, report.restyled, report.copied, report.failed,
                  tree_ok ? "mirrored" : "BROKEN", alpha_ok ? "bit-exact" : "CHANGED",
                  copy_ok ? "byte-identical" : "CHANGED");
    return {count_ok && tree_ok && alpha_ok && copy_ok, buf};
}

// ---------------------------------------------------------------------------
// 7. Throughput scaling: per-pixel time at 512x288 vs 1920x1080 within 3x.
//    Published absolute timings are reference only, never asserted.
// ---------------------------------------------------------------------------
Outcome criterion7() {
    TransformerManifest m;
    m.base_width = 8;
    m.residual_blocks = 2;
    auto params = init_transformer<float>(m, 777);
    auto report = benchmark(params, {{512, 288}, {1920, 1080}}, 5);
    double pp_small = report.rows[0].per_pixel_us;
    double pp_large = report.rows[1].per_pixel_us;
    double ratio = std::max(pp_small, pp_large) / std::min(pp_small, pp_large);
    char buf[240];
    std::snprintf(buf, sizeof buf,
                  "512x288 %.3f ms (%.4f us/px), 1920x1080 %.3f ms (%.4f us/px), per-pixel"
                  " ratio %.2f (need <= 3; reference figures 3.02 ms / 104.02 ms / 0.026"
                  " us/px are hardware-specific, not asserted)",
                  report.rows[0].mean_ms, pp_small, report.rows[1].mean_ms, pp_large, ratio);
    return {ratio <= 3.0, buf};
}

// ---------------------------------------------------------------------------
// 8. Determinism and round-trips: bit-identical loss series for a fixed seed
//    in single-worker mode; checkpoint and style-target containers
//    round-trip bit-exactly.
// ---------------------------------------------------------------------------
Outcome criterion8() {
    auto root = scratch_root() / "determinism";
    fs::remove_all(root);
    fs::create_directories(root / "corpus");
    Rng rng(88);
    for (int i = 0; i < 2; ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "c%d.png", i);
        xstyle::save_png(root / "corpus" / name,
                         tensor_to_image(fixtures::blobby_rgb<float>(rng, 96, 96)));
    }
    xstyle::save_png(root / "style.png", tensor_to_image(fixtures::stripey_style(64, 7)));

    TrainingConfig cfg;
    cfg.style_path = root / "style.png";
    cfg.corpus_dir = root / "corpus";
    cfg.vgg_weights = write_vgg_container(scratch_root());
    cfg.crop_size = 48;
    cfg.max_steps = 8;
    cfg.checkpoint_every = 0;
    cfg.seed = 3;
    cfg.workers = 1;  // single ingestion worker
    cfg.manifest.base_width = 4;
    cfg.manifest.residual_blocks = 1;
    cfg.manifest.edge_kernel = 5;

    cfg.out_dir = root / "runA";
    auto ra = train(cfg);
    cfg.out_dir = root / "runB";
    auto rb = train(cfg);
    bool series_ok = ra.steps.size() == rb.steps.size();
    if (series_ok)
        for (std::size_t i = 0; i < ra.steps.size(); ++i)
            series_ok = series_ok && ra.steps[i].loss.total == rb.steps[i].loss.total &&
                        ra.steps[i].loss.content == rb.steps[i].loss.content &&
                        ra.steps[i].loss.texture == rb.steps[i].loss.texture &&
                        ra.steps[i].loss.structure == rb.steps[i].loss.structure &&
                        ra.steps[i].loss.tv == rb.steps[i].loss.tv;

    // Checkpoint round trip.
    auto ck = load_checkpoint<float>(ra.final_checkpoint);
    auto ck_copy = root / "copy.xsc";
    save_checkpoint(ck_copy, ck.params, ck.meta);
    bool ckpt_bytes_ok =
        read_text_file(ra.final_checkpoint) == read_text_file(ck_copy);
    Rng img_rng(881);
    auto probe = fixtures::random_rgb<float>(img_rng, 32, 32);
    auto y1 = transformer_forward(ck.params, probe);
    auto y2 = transformer_forward(load_checkpoint<float>(ck_copy).params, probe);
    bool ckpt_fwd_ok = y1.v == y2.v;

    // Style targets round trip.
    LossNetwork<float> net(fixtures::vgg_weights());
    auto targets = compute_style_targets(
        net, image_to_tensor<float>(load_image(root / "style.png")), LossWeights::defaults(),
        "acc8");
    auto t1 = root / "t1.xst";
    save_style_targets(t1, targets);
    auto t2 = root / "t2.xst";
    save_style_targets(t2, load_style_targets<float>(t1));
    bool targets_ok = read_text_file(t1) == read_text_file(t2);

    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "loss series (8 steps, 2 runs) %s; checkpoint bytes %s, forward %s;"
                  " style targets bytes %s",
                  series_ok ? "bit-identical" : "DIFFER",
                  ckpt_bytes_ok ? "identical" : "DIFFER",
                  ckpt_fwd_ok ? "bit-identical" : "DIFFER",
                  targets_ok ? "identical" : "DIFFER");
    return {series_ok && ckpt_bytes_ok && ckpt_fwd_ok && targets_ok, buf};
}

// ---------------------------------------------------------------------------
// 9. Outline salience: relu1_1 magnitude over text pixels exceeds the
//    background mean in >= 90% of 20 random text-on-background images.
// ---------------------------------------------------------------------------
Outcome criterion9() {
    LossNetwork<float> net(fixtures::vgg_weights());
    Rng rng(99);
    int hits = 0;
    const int cases = 20;
    for (int t = 0; t < cases; ++t) {
        // Random moderate background, strongly contrasting text color.
        double bg[3], fg[3];
        for (int c = 0; c < 3; ++c) bg[c] = rng.uniform(0.15, 0.85);
        double lum_bg = 0.299 * bg[0] + 0.587 * bg[1] + 0.114 * bg[2];
        bool bright_text = lum_bg < 0.5;
        for (int c = 0; c < 3; ++c)
            fg[c] = bright_text ? rng.uniform(0.85, 1.0) : rng.uniform(0.0, 0.15);

        Tensor<float> img(3, 64, 64);
        for (int c = 0; c < 3; ++c)
            for (std::int64_t i = 0; i < img.spatial_size(); ++i)
                img.plane(c)[i] = float(bg[c]);
        std::vector<std::uint8_t> mask(64 * 64, 0);
        for (int row = 6 + int(rng.uniform_index(4)); row < 58; row += 9 + int(rng.uniform_index(4))) {
            int x = 3 + int(rng.uniform_index(4));
            while (x < 58) {
                int len = 3 + int(rng.uniform_index(6));
                int thick = 1 + int(rng.uniform_index(2));
                for (int dy = 0; dy < thick && row + dy < 63; ++dy)
                    for (int dx = 0; dx < len && x + dx < 61; ++dx) {
                        for (int c = 0; c < 3; ++c) img.at(c, row + dy, x + dx) = float(fg[c]);
                        mask[std::size_t(row + dy) * 64 + x + dx] = 1;
                    }
                x += len + 2 + int(rng.uniform_index(4));
            }
        }

        auto maps = inspect_activations(net, img, {"relu1_1"});
        const auto& m = maps.at("relu1_1");
        double ts = 0, tn = 0, bs = 0, bn = 0;
        for (std::int64_t i = 0; i < m.spatial_size(); ++i) {
            if (mask[std::size_t(i)]) {
                ts += m.v[std::size_t(i)];
                ++tn;
            } else {
                bs += m.v[std::size_t(i)];
                ++bn;
            }
        }
        if (tn > 0 && ts / tn > bs / bn) ++hits;
    }
    char buf[140];
    std::snprintf(buf, sizeof buf,
                  "text-pixel relu1_1 magnitude above background mean in %d/%d cases"
                  " (need >= 18)", hits, cases);
    return {hits >= 18, buf};
}

}  // namespace

int main() {
    fs::remove_all(scratch_root());
    fs::create_directories(scratch_root());

    struct Entry {
        int id;
        const char* name;
        std::function<Outcome()> fn;
    };
    std::vector<Entry> criteria = {
        {1, "gram/cross-gram oracle equivalence", criterion1},
        {2, "gradient fidelity", criterion2},
        {3, "zero-at-target suite", criterion3},
        {4, "overfit smoke training", criterion4},
        {5, "structure ablation ordering", criterion5},
        {6, "asset pipeline integrity", criterion6},
        {7, "throughput scaling", criterion7},
        {8, "determinism and round-trips", criterion8},
        {9, "outline salience", criterion9},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[criterion %d] %s (%.1f s) %s: %s\n", c.id, o.pass ? "PASS" : "FAIL",
                    secs, c.name, o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failures;
    }
    if (failures == 0)
        std::printf("all %zu acceptance criteria passed\n", criteria.size());
    else
        std::printf("%d acceptance criteria FAILED\n", failures);
    return failures;
}
