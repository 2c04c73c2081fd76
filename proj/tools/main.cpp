// xstyle command-line tool: train, stylize, optimize, restyle-assets,
// benchmark, inspect, targets. Every subcommand is a thin adapter over the
// library; no numerics live here.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <iostream>

#include "xstyle/xstyle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bare model names are also looked up under $XSTYLE_MODEL_DIR.
fs::path resolve_model(const std::string& arg) {
    fs::path p = arg;
    if (fs::exists(p)) return p;
    if (p.is_relative() && !p.has_parent_path()) {
        if (const char* dir = std::getenv("XSTYLE_MODEL_DIR")) {
            for (fs::path cand : {fs::path(dir) / p, fs::path(dir) / (arg + ".xsc")})
                if (fs::exists(cand)) return cand;
        }
    }
    return p;
}

std::vector<std::pair<int, int>> parse_sizes(const std::string& text) {
    std::vector<std::pair<int, int>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto x = item.find('x');
        if (x == std::string::npos)
            throw xstyle::ConfigError("expected WxH, got '" + item + "'");
        out.emplace_back(std::stoi(item.substr(0, x)), std::stoi(item.substr(x + 1)));
    }
    if (out.empty()) throw xstyle::ConfigError("no sizes given");
    return out;
}

xstyle::LayerSet parse_layers(const std::string& text) {
    xstyle::LayerSet out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    if (out.empty()) throw xstyle::ConfigError("no layers given");
    return out;
}

struct WeightFlags {
    std::string content, texture, structure;
    double tv = -1.0;

    void apply(xstyle::LossWeights& w) const {
        if (!content.empty()) w.content = xstyle::parse_layer_weights(content);
        if (!texture.empty()) w.texture = xstyle::parse_layer_weights(texture);
        if (!structure.empty()) w.structure = xstyle::parse_pair_weights(structure);
        if (tv >= 0.0) w.tv = tv;
    }

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--content-weight", content, "content layer weights, layer=w[,...]");
        cmd->add_option("--texture-weight", texture, "texture layer weights, layer=w[,...]");
        cmd->add_option("--structure-weight", structure,
                        "structure pair weights, l1xl2=w[,...]");
        cmd->add_option("--tv-weight", tv, "total variation weight");
    }
};

json breakdown_json(const xstyle::LossBreakdown& b) {
    return json{{"content", b.content},
                {"texture", b.texture},
                {"structure", b.structure},
                {"tv", b.tv},
                {"total", b.total}};
}

// ---------------------------------------------------------------------------
int run_train(const xstyle::TrainingConfig& cfg, const WeightFlags& wf, bool json_out) {
    xstyle::TrainingConfig final_cfg = cfg;
    wf.apply(final_cfg.weights);
    auto report = xstyle::train(final_cfg);

    if (json_out) {
        json j;
        j["steps"] = report.steps.size();
        j["wall_seconds"] = report.wall_seconds;
        j["steps_per_second"] = report.steps_per_second;
        j["images_seen"] = report.images_seen;
        j["log"] = report.log_path.string();
        j["final_checkpoint"] = report.final_checkpoint.string();
        if (!report.steps.empty()) {
            j["first_loss"] = breakdown_json(report.steps.front().loss);
            j["final_loss"] = breakdown_json(report.steps.back().loss);
        }
        j["checkpoints"] = json::array();
        for (const auto& c : report.checkpoints)
            j["checkpoints"].push_back({{"path", c.path.string()},
                                        {"step", c.step},
                                        {"elapsed_seconds", c.elapsed_seconds}});
        j["warnings"] = report.warnings;
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "trained " << report.steps.size() << " steps in " << report.wall_seconds
                  << " s";
        if (!report.steps.empty())
            std::cout << "; total loss " << report.steps.front().loss.total << " -> "
                      << report.steps.back().loss.total;
        std::cout << "\nfinal checkpoint: " << report.final_checkpoint.string() << "\n";
        for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    }
    return 0;
}

int run_stylize(const std::string& model, const std::string& in, const std::string& out,
                bool json_out) {
    auto ckpt = xstyle::load_checkpoint<float>(resolve_model(model));
    xstyle::Image img = xstyle::load_image(in);
    xstyle::Image styled = xstyle::stylize(ckpt, img);
    xstyle::save_image(out, styled);
    if (json_out) {
        json j{{"input", in},
               {"output", out},
               {"width", styled.width},
               {"height", styled.height},
               {"alpha_preserved", styled.has_alpha()},
               {"style_id", ckpt.meta.style_id},
               {"checkpoint_step", ckpt.meta.step}};
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "wrote " << out << " (" << styled.width << "x" << styled.height
                  << (styled.has_alpha() ? ", alpha preserved" : "") << ")\n";
    }
    return 0;
}

int run_optimize(const std::string& vgg_path, const std::string& style,
                 const std::string& in, const std::string& out, int iters, double step,
                 int content_size, const WeightFlags& wf, bool json_out) {
    auto weights = xstyle::LossWeights::defaults();
    wf.apply(weights);
    xstyle::LossNetwork<float> net(xstyle::vgg::load_weights(vgg_path));
    xstyle::Image content = xstyle::load_image(in);
    if (content_size > 0) content = xstyle::resize_shorter_side(content, content_size);
    xstyle::Image style_img = xstyle::load_image(style);

    auto res = xstyle::optimize_image(xstyle::image_to_tensor<float>(content),
                                      xstyle::image_to_tensor<float>(style_img), net, weights,
                                      iters, step);
    xstyle::save_image(out, xstyle::tensor_to_image(res.image));
    if (json_out) {
        json j{{"output", out},
               {"iters", iters},
               {"initial", breakdown_json(res.trajectory.front())},
               {"final", breakdown_json(res.trajectory.back())}};
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "optimized " << iters << " iters; total loss "
                  << res.trajectory.front().total << " -> " << res.trajectory.back().total
                  << "\nwrote " << out << "\n";
    }
    return 0;
}

int run_restyle_assets(const std::string& model, const std::string& in,
                       const std::string& out, bool overwrite,
                       const std::string& report_path, bool json_out) {
    auto ckpt = xstyle::load_checkpoint<float>(resolve_model(model));
    xstyle::RestyleOptions opts;
    opts.overwrite = overwrite;
    auto report = xstyle::restyle_assets(in, out, ckpt.params, opts);
    if (!report_path.empty()) report.write_jsonl(report_path);
    if (json_out) {
        json j{{"restyled", report.restyled},
               {"copied_through", report.copied},
               {"failed", report.failed}};
        j["files"] = json::array();
        for (const auto& r : report.files) {
            json f{{"file", r.relative.generic_string()},
                   {"status", xstyle::asset_status_name(r.status)}};
            if (!r.reason.empty()) f["reason"] = r.reason;
            j["files"].push_back(f);
        }
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "restyled " << report.restyled << ", copied " << report.copied
                  << ", failed " << report.failed << "\n";
        for (const auto& r : report.files)
            if (r.status == xstyle::AssetStatus::Failed)
                std::cerr << "failed: " << r.relative.generic_string() << " (" << r.reason
                          << ")\n";
    }
    return 0;
}

int run_benchmark(const std::string& model, const std::string& sizes_text, int runs,
                  bool json_out) {
    auto ckpt = xstyle::load_checkpoint<float>(resolve_model(model));
    auto sizes = parse_sizes(sizes_text);
    auto report = xstyle::benchmark(ckpt.params, sizes, runs);
    if (json_out) {
        json j{{"hardware", report.hardware}, {"runs", report.runs}};
        j["rows"] = json::array();
        for (const auto& r : report.rows)
            j["rows"].push_back({{"width", r.width},
                                 {"height", r.height},
                                 {"mean_ms", r.mean_ms},
                                 {"stddev_ms", r.stddev_ms},
                                 {"per_pixel_us", r.per_pixel_us},
                                 {"samples_ms", r.samples_ms}});
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "hardware: " << report.hardware << "\n";
        for (const auto& r : report.rows)
            std::cout << r.width << "x" << r.height << ": " << r.mean_ms << " ms +/- "
                      << r.stddev_ms << " (" << r.per_pixel_us << " us/pixel, " << report.runs
                      << " runs)\n";
    }
    return 0;
}

int run_inspect(const std::string& vgg_path, const std::string& in,
                const std::string& layers_text, const std::string& out_dir, bool json_out) {
    xstyle::LossNetwork<float> net(xstyle::vgg::load_weights(vgg_path));
    xstyle::Image img = xstyle::load_image(in);
    auto layers = parse_layers(layers_text);
    auto maps = xstyle::inspect_activations(net, xstyle::image_to_tensor<float>(img), layers);

    fs::create_directories(out_dir);
    std::string stem = fs::path(in).stem().string();
    json j;
    for (const auto& [name, mag] : maps) {
        fs::path out_path = fs::path(out_dir) / (stem + "_" + name + ".png");
        xstyle::save_png(out_path, xstyle::magnitude_to_image(mag));
        double mean = 0;
        for (float v : mag.v) mean += v;
        mean /= double(mag.spatial_size());
        if (json_out)
            j[name] = {{"file", out_path.string()},
                       {"width", mag.width},
                       {"height", mag.height},
                       {"mean_magnitude", mean}};
        else
            std::cout << name << ": " << mag.width << "x" << mag.height << " -> "
                      << out_path.string() << "\n";
    }
    if (json_out) std::cout << j.dump(2) << "\n";
    return 0;
}

int run_targets(const std::string& vgg_path, const std::string& style,
                const std::string& out, int style_size, const std::string& style_id,
                const WeightFlags& wf, bool json_out) {
    auto weights = xstyle::LossWeights::defaults();
    wf.apply(weights);
    xstyle::LossNetwork<float> net(xstyle::vgg::load_weights(vgg_path));
    xstyle::Image style_img = xstyle::load_image(style);
    if (style_size > 0 && std::min(style_img.height, style_img.width) > style_size)
        style_img = xstyle::resize_shorter_side(style_img, style_size);
    std::string id = style_id.empty() ? fs::path(style).stem().string() : style_id;
    auto targets = xstyle::compute_style_targets(net, xstyle::image_to_tensor<float>(style_img),
                                                 weights, id);
    xstyle::save_style_targets(out, targets);
    if (json_out) {
        json j{{"output", out},
               {"style_id", targets.style_id},
               {"source_digest", targets.source_digest},
               {"source_size", {targets.source_w, targets.source_h}}};
        for (const auto& [k, g] : targets.grams) j["grams"][k] = g.dim;
        for (const auto& [k, g] : targets.cross_grams) j["cross_grams"][k] = g.dim;
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "wrote " << out << " (" << targets.grams.size() << " grams, "
                  << targets.cross_grams.size() << " cross-grams)\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"xstyle: feed-forward style transfer with cross-layer structure preservation"};
    app.require_subcommand(1);

    // train; CLI flags take precedence over the config file.
    auto* train = app.add_subcommand("train", "train a transformer for one style");
    std::string tr_config;
    WeightFlags tr_wf;
    bool tr_json = false;
    std::string tr_style, tr_corpus, tr_out, tr_vgg, tr_style_id, tr_precision;
    std::int64_t tr_steps = 0, tr_ckpt_every = 0;
    double tr_seconds = 0, tr_lr = 0;
    int tr_crop = 0, tr_batch = 0, tr_workers = 0, tr_style_size = 0;
    int tr_base = 0, tr_res = 0, tr_edge = 0, tr_core = 0;
    std::uint64_t tr_seed = 0;
    train->add_option("--config", tr_config, "key = value config file");
    train->add_option("--style", tr_style, "style image path");
    train->add_option("--corpus", tr_corpus, "training image directory");
    train->add_option("--out", tr_out, "output directory");
    train->add_option("--vgg", tr_vgg, "VGG weight container");
    train->add_option("--steps", tr_steps, "max optimization steps");
    train->add_option("--seconds", tr_seconds, "wall-clock budget, 0 = unlimited");
    train->add_option("--crop", tr_crop, "training crop size");
    train->add_option("--batch", tr_batch, "batch size");
    train->add_option("--lr", tr_lr, "learning rate");
    train->add_option("--seed", tr_seed, "init/crop seed");
    train->add_option("--checkpoint-every", tr_ckpt_every, "checkpoint cadence");
    train->add_option("--workers", tr_workers, "prefetch workers (0 or 1)");
    train->add_option("--style-size", tr_style_size, "style shorter-side resize, 0 = native");
    train->add_option("--style-id", tr_style_id, "style identity tag");
    train->add_option("--precision", tr_precision, "float32 or float64");
    train->add_option("--base-width", tr_base, "transformer base width");
    train->add_option("--residual-blocks", tr_res, "residual blocks");
    train->add_option("--edge-kernel", tr_edge, "first/last kernel size");
    train->add_option("--core-kernel", tr_core, "inner kernel size");
    tr_wf.add_flags(train);
    train->add_flag("--json", tr_json, "machine-readable output");

    // stylize
    auto* stylize = app.add_subcommand("stylize", "apply a trained checkpoint to an image");
    std::string st_model, st_in, st_out;
    bool st_json = false;
    stylize->add_option("--model", st_model, "checkpoint path or name in $XSTYLE_MODEL_DIR")
        ->required();
    stylize->add_option("--in", st_in, "input image")->required();
    stylize->add_option("--out", st_out, "output image")->required();
    stylize->add_flag("--json", st_json, "machine-readable output");

    // optimize
    auto* optimize = app.add_subcommand(
        "optimize", "checkpoint-free iterative stylization (slow, for verification)");
    std::string op_vgg, op_style, op_in, op_out;
    int op_iters = 200, op_size = 0;
    double op_step = 2e-3;
    WeightFlags op_wf;
    bool op_json = false;
    optimize->add_option("--vgg", op_vgg, "VGG weight container")->required();
    optimize->add_option("--style", op_style, "style image")->required();
    optimize->add_option("--in", op_in, "content image")->required();
    optimize->add_option("--out", op_out, "output image")->required();
    optimize->add_option("--iters", op_iters, "gradient iterations");
    optimize->add_option("--step", op_step, "initial step size");
    optimize->add_option("--content-size", op_size, "content shorter-side resize, 0 = native");
    op_wf.add_flags(optimize);
    optimize->add_flag("--json", op_json, "machine-readable output");

    // restyle-assets
    auto* assets = app.add_subcommand("restyle-assets",
                                      "restyle a graphical asset directory, preserving alpha");
    std::string as_model, as_in, as_out, as_report;
    bool as_overwrite = false, as_json = false;
    assets->add_option("--model", as_model, "checkpoint path or name in $XSTYLE_MODEL_DIR")
        ->required();
    assets->add_option("--in", as_in, "input asset directory")->required();
    assets->add_option("--out", as_out, "output asset directory")->required();
    assets->add_flag("--overwrite", as_overwrite, "allow writing into a non-empty directory");
    assets->add_option("--report", as_report, "write a line-delimited report here");
    assets->add_flag("--json", as_json, "machine-readable output");

    // benchmark
    auto* bench = app.add_subcommand("benchmark", "time forward passes at given sizes");
    std::string be_model, be_sizes = "512x288,1920x1080";
    int be_runs = 5;
    bool be_json = false;
    bench->add_option("--model", be_model, "checkpoint path or name in $XSTYLE_MODEL_DIR")
        ->required();
    bench->add_option("--sizes", be_sizes, "comma-separated WxH list");
    bench->add_option("--runs", be_runs, "timed runs per size (>= 5)");
    bench->add_flag("--json", be_json, "machine-readable output");

    // inspect
    auto* inspect = app.add_subcommand("inspect",
                                       "export per-layer activation magnitude maps");
    std::string in_vgg, in_in, in_layers = "relu1_1,relu3_1", in_out = ".";
    bool in_json = false;
    inspect->add_option("--vgg", in_vgg, "VGG weight container")->required();
    inspect->add_option("--in", in_in, "input image")->required();
    inspect->add_option("--layers", in_layers, "comma-separated relu layer names");
    inspect->add_option("--out", in_out, "output directory for magnitude maps");
    inspect->add_flag("--json", in_json, "machine-readable output");

    // targets
    auto* targets = app.add_subcommand("targets", "precompute style targets to a container");
    std::string tg_vgg, tg_style, tg_out, tg_id;
    int tg_size = 256;
    WeightFlags tg_wf;
    bool tg_json = false;
    targets->add_option("--vgg", tg_vgg, "VGG weight container")->required();
    targets->add_option("--style", tg_style, "style image")->required();
    targets->add_option("--out", tg_out, "output container path")->required();
    targets->add_option("--style-size", tg_size, "style shorter-side resize, 0 = native");
    targets->add_option("--style-id", tg_id, "style identity tag");
    tg_wf.add_flags(targets);
    targets->add_flag("--json", tg_json, "machine-readable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) {
            xstyle::TrainingConfig cfg;
            if (!tr_config.empty()) cfg = xstyle::parse_training_config(tr_config);
            if (train->count("--style")) cfg.style_path = tr_style;
            if (train->count("--corpus")) cfg.corpus_dir = tr_corpus;
            if (train->count("--out")) cfg.out_dir = tr_out;
            if (train->count("--vgg")) cfg.vgg_weights = tr_vgg;
            if (train->count("--steps")) cfg.max_steps = tr_steps;
            if (train->count("--seconds")) cfg.max_seconds = tr_seconds;
            if (train->count("--crop")) cfg.crop_size = tr_crop;
            if (train->count("--batch")) cfg.batch_size = tr_batch;
            if (train->count("--lr")) cfg.learning_rate = tr_lr;
            if (train->count("--seed")) cfg.seed = tr_seed;
            if (train->count("--checkpoint-every")) cfg.checkpoint_every = tr_ckpt_every;
            if (train->count("--workers")) cfg.workers = tr_workers;
            if (train->count("--style-size")) cfg.style_size = tr_style_size;
            if (train->count("--style-id")) cfg.style_id = tr_style_id;
            if (train->count("--precision")) cfg.precision = tr_precision;
            if (train->count("--base-width")) cfg.manifest.base_width = tr_base;
            if (train->count("--residual-blocks")) cfg.manifest.residual_blocks = tr_res;
            if (train->count("--edge-kernel")) cfg.manifest.edge_kernel = tr_edge;
            if (train->count("--core-kernel")) cfg.manifest.core_kernel = tr_core;
            return run_train(cfg, tr_wf, tr_json);
        }
        if (stylize->parsed()) return run_stylize(st_model, st_in, st_out, st_json);
        if (optimize->parsed())
            return run_optimize(op_vgg, op_style, op_in, op_out, op_iters, op_step, op_size,
                                op_wf, op_json);
        if (assets->parsed())
            return run_restyle_assets(as_model, as_in, as_out, as_overwrite, as_report,
                                      as_json);
        if (bench->parsed()) return run_benchmark(be_model, be_sizes, be_runs, be_json);
        if (inspect->parsed()) return run_inspect(in_vgg, in_in, in_layers, in_out, in_json);
        if (targets->parsed())
            return run_targets(tg_vgg, tg_style, tg_out, tg_size, tg_id, tg_wf, tg_json);
    } catch (const xstyle::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
