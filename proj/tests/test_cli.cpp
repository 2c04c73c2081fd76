#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "xstyle/transformer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    auto dir = fixtures::scratch_dir("cli_io");
    auto out_path = dir / ("out" + std::to_string(counter) + ".txt");
    auto err_path = dir / ("err" + std::to_string(counter) + ".txt");
    ++counter;
    std::string cmd = std::string(XSTYLE_CLI_BIN) + " " + args + " > " + out_path.string() +
                      " 2> " + err_path.string();
    int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = xstyle::read_text_file(out_path);
    r.err = xstyle::read_text_file(err_path);
    return r;
}

// One shared on-disk fixture: weights, corpus, style, tiny checkpoint.
struct CliFixture {
    fs::path root;
    fs::path vgg, style, corpus, ckpt;

    CliFixture() {
        root = fixtures::scratch_dir("cli_fixture");
        fs::remove_all(root);
        fs::create_directories(root);
        vgg = root / "vgg.xsw";
        xstyle::vgg::save_weights(vgg, fixtures::vgg_weights());
        fixtures::write_synthetic_corpus(root / "corpus", 2, 48, 5);
        corpus = root / "corpus";
        style = root / "style.png";
        xstyle::save_png(style, xstyle::tensor_to_image(fixtures::stripey_style(48, 3)));

        xstyle::TransformerManifest m;
        m.base_width = 4;
        m.residual_blocks = 1;
        m.edge_kernel = 5;
        auto params = xstyle::init_transformer<float>(m, 123);
        xstyle::CheckpointMeta meta;
        meta.style_id = "cli-style";
        ckpt = root / "model.xsc";
        xstyle::save_checkpoint(ckpt, params, meta);
    }
};

const CliFixture& fixture() {
    static CliFixture f;
    return f;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("stylize writes the output and exits 0; alpha rides through") {
    const auto& f = fixture();
    auto dir = fixtures::scratch_dir("cli_stylize");
    xstyle::Rng rng(1);
    xstyle::Image rgba(24, 24, true);
    for (auto& v : rgba.rgb) v = float(rng.uniform());
    for (auto& a : rgba.alpha) a = std::uint8_t(rng.uniform_index(256));
    xstyle::save_png(dir / "in.png", rgba);

    auto r = run_cli("stylize --model " + f.ckpt.string() + " --in " +
                     (dir / "in.png").string() + " --out " + (dir / "out.png").string() +
                     " --json");
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    auto back = xstyle::load_png(dir / "out.png");
    CHECK(back.width == 24);
    REQUIRE(back.has_alpha());
    CHECK(back.alpha == rgba.alpha);

    auto j = json::parse(r.out);
    CHECK(j.at("alpha_preserved").get<bool>());
    CHECK(j.at("style_id").get<std::string>() == "cli-style");
}

TEST_CASE("train with a missing corpus exits 1 and names the path") {
    const auto& f = fixture();
    auto r = run_cli("train --vgg " + f.vgg.string() + " --style " + f.style.string() +
                     " --corpus /nonexistent/corpus --steps 1");
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("/nonexistent/corpus") != std::string::npos);
}

TEST_CASE("train runs a short job and reports json") {
    const auto& f = fixture();
    auto out_dir = fixtures::scratch_dir("cli_train_out");
    fs::remove_all(out_dir);
    auto r = run_cli("train --vgg " + f.vgg.string() + " --style " + f.style.string() +
                     " --corpus " + f.corpus.string() + " --out " + out_dir.string() +
                     " --steps 1 --crop 32 --base-width 4 --residual-blocks 1"
                     " --edge-kernel 5 --json");
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    auto j = json::parse(r.out);
    CHECK(j.at("steps").get<int>() == 1);
    CHECK(j.at("checkpoints").size() == 2);  // init + final
    CHECK(fs::exists(j.at("final_checkpoint").get<std::string>()));
    CHECK(j.at("final_loss").contains("structure"));
}

TEST_CASE("config file is honored and CLI flags take precedence") {
    const auto& f = fixture();
    auto dir = fixtures::scratch_dir("cli_train_cfg");
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "train.cfg") << "style = " << f.style.string() << "\n"
                                     << "corpus = " << f.corpus.string() << "\n"
                                     << "vgg = " << f.vgg.string() << "\n"
                                     << "out = " << (dir / "out_cfg").string() << "\n"
                                     << "max_steps = 5\n"
                                     << "crop_size = 32\n"
                                     << "base_width = 4\n"
                                     << "residual_blocks = 1\n"
                                     << "edge_kernel = 5\n";
    // --steps overrides max_steps = 5.
    auto r = run_cli("train --config " + (dir / "train.cfg").string() + " --steps 1 --json");
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    CHECK(json::parse(r.out).at("steps").get<int>() == 1);
}

TEST_CASE("benchmark reports every requested size in json") {
    const auto& f = fixture();
    auto r = run_cli("benchmark --model " + f.ckpt.string() +
                     " --sizes 64x48,96x64 --runs 5 --json");
    REQUIRE(r.exit_code == 0);
    auto j = json::parse(r.out);
    REQUIRE(j.at("rows").size() == 2);
    CHECK(j["rows"][0].at("width") == 64);
    CHECK(j["rows"][0].at("samples_ms").size() == 5);
    CHECK(j["rows"][1].at("per_pixel_us").get<double>() > 0.0);
    CHECK(j.at("runs") == 5);

    CHECK(run_cli("benchmark --model " + f.ckpt.string() + " --runs 4 --sizes 64x48")
              .exit_code == 1);
}

TEST_CASE("restyle-assets via cli mirrors the tree and writes a report") {
    const auto& f = fixture();
    auto dir = fixtures::scratch_dir("cli_assets");
    fs::remove_all(dir);
    fs::create_directories(dir / "in" / "nested");
    xstyle::Rng rng(2);
    xstyle::Image rgba(16, 16, true);
    for (auto& v : rgba.rgb) v = float(rng.uniform());
    for (auto& a : rgba.alpha) a = std::uint8_t(rng.uniform_index(256));
    xstyle::save_png(dir / "in" / "icon.png", rgba);
    std::ofstream(dir / "in" / "nested" / "notes.txt") << "passthrough";

    auto r = run_cli("restyle-assets --model " + f.ckpt.string() + " --in " +
                     (dir / "in").string() + " --out " + (dir / "out").string() +
                     " --report " + (dir / "report.jsonl").string() + " --json");
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    auto j = json::parse(r.out);
    CHECK(j.at("restyled") == 1);
    CHECK(j.at("copied_through") == 1);
    CHECK(fs::exists(dir / "out" / "nested" / "notes.txt"));
    CHECK(fs::exists(dir / "report.jsonl"));
    auto out_icon = xstyle::load_png(dir / "out" / "icon.png");
    CHECK(out_icon.alpha == rgba.alpha);
}

TEST_CASE("targets subcommand writes a loadable container") {
    const auto& f = fixture();
    auto dir = fixtures::scratch_dir("cli_targets");
    auto out = dir / "style.xst";
    auto r = run_cli("targets --vgg " + f.vgg.string() + " --style " + f.style.string() +
                     " --out " + out.string() + " --style-size 32 --json");
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    auto j = json::parse(r.out);
    CHECK(j.at("grams").size() == 4);
    CHECK(j.at("cross_grams").size() == 4);
    auto loaded = xstyle::load_style_targets<float>(out);
    CHECK(loaded.grams.size() == 4);
}

TEST_CASE("inspect writes magnitude maps at native resolutions") {
    const auto& f = fixture();
    auto dir = fixtures::scratch_dir("cli_inspect");
    auto r = run_cli("inspect --vgg " + f.vgg.string() + " --in " + f.style.string() +
                     " --layers relu1_1,relu3_1 --out " + dir.string() + " --json");
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    auto j = json::parse(r.out);
    REQUIRE(j.contains("relu1_1"));
    CHECK(j["relu1_1"].at("width") == 48);
    CHECK(j["relu3_1"].at("width") == 12);
    CHECK(fs::exists(j["relu1_1"].at("file").get<std::string>()));
}

TEST_CASE("optimize subcommand decreases the loss") {
    const auto& f = fixture();
    auto dir = fixtures::scratch_dir("cli_optimize");
    auto r = run_cli("optimize --vgg " + f.vgg.string() + " --style " + f.style.string() +
                     " --in " + f.corpus.string() + "/img000.png --out " +
                     (dir / "o.png").string() + " --iters 2 --content-size 32 --step 1e-6 --json");
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    auto j = json::parse(r.out);
    CHECK(j.at("final").at("total").get<double>() <=
          j.at("initial").at("total").get<double>());
    CHECK(fs::exists(dir / "o.png"));
}

TEST_CASE("usage errors exit 2, help exits 0") {
    CHECK(run_cli("stylize --no-such-flag").exit_code == 2);
    CHECK(run_cli("").exit_code == 2);
    CHECK(run_cli("--help").exit_code == 0);
    for (const char* sub :
         {"train", "stylize", "optimize", "restyle-assets", "benchmark", "inspect", "targets"})
        CHECK(run_cli(std::string(sub) + " --help").exit_code == 0);
}

TEST_CASE("bare model names resolve through XSTYLE_MODEL_DIR") {
    const auto& f = fixture();
    auto dir = fixtures::scratch_dir("cli_modeldir");
    setenv("XSTYLE_MODEL_DIR", f.root.string().c_str(), 1);
    xstyle::Rng rng(3);
    xstyle::Image img(16, 16);
    for (auto& v : img.rgb) v = float(rng.uniform());
    xstyle::save_png(dir / "in.png", img);
    auto r = run_cli("stylize --model model.xsc --in " + (dir / "in.png").string() +
                     " --out " + (dir / "out.png").string());
    CAPTURE(r.err);
    CHECK(r.exit_code == 0);
    unsetenv("XSTYLE_MODEL_DIR");
}

TEST_CASE("the cli source stays a thin adapter over the library") {
    auto src = xstyle::read_text_file(XSTYLE_CLI_SRC);
    for (const char* forbidden :
         {"conv2d", "instance_norm", "maxpool", "feature_matrix", "cross_gram_backward",
          "transformer_backward", "gram_sq_err", "Eigen::"})
        CHECK(src.find(forbidden) == std::string::npos);
}

}  // TEST_SUITE
