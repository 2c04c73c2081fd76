// Generates a self-contained demo/test fixture: a synthetic VGG weight
// container, a small corpus of procedural images, and a high-contrast style
// image. Lets the pipeline run end to end without pretrained weights.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "xstyle/image.hpp"
#include "xstyle/vgg.hpp"

namespace fs = std::filesystem;

namespace {

xstyle::Image blobby_image(xstyle::Rng& rng, int size) {
    xstyle::Image img(size, size);
    for (int c = 0; c < 3; ++c) {
        float base = float(rng.uniform(0.2, 0.8));
        for (std::int64_t i = 0; i < img.pixels(); ++i) img.plane(c)[i] = base;
    }
    for (int b = 0; b < 12; ++b) {
        double cy = rng.uniform(0, size), cx = rng.uniform(0, size);
        double r = rng.uniform(size / 8.0, size / 2.5);
        double col[3] = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                         rng.uniform(0.05, 0.95)};
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                if (d2 >= r * r) continue;
                double a = 1.0 - std::sqrt(d2) / r;
                for (int c = 0; c < 3; ++c) {
                    float& v = img.at(c, y, x);
                    v = float(v * (1 - a) + col[c] * a);
                }
            }
    }
    return img;
}

xstyle::Image stripey_image(xstyle::Rng& rng, int size) {
    xstyle::Image img(size, size);
    double cols[3][3] = {{0.95, 0.85, 0.1}, {0.1, 0.2, 0.8}, {0.9, 0.1, 0.2}};
    int period = std::max(4, size / 8);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double* col = cols[((x + y) / period) % 3];
            bool check = ((x / (period / 2)) + (y / (period / 2))) % 2 == 0;
            for (int c = 0; c < 3; ++c) {
                double v = col[c] * (check ? 1.0 : 0.55) + rng.uniform(-0.03, 0.03);
                img.at(c, y, x) = float(std::clamp(v, 0.0, 1.0));
            }
        }
    return img;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"generate a synthetic xstyle fixture (weights + corpus + style)"};
    std::string out = "fixture";
    std::uint64_t seed = 1234;
    int corpus_images = 8;
    int image_size = 256;
    app.add_option("--out", out, "output directory");
    app.add_option("--seed", seed, "generator seed");
    app.add_option("--corpus-images", corpus_images, "number of corpus images");
    app.add_option("--size", image_size, "corpus/style image size");
    CLI11_PARSE(app, argc, argv);

    try {
        fs::create_directories(fs::path(out) / "corpus");
        auto weights = xstyle::vgg::Weights::random(seed);
        xstyle::vgg::save_weights(fs::path(out) / "vgg_synthetic.xsw", weights);

        xstyle::Rng rng(seed ^ 0xfeedfaceull);
        for (int i = 0; i < corpus_images; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "img%03d.png", i);
            xstyle::save_png(fs::path(out) / "corpus" / name, blobby_image(rng, image_size));
        }
        xstyle::save_png(fs::path(out) / "style.png", stripey_image(rng, image_size));
        std::cout << "fixture written to " << out << "\n"
                  << "  vgg weights: " << (fs::path(out) / "vgg_synthetic.xsw").string() << "\n"
                  << "  corpus:      " << corpus_images << " images\n"
                  << "  style:       " << (fs::path(out) / "style.png").string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
