#pragma once

// Per-style training: iterates a corpus of images, minimizes the total loss
// of transformer outputs against fixed style targets with Adam, and manages
// checkpoints plus an append-only JSONL loss log.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "xstyle/common.hpp"
#include "xstyle/image.hpp"
#include "xstyle/losses.hpp"
#include "xstyle/transformer.hpp"
#include "xstyle/vgg.hpp"

namespace xstyle {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------
template <typename T>
class Adam {
public:
    Adam(double lr, const TransformerParams<T>& params) : lr_(lr) {
        for (const auto& u : params.units) {
            for (const auto* arr : {&u.w, &u.b, &u.gamma, &u.beta}) {
                m_.emplace_back(arr->size(), T(0));
                v_.emplace_back(arr->size(), T(0));
            }
        }
    }

    void step(TransformerParams<T>& params, const TransformerGrads<T>& grads) {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, double(t_));
        double bc2 = 1.0 - std::pow(beta2_, double(t_));
        std::size_t slot = 0;
        for (std::size_t u = 0; u < params.units.size(); ++u) {
            auto& pu = params.units[u];
            const auto& gu = grads.units[u];
            update(pu.w, gu.w, slot++, bc1, bc2);
            update(pu.b, gu.b, slot++, bc1, bc2);
            update(pu.gamma, gu.gamma, slot++, bc1, bc2);
            update(pu.beta, gu.beta, slot++, bc1, bc2);
        }
    }

private:
    void update(std::vector<T>& p, const std::vector<T>& g, std::size_t slot, double bc1,
                double bc2) {
        if (p.empty()) return;
        if (g.size() != p.size()) throw ShapeError("adam: gradient size mismatch");
        auto& m = m_[slot];
        auto& v = v_[slot];
        for (std::size_t i = 0; i < p.size(); ++i) {
            double gi = double(g[i]);
            double mi = beta1_ * double(m[i]) + (1.0 - beta1_) * gi;
            double vi = beta2_ * double(v[i]) + (1.0 - beta2_) * gi * gi;
            m[i] = T(mi);
            v[i] = T(vi);
            p[i] -= T(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
        }
    }

    double lr_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    std::int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------
struct TrainingConfig {
    std::filesystem::path style_path;
    std::filesystem::path corpus_dir;
    std::filesystem::path out_dir = "train_out";
    std::filesystem::path vgg_weights;
    std::string style_id;         // defaults to the style file stem
    int crop_size = 256;
    int batch_size = 1;
    std::string optimizer = "adam";
    double learning_rate = 1e-3;
    std::int64_t max_steps = 1000;
    double max_seconds = 0.0;     // 0 = no wall-clock budget
    std::int64_t checkpoint_every = 500;
    std::uint64_t seed = 0;
    int workers = 1;              // 0 = synchronous single-worker ingestion
    int style_size = 256;         // shorter-side resize of the style; 0 = native
    std::string precision = "float32";
    LossWeights weights = LossWeights::defaults();
    TransformerManifest manifest;

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (crop_size < 8 || crop_size % 4 != 0)
            throw ConfigError("crop_size must be a multiple of 4 and >= 8");
        if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
        if (optimizer != "adam") throw ConfigError("unknown optimizer: " + optimizer);
        if (precision != "float32" && precision != "float64")
            throw ConfigError("precision must be float32 or float64");
        if (workers < 0 || workers > 1) throw ConfigError("workers must be 0 or 1");
        weights.validate();
        manifest.validate();
    }

    std::string digest() const {
        std::ostringstream os;
        os << style_path.string() << '\n' << corpus_dir.string() << '\n' << crop_size << '\n'
           << batch_size << '\n' << optimizer << '\n' << learning_rate << '\n' << max_steps
           << '\n' << max_seconds << '\n' << seed << '\n' << style_size << '\n' << precision
           << '\n' << manifest.str() << '\n';
        for (const auto& [l, v] : weights.content) os << "c:" << l << '=' << v << '\n';
        for (const auto& [l, v] : weights.texture) os << "t:" << l << '=' << v << '\n';
        for (const auto& [p, v] : weights.structure)
            os << "s:" << pair_key(p) << '=' << v << '\n';
        os << "tv=" << weights.tv << '\n';
        auto s = os.str();
        return Sha256::hex_of(s.data(), s.size());
    }
};

// "layer=value[,layer=value...]" for texture/content weights.
inline std::map<std::string, double> parse_layer_weights(const std::string& text) {
    std::map<std::string, double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        auto eq = item.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected layer=value, got '" + item + "'");
        out[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
    }
    return out;
}

// "l1xl2=value[,...]" for structure weights; layer names contain no 'x', so
// the separator is unambiguous.
inline std::map<LayerPair, double> parse_pair_weights(const std::string& text) {
    std::map<LayerPair, double> out;
    for (const auto& [key, v] : parse_layer_weights(text)) {
        auto x = key.find('x');
        if (x == std::string::npos || x == 0 || x + 1 >= key.size())
            throw ConfigError("expected l1xl2=value, got '" + key + "=...'");
        out[{key.substr(0, x), key.substr(x + 1)}] = v;
    }
    return out;
}

// key = value file with '#' comments. Unknown keys are rejected.
inline TrainingConfig parse_training_config(const std::filesystem::path& path,
                                            const TrainingConfig& base = {}) {
    TrainingConfig cfg = base;
    std::ifstream is(path);
    if (!is) throw IoError("config file not found: " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "style") cfg.style_path = value;
            else if (key == "corpus") cfg.corpus_dir = value;
            else if (key == "out") cfg.out_dir = value;
            else if (key == "vgg") cfg.vgg_weights = value;
            else if (key == "style_id") cfg.style_id = value;
            else if (key == "crop_size") cfg.crop_size = std::stoi(value);
            else if (key == "batch_size") cfg.batch_size = std::stoi(value);
            else if (key == "optimizer") cfg.optimizer = value;
            else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
            else if (key == "max_steps") cfg.max_steps = std::stoll(value);
            else if (key == "max_seconds") cfg.max_seconds = std::stod(value);
            else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoll(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "workers") cfg.workers = std::stoi(value);
            else if (key == "style_size") cfg.style_size = std::stoi(value);
            else if (key == "precision") cfg.precision = value;
            else if (key == "base_width") cfg.manifest.base_width = std::stoi(value);
            else if (key == "residual_blocks") cfg.manifest.residual_blocks = std::stoi(value);
            else if (key == "edge_kernel") cfg.manifest.edge_kernel = std::stoi(value);
            else if (key == "core_kernel") cfg.manifest.core_kernel = std::stoi(value);
            else if (key == "content_weight") cfg.weights.content = parse_layer_weights(value);
            else if (key == "texture_weight") cfg.weights.texture = parse_layer_weights(value);
            else if (key == "structure_weight") cfg.weights.structure = parse_pair_weights(value);
            else if (key == "tv_weight") cfg.weights.tv = std::stod(value);
            else
                throw ConfigError("unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": bad value for " + key);
        }
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------
struct StepRecord {
    std::int64_t step = 0;
    LossBreakdown loss;
    double elapsed_seconds = 0.0;
};

struct CheckpointRecord {
    std::filesystem::path path;
    std::int64_t step = 0;
    double elapsed_seconds = 0.0;
};

struct TrainingReport {
    std::vector<StepRecord> steps;
    std::vector<CheckpointRecord> checkpoints;
    std::vector<std::string> warnings;
    double wall_seconds = 0.0;
    double steps_per_second = 0.0;
    std::int64_t images_seen = 0;
    std::filesystem::path log_path;
    std::filesystem::path final_checkpoint;

    // Mean total loss over a trailing window ending at (0-based) step index.
    double moving_average(std::size_t end_index, std::size_t window) const {
        if (steps.empty()) throw Error("moving_average: no steps");
        end_index = std::min(end_index, steps.size() - 1);
        std::size_t begin = end_index + 1 >= window ? end_index + 1 - window : 0;
        double acc = 0.0;
        for (std::size_t i = begin; i <= end_index; ++i) acc += steps[i].loss.total;
        return acc / double(end_index - begin + 1);
    }
};

namespace detail {

inline std::string jsonl_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') {
            out += '\\';
            out += c;
        } else if (static_cast<unsigned char>(c) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\u%04x", unsigned(static_cast<unsigned char>(c)));
            out += buf;
        } else {
            out += c;
        }
    }
    return out;
}

// Bounded single-producer queue of decoded corpus images.
class PrefetchQueue {
public:
    struct Item {
        std::int64_t seq = 0;
        std::filesystem::path path;
        std::optional<Image> image;
    };

    explicit PrefetchQueue(std::size_t capacity) : capacity_(capacity) {}

    void push(Item item) {
        std::unique_lock lk(mu_);
        cv_pop_.wait(lk, [&] { return q_.size() < capacity_ || stop_; });
        if (stop_) return;
        q_.push_back(std::move(item));
        cv_push_.notify_one();
    }

    Item pop() {
        std::unique_lock lk(mu_);
        cv_push_.wait(lk, [&] { return !q_.empty(); });
        Item it = std::move(q_.front());
        q_.pop_front();
        cv_pop_.notify_one();
        return it;
    }

    void stop() {
        std::lock_guard lk(mu_);
        stop_ = true;
        cv_pop_.notify_all();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_push_, cv_pop_;
    std::deque<Item> q_;
    std::size_t capacity_;
    bool stop_ = false;
};

}  // namespace detail

// Sorted recursive listing of raster files in a corpus directory.
inline std::vector<std::filesystem::path> list_corpus(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ConfigError("corpus directory not found: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        for (auto& c : ext) c = char(std::tolower(static_cast<unsigned char>(c)));
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Shorter side to crop_size, then a seeded random crop.
inline Image prepare_training_crop(const Image& img, int crop_size, Rng& rng) {
    Image scaled = resize_shorter_side(img, crop_size);
    int max_y = scaled.height - crop_size, max_x = scaled.width - crop_size;
    int y0 = max_y > 0 ? int(rng.uniform_index(std::uint64_t(max_y) + 1)) : 0;
    int x0 = max_x > 0 ? int(rng.uniform_index(std::uint64_t(max_x) + 1)) : 0;
    return crop(scaled, y0, x0, crop_size, crop_size);
}

template <typename T>
TrainingReport train_impl(const TrainingConfig& cfg) {
    namespace fs = std::filesystem;
    using clock = std::chrono::steady_clock;
    cfg.validate();

    auto paths = list_corpus(cfg.corpus_dir);
    if (paths.empty())
        throw ConfigError("corpus " + cfg.corpus_dir.string() + " contains no images");

    Image style_img = load_image(cfg.style_path);
    if (cfg.style_size > 0 && std::min(style_img.height, style_img.width) > cfg.style_size)
        style_img = resize_shorter_side(style_img, cfg.style_size);
    std::string style_id =
        cfg.style_id.empty() ? cfg.style_path.stem().string() : cfg.style_id;

    LossNetwork<T> net(vgg::load_weights(cfg.vgg_weights));
    StyleTargets<T> targets =
        compute_style_targets(net, image_to_tensor<T>(style_img), cfg.weights, style_id);

    TransformerParams<T> params = init_transformer<T>(cfg.manifest, cfg.seed);
    Adam<T> adam(cfg.learning_rate, params);

    fs::create_directories(cfg.out_dir);
    TrainingReport report;
    report.log_path = cfg.out_dir / "train_log.jsonl";
    std::ofstream log(report.log_path, std::ios::app);
    if (!log) throw IoError("cannot open log: " + report.log_path.string());

    const auto t0 = clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };
    const std::string config_digest = cfg.digest();

    auto write_checkpoint = [&](std::int64_t step) {
        char name[64];
        std::snprintf(name, sizeof name, "step%08lld.xsc", static_cast<long long>(step));
        fs::path path = cfg.out_dir / (style_id + "_" + name);
        CheckpointMeta meta;
        meta.style_id = style_id;
        meta.step = std::uint64_t(step);
        meta.wall_seconds = elapsed();
        meta.config_digest = config_digest;
        save_checkpoint(path, params, meta);
        report.checkpoints.push_back({path, step, meta.wall_seconds});
        return path;
    };

    // Init checkpoint: usable snapshot well within the first minute.
    report.final_checkpoint = write_checkpoint(0);

    // Ingestion. The producer decodes images in cyclic corpus order; crops
    // are drawn consumer-side, so workers=0 and workers=1 yield the same
    // sequence.
    Rng crop_rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);
    detail::PrefetchQueue queue(2);
    std::atomic<bool> producer_stop{false};
    std::thread producer;
    std::int64_t sync_seq = 0;
    auto decode_at = [&paths](std::int64_t seq) -> detail::PrefetchQueue::Item {
        const auto& p = paths[std::size_t(seq % std::int64_t(paths.size()))];
        detail::PrefetchQueue::Item item;
        item.seq = seq;
        item.path = p;
        try {
            item.image = load_image(p);
        } catch (const Error&) {
            item.image.reset();
        }
        return item;
    };
    if (cfg.workers == 1) {
        producer = std::thread([&] {
            for (std::int64_t seq = 0; !producer_stop.load(std::memory_order_relaxed); ++seq)
                queue.push(decode_at(seq));
        });
    }
    auto next_image = [&]() -> std::optional<Image> {
        // Skips unreadable entries; fatal once a full corpus cycle fails.
        for (std::int64_t failures = 0; failures < std::int64_t(paths.size());) {
            auto item = cfg.workers == 1 ? queue.pop() : decode_at(sync_seq++);
            ++report.images_seen;
            if (item.image) return std::move(item.image);
            ++failures;
            report.warnings.push_back("skipped unreadable corpus file: " +
                                      item.path.string());
        }
        return std::nullopt;
    };
    auto shutdown_producer = [&] {
        if (producer.joinable()) {
            producer_stop.store(true);
            queue.stop();
            // Drain so the producer is never blocked on push.
            producer.join();
        }
    };

    try {
        TransformerGrads<T> accum;
        for (std::int64_t step = 1; step <= cfg.max_steps; ++step) {
            if (cfg.max_seconds > 0.0 && elapsed() >= cfg.max_seconds) break;

            LossBreakdown step_loss;
            bool have_grads = false;
            for (int b = 0; b < cfg.batch_size; ++b) {
                auto img = next_image();
                if (!img) throw IoError("training corpus has no readable images left");
                Image cropped = prepare_training_crop(*img, cfg.crop_size, crop_rng);
                Tensor<T> x = image_to_tensor<T>(cropped);

                TransformerTape<T> tape;
                Tensor<T> y = transformer_forward(params, x, &tape);
                auto loss = total_loss(x, targets, y, net, cfg.weights, true);

                if (!std::isfinite(loss.breakdown.total)) {
                    fs::path dump = cfg.out_dir / ("diagnostic_step" + std::to_string(step) +
                                                   ".json");
                    std::ofstream ds(dump);
                    // Values go in as strings: nan/inf are not valid JSON numbers.
                    char body[512];
                    std::snprintf(body, sizeof body,
                                  "{\"step\":%lld,\"content\":\"%.17g\",\"texture\":\"%.17g\","
                                  "\"structure\":\"%.17g\",\"tv\":\"%.17g\","
                                  "\"config_digest\":\"%s\"}",
                                  static_cast<long long>(step), loss.breakdown.content,
                                  loss.breakdown.texture, loss.breakdown.structure,
                                  loss.breakdown.tv, config_digest.c_str());
                    ds << body << "\n";
                    throw NumericError("non-finite loss at step " + std::to_string(step) +
                                       "; diagnostics in " + dump.string());
                }

                auto grads = transformer_backward(params, tape, loss.dy);
                if (!have_grads) {
                    accum = std::move(grads);
                    have_grads = true;
                } else {
                    for (std::size_t u = 0; u < accum.units.size(); ++u) {
                        auto add = [](std::vector<T>& a, const std::vector<T>& g) {
                            for (std::size_t i = 0; i < a.size(); ++i) a[i] += g[i];
                        };
                        add(accum.units[u].w, grads.units[u].w);
                        add(accum.units[u].b, grads.units[u].b);
                        add(accum.units[u].gamma, grads.units[u].gamma);
                        add(accum.units[u].beta, grads.units[u].beta);
                    }
                }
                step_loss.content += loss.breakdown.content;
                step_loss.texture += loss.breakdown.texture;
                step_loss.structure += loss.breakdown.structure;
                step_loss.tv += loss.breakdown.tv;
                step_loss.total += loss.breakdown.total;
            }

            adam.step(params, accum);

            double now = elapsed();
            report.steps.push_back({step, step_loss, now});
            char line[512];
            std::snprintf(line, sizeof line,
                          "{\"step\":%lld,\"content\":%.17g,\"texture\":%.17g,"
                          "\"structure\":%.17g,\"tv\":%.17g,\"total\":%.17g,"
                          "\"elapsed_s\":%.3f}",
                          static_cast<long long>(step), step_loss.content, step_loss.texture,
                          step_loss.structure, step_loss.tv, step_loss.total, now);
            log << line << '\n';
            log.flush();

            if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
                report.final_checkpoint = write_checkpoint(step);
        }
    } catch (...) {
        shutdown_producer();
        throw;
    }
    shutdown_producer();

    if (report.checkpoints.empty() ||
        report.checkpoints.back().step != std::int64_t(report.steps.size()))
        report.final_checkpoint = write_checkpoint(std::int64_t(report.steps.size()));

    report.wall_seconds = elapsed();
    report.steps_per_second =
        report.wall_seconds > 0 ? double(report.steps.size()) / report.wall_seconds : 0.0;
    for (const auto& w : report.warnings)
        log << "{\"warning\":\"" << detail::jsonl_escape(w) << "\"}\n";
    return report;
}

// Trains one transformer for one style. Precision follows cfg.precision.
inline TrainingReport train(const TrainingConfig& cfg) {
    if (cfg.precision == "float64") return train_impl<double>(cfg);
    return train_impl<float>(cfg);
}

}  // namespace xstyle
