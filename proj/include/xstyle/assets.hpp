#pragma once

// Asset-directory restyling: every raster under the input tree is stylized
// with its original alpha bytes reattached, everything else is copied
// through byte-identically, and the directory layout is mirrored.

#include <filesystem>
#include <fstream>

#include "xstyle/image.hpp"
#include "xstyle/stylizer.hpp"
#include "xstyle/transformer.hpp"

namespace xstyle {

enum class AssetStatus { Restyled, CopiedThrough, Failed };

inline const char* asset_status_name(AssetStatus s) {
    switch (s) {
        case AssetStatus::Restyled: return "restyled";
        case AssetStatus::CopiedThrough: return "copied-through";
        default: return "failed";
    }
}

struct AssetRecord {
    std::filesystem::path relative;
    AssetStatus status = AssetStatus::CopiedThrough;
    std::string reason;        // failure reason, empty otherwise
    std::string input_digest;  // sha256 of input bytes
    std::string output_digest; // sha256 of output bytes, empty on failure
};

struct AssetReport {
    std::vector<AssetRecord> files;
    int restyled = 0;
    int copied = 0;
    int failed = 0;

    void write_jsonl(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw IoError("cannot write report: " + path.string());
        for (const auto& r : files) {
            os << "{\"file\":\"" << r.relative.generic_string() << "\",\"status\":\""
               << asset_status_name(r.status) << "\"";
            if (!r.reason.empty()) os << ",\"reason\":\"" << r.reason << "\"";
            os << ",\"input_sha256\":\"" << r.input_digest << "\"";
            if (!r.output_digest.empty()) os << ",\"output_sha256\":\"" << r.output_digest << "\"";
            os << "}\n";
        }
        os << "{\"restyled\":" << restyled << ",\"copied_through\":" << copied
           << ",\"failed\":" << failed << "}\n";
    }
};

struct RestyleOptions {
    bool overwrite = false;
    int min_side = 32;  // assets smaller than this are upscaled for inference
};

namespace detail {

inline std::string file_digest(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    Sha256 h;
    char buf[65536];
    while (is.read(buf, sizeof buf) || is.gcount() > 0) h.update(buf, std::size_t(is.gcount()));
    return h.hex();
}

// Composites semi-transparent pixels over neutral gray so undefined color
// under low alpha never reaches the network; the original alpha is
// reattached afterwards.
inline Image composite_over_gray(const Image& img) {
    if (!img.has_alpha()) return img;
    Image out = img;
    for (std::int64_t i = 0, n = img.pixels(); i < n; ++i) {
        float a = img.alpha[std::size_t(i)] / 255.f;
        if (a >= 1.f) continue;
        for (int c = 0; c < 3; ++c)
            out.plane(c)[i] = img.plane(c)[i] * a + 0.5f * (1.f - a);
    }
    return out;
}

}  // namespace detail

// Stylizes one asset image: gray-composite under the mask, optional 2x/4x
// nearest-neighbor upscale for tiny assets (downscaled back), and bit-exact
// alpha reattachment.
inline Image restyle_asset_image(const TransformerParams<float>& params, const Image& img,
                                 int min_side = 32) {
    Image work = detail::composite_over_gray(img);
    std::vector<std::uint8_t> alpha = img.alpha;
    work.alpha.clear();

    int factor = 1;
    int side = std::min(work.height, work.width);
    while (factor < 4 && side * factor < min_side) factor *= 2;
    if (factor > 1) work = upscale_nearest(work, factor);

    Image styled = stylize(params, work);
    if (factor > 1) styled = downscale_box(styled, factor);
    styled.alpha = std::move(alpha);
    return styled;
}

// Restyles a whole asset directory into out_dir, mirroring the tree.
// Unreadable rasters are recorded as failures and the pipeline continues.
inline AssetReport restyle_assets(const std::filesystem::path& in_dir,
                                  const std::filesystem::path& out_dir,
                                  const TransformerParams<float>& params,
                                  const RestyleOptions& opts = {}) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(in_dir))
        throw IoError("asset directory not found: " + in_dir.string());
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !opts.overwrite)
        throw IoError("output directory " + out_dir.string() +
                      " is not empty (use overwrite)");
    fs::create_directories(out_dir);

    std::vector<fs::path> inputs;
    for (const auto& entry : fs::recursive_directory_iterator(in_dir))
        if (entry.is_regular_file()) inputs.push_back(entry.path());
    std::sort(inputs.begin(), inputs.end());

    AssetReport report;
    for (const auto& in_path : inputs) {
        AssetRecord rec;
        rec.relative = fs::relative(in_path, in_dir);
        rec.input_digest = detail::file_digest(in_path);
        fs::path out_path = out_dir / rec.relative;
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());

        bool is_raster = sniff_image_format(in_path) != ImageFormat::Unknown;
        try {
            if (is_raster) {
                Image img = load_image(in_path);
                Image styled = restyle_asset_image(params, img, opts.min_side);
                if (sniff_image_format(in_path) == ImageFormat::Png)
                    save_png(out_path, styled);
                else
                    save_jpeg(out_path, styled);
                rec.status = AssetStatus::Restyled;
            } else {
                // Byte-identical copy-through, atomic like the raster writes.
                fs::path tmp = out_path;
                tmp += ".tmp";
                fs::copy_file(in_path, tmp, fs::copy_options::overwrite_existing);
                fs::rename(tmp, out_path);
                rec.status = AssetStatus::CopiedThrough;
            }
            rec.output_digest = detail::file_digest(out_path);
        } catch (const Error& e) {
            rec.status = AssetStatus::Failed;
            rec.reason = e.what();
        }
        switch (rec.status) {
            case AssetStatus::Restyled: ++report.restyled; break;
            case AssetStatus::CopiedThrough: ++report.copied; break;
            case AssetStatus::Failed: ++report.failed; break;
        }
        report.files.push_back(std::move(rec));
    }
    return report;
}

}  // namespace xstyle
