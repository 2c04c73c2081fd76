#pragma once

// Raster images: float RGB planes in [0,1] plus an optional untouched 8-bit
// alpha plane. PNG (RGB/RGBA) and JPEG (RGB) codecs; alpha bytes survive any
// load/save round trip bit-exactly.

#include <jpeglib.h>
#include <png.h>

#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include "xstyle/common.hpp"
#include "xstyle/tensor.hpp"

namespace xstyle {

struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> rgb;             // 3 planes of H*W, values in [0,1]
    std::vector<std::uint8_t> alpha;    // empty, or H*W raw bytes

    Image() = default;
    Image(int h, int w, bool with_alpha = false)
        : height(h), width(w), rgb(std::size_t(3) * h * w, 0.f) {
        if (with_alpha) alpha.assign(std::size_t(h) * w, 255);
    }

    bool has_alpha() const { return !alpha.empty(); }
    std::int64_t pixels() const { return std::int64_t(height) * width; }

    float* plane(int c) { return rgb.data() + std::size_t(c) * height * width; }
    const float* plane(int c) const { return rgb.data() + std::size_t(c) * height * width; }

    float& at(int c, int y, int x) { return rgb[(std::size_t(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return rgb[(std::size_t(c) * height + y) * width + x]; }
};

inline std::uint8_t float_to_byte(float v) {
    float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    return std::uint8_t(c * 255.f + 0.5f);
}

template <typename T = float>
Tensor<T> image_to_tensor(const Image& img) {
    Tensor<T> t(3, img.height, img.width);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) t.v[i] = T(img.rgb[i]);
    return t;
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t) {
    if (t.channels != 3) throw ShapeError("tensor_to_image: expected 3 channels, got " +
                                          std::to_string(t.channels));
    Image img(t.height, t.width);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) {
        double v = double(t.v[i]);
        img.rgb[i] = float(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
    }
    return img;
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------
namespace detail {

struct FileClose {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileClose>;

}  // namespace detail

inline Image load_png(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("cannot open: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> raw;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("PNG decode failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    // Normalize every input variant to 8-bit RGB or RGBA.
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    int ch = int(png_get_channels(png, info));
    if (ch != 3 && ch != 4) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("PNG has unsupported channel count " + std::to_string(ch));
    }
    raw.resize(std::size_t(w) * h * ch);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + std::size_t(y) * w * ch;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(int(h), int(w), ch == 4);
    std::int64_t n = img.pixels();
    for (std::int64_t i = 0; i < n; ++i) {
        const std::uint8_t* px = raw.data() + std::size_t(i) * ch;
        img.plane(0)[i] = px[0] / 255.f;
        img.plane(1)[i] = px[1] / 255.f;
        img.plane(2)[i] = px[2] / 255.f;
        if (ch == 4) img.alpha[std::size_t(i)] = px[3];
    }
    return img;
}

inline void save_png(const std::filesystem::path& path, const Image& img) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        detail::FilePtr fp(std::fopen(tmp.string().c_str(), "wb"));
        if (!fp) throw IoError("cannot open for write: " + tmp.string());

        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        if (!png) throw IoError("png_create_write_struct failed");
        png_infop info = png_create_info_struct(png);
        if (!info) {
            png_destroy_write_struct(&png, nullptr);
            throw IoError("png_create_info_struct failed");
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw IoError("PNG encode failed: " + path.string());
        }
        png_init_io(png, fp.get());
        int ch = img.has_alpha() ? 4 : 3;
        png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
                     ch == 4 ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);

        std::vector<std::uint8_t> row(std::size_t(img.width) * ch);
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                std::uint8_t* px = row.data() + std::size_t(x) * ch;
                px[0] = float_to_byte(img.at(0, y, x));
                px[1] = float_to_byte(img.at(1, y, x));
                px[2] = float_to_byte(img.at(2, y, x));
                if (ch == 4) px[3] = img.alpha[std::size_t(y) * img.width + x];
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// JPEG
// ---------------------------------------------------------------------------
namespace detail {

struct JpegErr {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
};

inline void jpeg_throw(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

}  // namespace detail

inline Image load_jpeg(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("cannot open: " + path.string());

    jpeg_decompress_struct cinfo{};
    detail::JpegErr err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = detail::jpeg_throw;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("JPEG decode failed: " + path.string());
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    Image img(int(cinfo.output_height), int(cinfo.output_width));
    std::vector<std::uint8_t> row(std::size_t(img.width) * 3);
    std::uint8_t* rowp = row.data();
    while (cinfo.output_scanline < cinfo.output_height) {
        int y = int(cinfo.output_scanline);
        jpeg_read_scanlines(&cinfo, &rowp, 1);
        for (int x = 0; x < img.width; ++x) {
            img.at(0, y, x) = row[std::size_t(x) * 3 + 0] / 255.f;
            img.at(1, y, x) = row[std::size_t(x) * 3 + 1] / 255.f;
            img.at(2, y, x) = row[std::size_t(x) * 3 + 2] / 255.f;
        }
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

inline void save_jpeg(const std::filesystem::path& path, const Image& img, int quality = 92) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        detail::FilePtr fp(std::fopen(tmp.string().c_str(), "wb"));
        if (!fp) throw IoError("cannot open for write: " + tmp.string());

        jpeg_compress_struct cinfo{};
        detail::JpegErr err{};
        cinfo.err = jpeg_std_error(&err.mgr);
        err.mgr.error_exit = detail::jpeg_throw;
        if (setjmp(err.jump)) {
            jpeg_destroy_compress(&cinfo);
            throw IoError("JPEG encode failed: " + path.string());
        }
        jpeg_create_compress(&cinfo);
        jpeg_stdio_dest(&cinfo, fp.get());
        cinfo.image_width = JDIMENSION(img.width);
        cinfo.image_height = JDIMENSION(img.height);
        cinfo.input_components = 3;
        cinfo.in_color_space = JCS_RGB;
        jpeg_set_defaults(&cinfo);
        jpeg_set_quality(&cinfo, quality, TRUE);
        jpeg_start_compress(&cinfo, TRUE);

        std::vector<std::uint8_t> row(std::size_t(img.width) * 3);
        std::uint8_t* rowp = row.data();
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                row[std::size_t(x) * 3 + 0] = float_to_byte(img.at(0, y, x));
                row[std::size_t(x) * 3 + 1] = float_to_byte(img.at(1, y, x));
                row[std::size_t(x) * 3 + 2] = float_to_byte(img.at(2, y, x));
            }
            jpeg_write_scanlines(&cinfo, &rowp, 1);
        }
        jpeg_finish_compress(&cinfo);
        jpeg_destroy_compress(&cinfo);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Format sniffing and generic load/save
// ---------------------------------------------------------------------------
enum class ImageFormat { Png, Jpeg, Unknown };

inline ImageFormat sniff_image_format(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return ImageFormat::Unknown;
    std::uint8_t magic[8] = {};
    is.read(reinterpret_cast<char*>(magic), 8);
    static const std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (is.gcount() >= 8 && std::memcmp(magic, png_sig, 8) == 0) return ImageFormat::Png;
    if (is.gcount() >= 2 && magic[0] == 0xff && magic[1] == 0xd8) return ImageFormat::Jpeg;
    return ImageFormat::Unknown;
}

inline Image load_image(const std::filesystem::path& path) {
    switch (sniff_image_format(path)) {
        case ImageFormat::Png: return load_png(path);
        case ImageFormat::Jpeg: return load_jpeg(path);
        default: throw IoError("not a PNG or JPEG image: " + path.string());
    }
}

// Saves by extension: .png (alpha preserved) or .jpg/.jpeg (RGB only).
inline void save_image(const std::filesystem::path& path, const Image& img) {
    std::string ext = path.extension().string();
    for (auto& c : ext) c = char(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".png") {
        save_png(path, img);
    } else if (ext == ".jpg" || ext == ".jpeg") {
        save_jpeg(path, img);
    } else {
        throw IoError("unsupported output extension '" + ext + "' for " + path.string());
    }
}

// ---------------------------------------------------------------------------
// Geometry helpers
// ---------------------------------------------------------------------------
inline Image resize_bilinear(const Image& img, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_bilinear: invalid target size");
    Image out(out_h, out_w, img.has_alpha());
    double sy = double(img.height) / out_h;
    double sx = double(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = int(std::floor(fy));
        double wy = fy - y0;
        int ya = std::clamp(y0, 0, img.height - 1);
        int yb = std::clamp(y0 + 1, 0, img.height - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = int(std::floor(fx));
            double wx = fx - x0;
            int xa = std::clamp(x0, 0, img.width - 1);
            int xb = std::clamp(x0 + 1, 0, img.width - 1);
            for (int c = 0; c < 3; ++c) {
                double top = (1 - wx) * img.at(c, ya, xa) + wx * img.at(c, ya, xb);
                double bot = (1 - wx) * img.at(c, yb, xa) + wx * img.at(c, yb, xb);
                out.at(c, y, x) = float((1 - wy) * top + wy * bot);
            }
            if (img.has_alpha()) {
                double top = (1 - wx) * img.alpha[std::size_t(ya) * img.width + xa] +
                             wx * img.alpha[std::size_t(ya) * img.width + xb];
                double bot = (1 - wx) * img.alpha[std::size_t(yb) * img.width + xa] +
                             wx * img.alpha[std::size_t(yb) * img.width + xb];
                double v = (1 - wy) * top + wy * bot;
                out.alpha[std::size_t(y) * out_w + x] =
                    std::uint8_t(std::clamp(v + 0.5, 0.0, 255.0));
            }
        }
    }
    return out;
}

// Shorter side scaled to `target`, aspect preserved.
inline Image resize_shorter_side(const Image& img, int target) {
    if (img.height <= 0 || img.width <= 0) throw ShapeError("resize: empty image");
    if (std::min(img.height, img.width) == target) return img;
    double scale = double(target) / std::min(img.height, img.width);
    int h = std::max(target, int(std::lround(img.height * scale)));
    int w = std::max(target, int(std::lround(img.width * scale)));
    if (img.height <= img.width) h = target; else w = target;
    return resize_bilinear(img, h, w);
}

inline Image crop(const Image& img, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || y0 + h > img.height || x0 + w > img.width)
        throw ShapeError("crop: window out of bounds");
    Image out(h, w, img.has_alpha());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            std::memcpy(out.plane(c) + std::size_t(y) * w,
                        img.plane(c) + std::size_t(y0 + y) * img.width + x0,
                        std::size_t(w) * sizeof(float));
    if (img.has_alpha())
        for (int y = 0; y < h; ++y)
            std::memcpy(out.alpha.data() + std::size_t(y) * w,
                        img.alpha.data() + std::size_t(y0 + y) * img.width + x0,
                        std::size_t(w));
    return out;
}

// Nearest-neighbor integer upscale (used for tiny assets).
inline Image upscale_nearest(const Image& img, int factor) {
    Image out(img.height * factor, img.width * factor, img.has_alpha());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x)
                out.at(c, y, x) = img.at(c, y / factor, x / factor);
    if (img.has_alpha())
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x)
                out.alpha[std::size_t(y) * out.width + x] =
                    img.alpha[std::size_t(y / factor) * img.width + x / factor];
    return out;
}

// Box-average integer downscale, inverse of upscale_nearest. RGB only; the
// asset pipeline reattaches the original alpha afterwards.
inline Image downscale_box(const Image& img, int factor) {
    if (img.height % factor != 0 || img.width % factor != 0)
        throw ShapeError("downscale_box: dims not divisible by factor");
    Image out(img.height / factor, img.width / factor);
    double inv = 1.0 / (double(factor) * factor);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) {
                double acc = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        acc += img.at(c, y * factor + dy, x * factor + dx);
                out.at(c, y, x) = float(acc * inv);
            }
    return out;
}

}  // namespace xstyle
