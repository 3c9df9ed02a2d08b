#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "resplat/scene/sample.hpp"

namespace resplat::io {

namespace detail {

inline std::string extension(const std::filesystem::path& p) {
    auto e = p.extension().string();
    for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return e;
}

inline unsigned char quantize(float v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

} // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.string().c_str(), "wb"));
    require(f != nullptr, "cannot open '", path.string(), "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    require(png && info, "libpng initialization failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("failed to write PNG '", path.string(), "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int i = 0; i < img.width * 3; ++i) row[i] = detail::quantize(img.rgb[y * img.width * 3 + i]);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Image read_png(const std::filesystem::path& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.string().c_str(), "rb"));
    require(f != nullptr, "cannot open '", path.string(), "'");
    unsigned char sig[8];
    require(std::fread(sig, 1, 8, f.get()) == 8 && !png_sig_cmp(sig, 0, 8), "'", path.string(), "' is not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    require(png && info, "libpng initialization failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("failed to read PNG '", path.string(), "'");
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info)), h = static_cast<int>(png_get_image_height(png, info));
    require(png_get_rowbytes(png, info) == static_cast<std::size_t>(w) * 3, "PNG '", path.string(),
            "' did not decode to 8-bit RGB");
    Image img(w, h);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int i = 0; i < w * 3; ++i) img.rgb[y * w * 3 + i] = row[i] / 255.0f;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

/// Binary P6 with maxval 255.
inline void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot open '", path.string(), "' for writing");
    os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    for (float v : img.rgb) os.put(static_cast<char>(detail::quantize(v)));
    require(os.good(), "failed to write '", path.string(), "'");
}

inline Image read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "cannot open '", path.string(), "'");
    auto token = [&] {
        std::string t;
        char c;
        while (is.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(is, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!t.empty()) break;
                continue;
            }
            t += c;
        }
        return t;
    };
    require(token() == "P6", "'", path.string(), "' is not a binary PPM (P6)");
    const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
    require(w > 0 && h > 0 && maxval == 255, "PPM '", path.string(), "': unsupported header");
    Image img(w, h);
    std::vector<unsigned char> buf(img.rgb.size());
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require(is.gcount() == static_cast<std::streamsize>(buf.size()), "PPM '", path.string(), "' is truncated");
    for (std::size_t i = 0; i < buf.size(); ++i) img.rgb[i] = buf[i] / 255.0f;
    return img;
}

inline void write_image(const std::filesystem::path& path, const Image& img) {
    const auto e = detail::extension(path);
    if (e == ".png") return write_png(path, img);
    if (e == ".ppm") return write_ppm(path, img);
    fail("unsupported image extension '", e, "' (use .png or .ppm)");
}

inline Image read_image(const std::filesystem::path& path) {
    require(std::filesystem::exists(path), "missing image '", path.string(), "'");
    const auto e = detail::extension(path);
    if (e == ".png") return read_png(path);
    if (e == ".ppm") return read_ppm(path);
    fail("unsupported image extension '", e, "' (use .png or .ppm)");
}

} // namespace resplat::io
