#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "resplat/scene/sample.hpp"

namespace resplat::io {

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

} // namespace detail

namespace detail {

inline void write_pfm_raw(const std::filesystem::path& path, const float* data, int width, int height, int channels) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot open '", path.string(), "' for writing");
    os << (channels == 3 ? "PF" : "Pf") << '\n' << width << ' ' << height << "\n-1.0\n";
    const std::size_t row = static_cast<std::size_t>(width) * channels;
    for (int y = height - 1; y >= 0; --y)
        for (std::size_t i = 0; i < row; ++i) {
            const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(data[y * row + i]));
            os.write(reinterpret_cast<const char*>(&bits), 4);
        }
    require(os.good(), "failed to write '", path.string(), "'");
}

inline std::vector<float> read_pfm_raw(const std::filesystem::path& path, int channels, int& width, int& height) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "cannot open '", path.string(), "'");
    std::string magic;
    is >> magic;
    require(magic == (channels == 3 ? "PF" : "Pf"), "'", path.string(), "' is not a ",
            channels == 3 ? "color" : "single-channel", " PFM");
    double scale = 0;
    is >> width >> height >> scale;
    require(is.good() && width > 0 && height > 0 && scale != 0, "PFM '", path.string(), "': bad header");
    require(scale < 0, "PFM '", path.string(), "': big-endian data is not supported");
    is.get();
    const std::size_t row = static_cast<std::size_t>(width) * channels;
    std::vector<float> out(row * height);
    for (int y = height - 1; y >= 0; --y)
        for (std::size_t i = 0; i < row; ++i) {
            std::uint32_t bits = 0;
            is.read(reinterpret_cast<char*>(&bits), 4);
            require(is.gcount() == 4, "PFM '", path.string(), "' is truncated");
            out[y * row + i] = std::bit_cast<float>(to_le(bits));
        }
    return out;
}

} // namespace detail

/// Single-channel little-endian PFM ("Pf", scale -1). Rows are stored bottom to top.
inline void write_pfm(const std::filesystem::path& path, const DepthMap& d) {
    require(d.depth.size() == static_cast<std::size_t>(d.width) * d.height, "PFM: depth buffer size mismatch");
    detail::write_pfm_raw(path, d.depth.data(), d.width, d.height, 1);
}

inline DepthMap read_pfm(const std::filesystem::path& path) {
    DepthMap d;
    d.depth = detail::read_pfm_raw(path, 1, d.width, d.height);
    return d;
}

/// Color PFM ("PF") holding full-precision RGB.
inline void write_pfm_rgb(const std::filesystem::path& path, const Image& img) {
    require(img.rgb.size() == static_cast<std::size_t>(img.width) * img.height * 3, "PFM: image buffer size mismatch");
    detail::write_pfm_raw(path, img.rgb.data(), img.width, img.height, 3);
}

inline Image read_pfm_rgb(const std::filesystem::path& path) {
    Image img;
    img.rgb = detail::read_pfm_raw(path, 3, img.width, img.height);
    return img;
}

} // namespace resplat::io
