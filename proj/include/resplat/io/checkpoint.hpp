#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "resplat/model/config.hpp"
#include "resplat/model/params.hpp"

namespace resplat::io {

inline constexpr char checkpoint_magic[4] = {'R', 'S', 'P', 'L'};
inline constexpr std::uint32_t checkpoint_version = 1;

/// Layout: "RSPL", u32 version, u64 header length, JSON header, then each
/// parameter's values as little-endian f32 or f64 in header order.
template <class T>
struct Checkpoint {
    ModelConfig config;
    std::int64_t step = 0;
    int stage = 1;
    std::uint64_t seed = 0;
    ModelParams<T> params;
};

namespace detail {

template <class T>
constexpr const char* dtype_name() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t read_uint(std::istream& is, int bytes, const std::string& where) {
    unsigned char b[8] = {};
    is.read(reinterpret_cast<char*>(b), bytes);
    require(is.gcount() == bytes, where, ": truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

} // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
    static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
    nlohmann::json h;
    h["config"] = ck.config;
    h["step"] = ck.step;
    h["stage"] = ck.stage;
    h["seed"] = ck.seed;
    h["dtype"] = detail::dtype_name<T>();
    h["params"] = nlohmann::json::array();
    for (const auto& [name, t] : ck.params.all())
        h["params"].push_back({{"name", name}, {"shape", t.shape()}, {"trainable", t.requires_grad()}});
    const std::string header = h.dump();
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot open '", path.string(), "' for writing");
    os.write(checkpoint_magic, 4);
    detail::write_u32(os, checkpoint_version);
    detail::write_u64(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : ck.params.all())
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
    require(os.good(), "failed to write '", path.string(), "'");
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    const std::string where = "checkpoint '" + path.string() + "'";
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "cannot open ", where);
    char magic[4] = {};
    is.read(magic, 4);
    require(is.gcount() == 4 && std::memcmp(magic, checkpoint_magic, 4) == 0, where, ": bad magic (not an RSPL file)");
    const auto version = detail::read_uint(is, 4, where);
    require(version == checkpoint_version, where, ": format version ", version, " is not supported (expected ",
            checkpoint_version, ")");
    const auto len = detail::read_uint(is, 8, where);
    require(len < (1u << 30), where, ": implausible header length");
    std::string header(len, '\0');
    is.read(header.data(), static_cast<std::streamsize>(len));
    require(static_cast<std::uint64_t>(is.gcount()) == len, where, ": truncated header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header);
    } catch (const std::exception& e) {
        fail(where, ": header is not valid JSON: ", e.what());
    }
    Checkpoint<T> ck;
    ck.config = h.at("config").get<ModelConfig>();
    ck.step = h.value("step", std::int64_t{0});
    ck.stage = h.value("stage", 1);
    ck.seed = h.value("seed", std::uint64_t{0});
    const std::string dtype = h.value("dtype", std::string("f32"));
    require(dtype == "f32" || dtype == "f64", where, ": unknown dtype '", dtype, "'");
    const std::size_t width = dtype == "f32" ? 4 : 8;
    for (const auto& p : h.at("params")) {
        const auto name = p.at("name").get<std::string>();
        const auto shape = p.at("shape").get<Shape>();
        const auto n = static_cast<std::size_t>(numel_of(shape));
        std::vector<T> values(n);
        std::vector<char> buf(n * width);
        is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        require(static_cast<std::size_t>(is.gcount()) == buf.size(), where, ": truncated data for '", name, "'");
        for (std::size_t i = 0; i < n; ++i) {
            if (width == 4) {
                float f;
                std::memcpy(&f, buf.data() + 4 * i, 4);
                values[i] = static_cast<T>(f);
            } else {
                double d;
                std::memcpy(&d, buf.data() + 8 * i, 8);
                values[i] = static_cast<T>(d);
            }
        }
        auto& t = ck.params.add(name, shape, std::move(values));
        t.set_requires_grad(p.value("trainable", true));
    }
    return ck;
}

} // namespace resplat::io
