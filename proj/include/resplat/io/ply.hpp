#pragma once

#include <bit>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "resplat/io/pfm.hpp"
#include "resplat/render/gaussians.hpp"
#include "resplat/scene/sample.hpp"

namespace resplat::io {

/// Property names in file order for a given SH degree: x y z nx ny nz
/// f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3. f_rest is channel-major
/// (all red coefficients, then green, then blue).
inline std::vector<std::string> ply_properties(int sh_degree) {
    std::vector<std::string> p = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
    const int rest = 3 * (sh::coeff_count(sh_degree) - 1);
    for (int i = 0; i < rest; ++i) p.push_back("f_rest_" + std::to_string(i));
    p.push_back("opacity");
    for (int i = 0; i < 3; ++i) p.push_back("scale_" + std::to_string(i));
    for (int i = 0; i < 4; ++i) p.push_back("rot_" + std::to_string(i));
    return p;
}

/// Binary little-endian PLY with float32 properties.
inline void write_ply(const std::filesystem::path& path, const GaussianCloud& cloud) {
    const int deg = cloud.sh_degree, width = layout::width(deg), k = sh::coeff_count(deg);
    require(cloud.g.size() % width == 0, "PLY: parameter buffer is not a multiple of the row width ", width);
    const auto props = ply_properties(deg);
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot open '", path.string(), "' for writing");
    os << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n";
    for (const auto& p : props) os << "property float " << p << "\n";
    os << "end_header\n";
    std::vector<float> row(props.size());
    for (std::int64_t i = 0; i < cloud.size(); ++i) {
        const double* g = cloud.g.data() + i * width;
        std::size_t c = 0;
        for (int a = 0; a < 3; ++a) row[c++] = static_cast<float>(g[layout::position + a]);
        for (int a = 0; a < 3; ++a) row[c++] = 0.0f;
        for (int ch = 0; ch < 3; ++ch) row[c++] = static_cast<float>(g[layout::sh + ch]);
        for (int ch = 0; ch < 3; ++ch)
            for (int j = 1; j < k; ++j) row[c++] = static_cast<float>(g[layout::sh + 3 * j + ch]);
        row[c++] = static_cast<float>(g[layout::opacity]);
        for (int a = 0; a < 3; ++a) row[c++] = static_cast<float>(g[layout::log_scale + a]);
        for (int a = 0; a < 4; ++a) row[c++] = static_cast<float>(g[layout::rotation + a]);
        for (float v : row) {
            const std::uint32_t bits = detail::to_le(std::bit_cast<std::uint32_t>(v));
            os.write(reinterpret_cast<const char*>(&bits), 4);
        }
    }
    require(os.good(), "failed to write '", path.string(), "'");
}

inline GaussianCloud read_ply(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "cannot open '", path.string(), "'");
    std::string line;
    std::getline(is, line);
    require(line == "ply", "'", path.string(), "' is not a PLY file");
    std::int64_t count = -1;
    std::vector<std::string> props;
    bool binary_le = false;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            binary_le = fmt == "binary_little_endian";
        } else if (word == "element") {
            std::string name;
            ls >> name >> count;
            require(name == "vertex", "PLY '", path.string(), "': unexpected element '", name, "'");
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            require(type == "float", "PLY '", path.string(), "': property '", name, "' is not float");
            props.push_back(name);
        } else if (word == "end_header") {
            break;
        }
    }
    require(binary_le, "PLY '", path.string(), "': only binary little-endian files are supported");
    require(count >= 0, "PLY '", path.string(), "': missing vertex count");
    const int rest = static_cast<int>(props.size()) - 17;
    int deg = -1;
    for (int d = 0; d <= sh::max_degree; ++d)
        if (3 * (sh::coeff_count(d) - 1) == rest) deg = d;
    require(deg >= 0 && props == ply_properties(deg), "PLY '", path.string(),
            "': property layout does not match the Gaussian layout");
    GaussianCloud cloud;
    cloud.sh_degree = deg;
    const int width = layout::width(deg), k = sh::coeff_count(deg);
    cloud.g.assign(static_cast<std::size_t>(count * width), 0.0);
    std::vector<float> row(props.size());
    for (std::int64_t i = 0; i < count; ++i) {
        for (auto& v : row) {
            std::uint32_t bits = 0;
            is.read(reinterpret_cast<char*>(&bits), 4);
            require(is.gcount() == 4, "PLY '", path.string(), "' is truncated");
            v = std::bit_cast<float>(detail::to_le(bits));
        }
        double* g = cloud.g.data() + i * width;
        std::size_t c = 0;
        for (int a = 0; a < 3; ++a) g[layout::position + a] = row[c++];
        c += 3;
        for (int ch = 0; ch < 3; ++ch) g[layout::sh + ch] = row[c++];
        for (int ch = 0; ch < 3; ++ch)
            for (int j = 1; j < k; ++j) g[layout::sh + 3 * j + ch] = row[c++];
        g[layout::opacity] = row[c++];
        for (int a = 0; a < 3; ++a) g[layout::log_scale + a] = row[c++];
        for (int a = 0; a < 4; ++a) g[layout::rotation + a] = row[c++];
    }
    return cloud;
}

/// Raw parameters of a Gaussian set as a cloud.
template <class T>
GaussianCloud to_cloud(const GaussianSet<T>& gs) {
    GaussianCloud c;
    c.sh_degree = gs.sh_degree;
    c.g.assign(gs.g.values().begin(), gs.g.values().end());
    return c;
}

} // namespace resplat::io
