#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>

#include "resplat/io/image.hpp"
#include "resplat/io/pfm.hpp"
#include "resplat/io/ply.hpp"
#include "resplat/scene/sample.hpp"

namespace resplat::io {

namespace fs = std::filesystem;

inline nlohmann::json camera_json(const Camera& c) {
    nlohmann::json j;
    j["fx"] = c.fx();
    j["fy"] = c.fy();
    j["cx"] = c.cx();
    j["cy"] = c.cy();
    j["width"] = c.width;
    j["height"] = c.height;
    std::vector<double> R(9), t(3);
    for (int r = 0; r < 3; ++r) {
        for (int k = 0; k < 3; ++k) R[r * 3 + k] = c.R(r, k);
        t[r] = c.t[r];
    }
    j["R"] = R;
    j["t"] = t;
    return j;
}

inline Camera camera_from_json(const nlohmann::json& j, const std::string& where) {
    for (const char* key : {"fx", "fy", "cx", "cy", "width", "height", "R", "t"})
        require(j.contains(key), where, ": camera is missing '", key, "'");
    const auto R = j.at("R").get<std::vector<double>>();
    const auto t = j.at("t").get<std::vector<double>>();
    require(R.size() == 9, where, ": R must have 9 row-major entries, got ", R.size());
    require(t.size() == 3, where, ": t must have 3 entries, got ", t.size());
    Eigen::Matrix3d Rm;
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) Rm(r, k) = R[r * 3 + k];
    auto cam = Camera::make(j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                            j.at("cy").get<double>(), j.at("width").get<int>(), j.at("height").get<int>(), Rm,
                            Eigen::Vector3d(t[0], t[1], t[2]));
    try {
        cam.validate();
    } catch (const Error& e) {
        fail(where, ": ", e.what());
    }
    return cam;
}

struct CameraEntry {
    std::string name;
    std::string role; // input | target
    Camera camera;
};

/// Reads only the camera list of a cameras.json.
inline std::vector<CameraEntry> read_cameras(const fs::path& path) {
    std::ifstream is(path);
    require(is.good(), "cannot open '", path.string(), "'");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        fail("'", path.string(), "' is not valid JSON: ", e.what());
    }
    require(j.contains("views") && j["views"].is_array(), "'", path.string(), "' has no 'views' array");
    std::vector<CameraEntry> out;
    for (const auto& v : j["views"]) {
        CameraEntry e;
        e.name = v.value("name", std::string("view_") + std::to_string(out.size()));
        e.role = v.value("role", std::string("target"));
        require(e.role == "input" || e.role == "target", path.string(), ": view '", e.name, "' has role '", e.role,
                "' (expected input or target)");
        e.camera = camera_from_json(v, path.string() + " view '" + e.name + "'");
        out.push_back(std::move(e));
    }
    return out;
}

/// Writes cameras.json, 8-bit images (PNG by default), PFM depth for input views,
/// and gt_gaussians.ply when ground truth exists.
inline void save_scene_dir(const SceneSample& s, const fs::path& dir, const std::string& image_ext = ".png") {
    s.validate();
    fs::create_directories(dir);
    nlohmann::json j;
    j["width"] = s.width();
    j["height"] = s.height();
    j["radius"] = s.radius;
    j["near"] = s.near;
    j["far"] = s.far;
    j["seed"] = s.seed;
    j["views"] = nlohmann::json::array();
    auto add = [&](const View& v, const std::string& role, int idx, const DepthMap* depth) {
        char name[32];
        std::snprintf(name, sizeof name, "%s_%03d", role.c_str(), idx);
        auto cj = camera_json(v.camera);
        cj["name"] = name;
        cj["role"] = role;
        cj["image"] = std::string(name) + image_ext;
        write_image(dir / (std::string(name) + image_ext), v.image);
        if (depth) {
            cj["depth"] = std::string(name) + ".pfm";
            write_pfm(dir / (std::string(name) + ".pfm"), *depth);
        }
        j["views"].push_back(cj);
    };
    for (std::size_t i = 0; i < s.inputs.size(); ++i)
        add(s.inputs[i], "input", static_cast<int>(i), s.depths.empty() ? nullptr : &s.depths[i]);
    for (std::size_t i = 0; i < s.targets.size(); ++i) add(s.targets[i], "target", static_cast<int>(i), nullptr);
    if (s.truth.size() > 0) {
        j["ground_truth"] = "gt_gaussians.ply";
        write_ply(dir / "gt_gaussians.ply", s.truth);
    }
    std::ofstream os(dir / "cameras.json");
    require(os.good(), "cannot write '", (dir / "cameras.json").string(), "'");
    os << std::setw(2) << j << "\n";
}

inline SceneSample load_scene_dir(const fs::path& dir) {
    const auto cj = dir / "cameras.json";
    require(fs::exists(cj), "scene directory '", dir.string(), "' has no cameras.json");
    std::ifstream is(cj);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        fail("'", cj.string(), "' is not valid JSON: ", e.what());
    }
    SceneSample s;
    s.radius = j.value("radius", 1.0);
    s.near = j.value("near", 0.1);
    s.far = j.value("far", 100.0);
    s.seed = j.value("seed", std::uint64_t{0});
    const auto cams = read_cameras(cj);
    const auto& views = j.at("views");
    bool any_depth = false, all_depth = true;
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const auto& v = views[i];
        require(v.contains("image"), cj.string(), ": view '", cams[i].name, "' has no image");
        View view{cams[i].camera, read_image(dir / v.at("image").get<std::string>())};
        if (cams[i].role == "input") {
            if (v.contains("depth")) {
                s.depths.push_back(read_pfm(dir / v.at("depth").get<std::string>()));
                any_depth = true;
            } else {
                all_depth = false;
            }
            s.inputs.push_back(std::move(view));
        } else {
            s.targets.push_back(std::move(view));
        }
    }
    require(!any_depth || all_depth, cj.string(), ": depth maps must be given for all input views or none");
    if (j.contains("ground_truth")) s.truth = read_ply(dir / j.at("ground_truth").get<std::string>());
    try {
        s.validate();
    } catch (const Error& e) {
        fail("scene '", dir.string(), "': ", e.what());
    }
    return s;
}

} // namespace resplat::io
