#pragma once

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "resplat/core/rng.hpp"
#include "resplat/render/rasterizer.hpp"
#include "resplat/scene/sample.hpp"

namespace resplat {

/// Parameters of a synthetic room scene: textured walls enclosing a few objects,
/// seen from cameras on a jittered orbit arc.
struct SynthSpec {
    int inputs = 4;
    int targets = 2;
    int width = 48;
    int height = 32;
    int sh_degree = 1;
    int objects = 3;              // spheres and boxes near the center
    int object_gaussians = 600;   // surfels shared among objects
    double room = 4.0;            // half extent of the enclosing box
    double wall_spacing = 0.35;   // surfel spacing on the walls
    double orbit_radius = 2.0;
    double orbit_arc_deg = 50.0;  // input cameras span this arc
    double height_jitter = 0.2;
    double look_jitter = 0.15;
    double fov_deg = 60.0;        // horizontal field of view
    double texture_frequency = 1.5;

    void validate() const {
        require(inputs > 0, "synth: need at least one input view");
        require(targets > 0, "synth: need at least one target view");
        require(width > 0 && height > 0, "synth: image size must be positive");
        require(sh_degree >= 0 && sh_degree <= sh::max_degree, "synth: unsupported SH degree ", sh_degree);
        require(room > orbit_radius + 0.5, "synth: cameras must stay inside the room");
        require(wall_spacing > 0 && fov_deg > 0 && fov_deg < 170, "synth: invalid spacing or field of view");
    }
};

namespace detail {

/// Unit quaternion (w, x, y, z) rotating +z onto n.
inline Eigen::Vector4d quat_to_normal(const Eigen::Vector3d& n) {
    const auto q = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), n.normalized());
    return {q.w(), q.x(), q.y(), q.z()};
}

/// Smooth random color field: base plus two sinusoids per channel.
struct Texture {
    Eigen::Vector3d base;
    Eigen::Vector3d amp[2];
    Eigen::Vector3d freq[2];
    double phase[2][3];

    Texture(Rng& rng, double frequency) {
        base = Eigen::Vector3d(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8));
        for (int k = 0; k < 2; ++k) {
            amp[k] = Eigen::Vector3d(rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2));
            freq[k] = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()) * frequency;
            for (auto& p : phase[k]) p = rng.uniform(0, 2 * std::numbers::pi);
        }
    }
    Eigen::Vector3d operator()(const Eigen::Vector3d& x) const {
        Eigen::Vector3d c = base;
        for (int k = 0; k < 2; ++k)
            for (int ch = 0; ch < 3; ++ch) c[ch] += amp[k][ch] * std::sin(freq[k].dot(x) + phase[k][ch]);
        return c.cwiseMax(0.02).cwiseMin(0.98);
    }
};

struct SurfelWriter {
    GaussianCloud& cloud;
    Rng& rng;

    void add(const Eigen::Vector3d& pos, const Eigen::Vector3d& normal, double size, const Eigen::Vector3d& rgb) {
        const int width = layout::width(cloud.sh_degree);
        std::vector<double> row(static_cast<std::size_t>(width), 0.0);
        for (int a = 0; a < 3; ++a) row[layout::position + a] = pos[a];
        row[layout::opacity] = 3.0;
        row[layout::log_scale] = std::log(size);
        row[layout::log_scale + 1] = std::log(size);
        row[layout::log_scale + 2] = std::log(0.05 * size);
        const auto q = quat_to_normal(normal);
        for (int a = 0; a < 4; ++a) row[layout::rotation + a] = q[a];
        for (int ch = 0; ch < 3; ++ch) row[layout::sh + ch] = (rgb[ch] - 0.5) / sh::C0;
        for (int k = 1; k < sh::coeff_count(cloud.sh_degree); ++k)
            for (int ch = 0; ch < 3; ++ch) row[layout::sh + 3 * k + ch] = rng.normal(0, 0.03);
        cloud.g.insert(cloud.g.end(), row.begin(), row.end());
    }
};

} // namespace detail

/// Ground-truth Gaussians of the synthetic scene.
inline GaussianCloud synth_gaussians(const SynthSpec& spec, Rng& rng) {
    GaussianCloud cloud;
    cloud.sh_degree = spec.sh_degree;
    detail::SurfelWriter out{cloud, rng};
    const double R = spec.room, sp = spec.wall_spacing;
    const int cells = static_cast<int>(std::ceil(2 * R / sp));
    // Six walls facing inward.
    for (int axis = 0; axis < 3; ++axis)
        for (int side : {-1, 1}) {
            detail::Texture tex(rng, spec.texture_frequency);
            Eigen::Vector3d normal = Eigen::Vector3d::Zero();
            normal[axis] = -side;
            const int u = (axis + 1) % 3, v = (axis + 2) % 3;
            for (int i = 0; i < cells; ++i)
                for (int j = 0; j < cells; ++j) {
                    Eigen::Vector3d p;
                    p[axis] = side * R;
                    p[u] = -R + (i + 0.5 + rng.uniform(-0.2, 0.2)) * (2 * R / cells);
                    p[v] = -R + (j + 0.5 + rng.uniform(-0.2, 0.2)) * (2 * R / cells);
                    out.add(p, normal, 0.75 * sp, tex(p));
                }
        }
    // Objects: spheres and boxes with surfels on their surfaces.
    const int per = spec.objects > 0 ? spec.object_gaussians / spec.objects : 0;
    for (int o = 0; o < spec.objects; ++o) {
        detail::Texture tex(rng, 2 * spec.texture_frequency);
        const Eigen::Vector3d center(rng.uniform(-0.6, 0.6), rng.uniform(-0.5, 0.5), rng.uniform(-0.6, 0.6));
        const double size = rng.uniform(0.25, 0.45);
        const bool sphere = o % 2 == 0;
        const double area = sphere ? 4 * std::numbers::pi * size * size : 24 * size * size;
        const double s = std::sqrt(area / std::max(per, 1));
        for (int k = 0; k < per; ++k) {
            Eigen::Vector3d n(rng.normal(), rng.normal(), rng.normal());
            n.normalize();
            Eigen::Vector3d p;
            if (sphere) {
                p = center + size * n;
            } else {
                const int face = static_cast<int>(rng.uniform_int(0, 5));
                n = Eigen::Vector3d::Zero();
                n[face / 2] = face % 2 ? 1.0 : -1.0;
                p = center + size * n;
                p[(face / 2 + 1) % 3] += rng.uniform(-size, size);
                p[(face / 2 + 2) % 3] += rng.uniform(-size, size);
            }
            out.add(p, n, 0.8 * s, tex(p));
        }
    }
    return cloud;
}

/// Camera on the orbit at angle theta (radians) with jitter.
inline Camera orbit_camera(const SynthSpec& spec, Rng& rng, double theta) {
    const Eigen::Vector3d eye(spec.orbit_radius * std::sin(theta), rng.uniform(-1, 1) * spec.height_jitter,
                              -spec.orbit_radius * std::cos(theta));
    const Eigen::Vector3d target(rng.normal(0, spec.look_jitter), rng.normal(0, spec.look_jitter),
                                 rng.normal(0, spec.look_jitter));
    const double f = spec.width / (2 * std::tan(spec.fov_deg * std::numbers::pi / 360));
    return look_at(eye, target, Eigen::Vector3d::UnitY(), f, f, spec.width, spec.height);
}

/// Renders a ground-truth cloud into a camera; returns the image and expected depth.
inline std::pair<Image, DepthMap> render_truth(const GaussianCloud& cloud, const Camera& cam,
                                               const RenderSettings& settings = {}) {
    auto st = render_forward<double>(cloud.g, cloud.size(), cloud.sh_degree, cam, settings);
    Image img(cam.width, cam.height);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<float>(st->rgb[i]);
    DepthMap d{cam.width, cam.height, std::vector<float>(st->depth.begin(), st->depth.end())};
    return {img, d};
}

/// Deterministic synthetic scene for a seed.
inline SceneSample gen_scene(std::uint64_t seed, const SynthSpec& spec) {
    spec.validate();
    Rng rng(seed);
    SceneSample s;
    s.seed = seed;
    s.truth = synth_gaussians(spec, rng);
    s.radius = spec.room;
    s.near = 0.25 * (spec.room - spec.orbit_radius);
    s.far = 2.5 * spec.room;
    const double arc = spec.orbit_arc_deg * std::numbers::pi / 180;
    const double start = rng.uniform(0, 2 * std::numbers::pi);
    for (int i = 0; i < spec.inputs; ++i) {
        const double t = spec.inputs == 1 ? 0.5 : static_cast<double>(i) / (spec.inputs - 1);
        auto cam = orbit_camera(spec, rng, start + (t - 0.5) * arc);
        auto [img, depth] = render_truth(s.truth, cam);
        // Pixels no surfel reaches get the farthest observed depth.
        float far = 0;
        for (float d : depth.depth) far = std::max(far, d);
        for (auto& d : depth.depth)
            if (!(d > 0)) d = far > 0 ? far : static_cast<float>(s.far);
        s.inputs.push_back({cam, img});
        s.depths.push_back(std::move(depth));
    }
    for (int v = 0; v < spec.targets; ++v) {
        auto cam = orbit_camera(spec, rng, start + rng.uniform(-0.4, 0.4) * arc);
        s.targets.push_back({cam, render_truth(s.truth, cam).first});
    }
    return s;
}

} // namespace resplat
