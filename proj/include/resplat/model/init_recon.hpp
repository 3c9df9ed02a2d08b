#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "resplat/geometry/knn.hpp"
#include "resplat/geometry/pointcloud.hpp"
#include "resplat/model/blocks.hpp"
#include "resplat/model/config.hpp"
#include "resplat/render/gaussians.hpp"
#include "resplat/scene/sample.hpp"

namespace resplat {

inline constexpr std::int64_t feature_stride = 4;
inline constexpr std::int64_t fourier_width(int freqs) { return 3 * 2 * freqs; }

/// Registers every stage-1 parameter (init.* and, for plane sweep, depth.*).
template <class T>
void add_init_params(ModelParams<T>& p, const InitConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const std::int64_t c1 = cfg.c1, mid = std::max<std::int64_t>(8, c1 / 2);
    const std::int64_t raw = 3 * feature_stride * feature_stride;
    p.add("init.enc.conv1.w", {3, 3, 3, mid}, init::xavier<T>(rng, 27, mid, std::sqrt(2.0)));
    p.add("init.enc.conv1.b", {mid}, init::zeros<T>(mid));
    p.add("init.enc.conv2.w", {3, 3, mid, c1}, init::xavier<T>(rng, 9 * mid, c1, std::sqrt(2.0)));
    p.add("init.enc.conv2.b", {c1}, init::zeros<T>(c1));
    p.add("init.enc.proj.w", {c1 + raw, c1}, init::xavier<T>(rng, c1 + raw, c1));
    p.add("init.enc.proj.b", {c1}, init::zeros<T>(c1));
    const std::int64_t fw = fourier_width(cfg.fourier_freqs);
    p.add("init.pos.w", {fw, c1}, init::xavier<T>(rng, fw, c1));
    p.add("init.pos.b", {c1}, init::zeros<T>(c1));
    for (int b = 0; b < cfg.context_blocks; ++b)
        add_block_params(p, rng, "init.ctx." + std::to_string(b), c1, cfg.mlp_ratio);
    const std::int64_t c2 = cfg.c2(), out = c2 * cfg.gaussians_per_point;
    p.add("init.head.w", {c1, out}, init::xavier<T>(rng, c1, out, 0.1));
    std::vector<T> bias = init::zeros<T>(out);
    for (int q = 0; q < cfg.gaussians_per_point; ++q) {
        bias[q * c2 + layout::opacity] = static_cast<T>(cfg.opacity_init_logit);
        bias[q * c2 + layout::rotation] = T(1);
    }
    p.add("init.head.b", {out}, std::move(bias));
    if (cfg.depth == DepthSource::plane_sweep) {
        p.add("depth.match.w", {c1, cfg.match_width}, init::xavier<T>(rng, c1, cfg.match_width));
        p.add("depth.match.b", {cfg.match_width}, init::zeros<T>(cfg.match_width));
        p.add("depth.log_temp", {1}, {static_cast<T>(std::log(10.0))});
    }
}

/// [N, H, W, 3] -> [N, H/4, W/4, C1]: two stride-2 convolutions, concatenated
/// with the pixel-unshuffled image and projected to C1.
template <class T>
Tensor<T> extract_features(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& images) {
    require(images.rank() == 4 && images.dim(3) == 3, "extract_features: expected [N, H, W, 3], got ",
            images.shape());
    require(images.dim(1) % feature_stride == 0 && images.dim(2) % feature_stride == 0,
            "extract_features: image extents ", images.dim(1), "x", images.dim(2), " not divisible by ",
            feature_stride);
    auto x = ops::conv2d(tape, images, p["init.enc.conv1.w"], p["init.enc.conv1.b"], 2, 1);
    x = ops::conv2d(tape, ops::relu(tape, x), p["init.enc.conv2.w"], p["init.enc.conv2.b"], 2, 1);
    auto raw = ops::pixel_unshuffle(tape, images, feature_stride);
    return ops::linear(tape, ops::concat_last(tape, {x, raw}), p["init.enc.proj.w"], p["init.enc.proj.b"]);
}

/// Stacks rank-2 tensors with equal widths along rows.
template <class T>
Tensor<T> concat_rows(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    if (parts.size() == 1) return parts[0];
    const std::int64_t c = parts[0].dim(1);
    std::int64_t rows = 0;
    std::vector<Tensor<T>> flat;
    for (const auto& t : parts) {
        require(t.rank() == 2 && t.dim(1) == c, "concat_rows: width mismatch ", t.shape(), " vs ", parts[0].shape());
        rows += t.dim(0);
        flat.push_back(ops::reshape(tape, t, {t.numel()}));
    }
    return ops::reshape(tape, ops::concat_last(tape, flat), {rows, c});
}

/// Depths from the expected inverse depth under a softmax over per-candidate
/// matching costs. match: [N, h, w, C] features on the grid of `grid_cams`;
/// the result is resized to out_h x out_w.
template <class T>
std::vector<Tensor<T>> plane_sweep_from_features(Tape<T>& tape, const Tensor<T>& match,
                                                 const std::vector<Camera>& grid_cams,
                                                 const std::vector<double>& candidates, const Tensor<T>& log_temp,
                                                 std::int64_t out_h, std::int64_t out_w) {
    const std::int64_t n = match.dim(0), h = match.dim(1), w = match.dim(2), c = match.dim(3);
    require(n >= 2, "plane sweep: needs at least 2 views, got ", n, " (use the oracle depth provider)");
    require(static_cast<std::int64_t>(grid_cams.size()) == n, "plane sweep: ", grid_cams.size(), " cameras for ", n,
            " views");
    require(!candidates.empty(), "plane sweep: no depth candidates");
    for (double d : candidates) require(d > 0, "plane sweep: non-positive candidate depth ", d);
    const std::int64_t P = h * w, D = static_cast<std::int64_t>(candidates.size());
    std::vector<T> inv(static_cast<std::size_t>(D));
    for (std::int64_t d = 0; d < D; ++d) inv[d] = static_cast<T>(1.0 / candidates[d]);
    const auto inv_col = Tensor<T>::from({D, 1}, inv);
    const auto zero_bias = Tensor<T>::zeros({1});
    const auto temp = ops::exp(tape, log_temp);

    std::vector<Tensor<T>> views;
    for (std::int64_t j = 0; j < n; ++j) {
        auto flat = ops::slice_last(tape, ops::reshape(tape, match, {n * P * c}), j * P * c, (j + 1) * P * c);
        views.push_back(ops::reshape(tape, flat, {h, w, c}));
    }
    std::vector<Tensor<T>> depths;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto fi = ops::reshape(tape, views[i], {P, c});
        std::vector<Tensor<T>> costs;
        for (std::int64_t d = 0; d < D; ++d) {
            Tensor<T> acc;
            for (std::int64_t j = 0; j < n; ++j) {
                if (j == i) continue;
                std::vector<double> coords(static_cast<std::size_t>(2 * P));
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t x = 0; x < w; ++x) {
                        const auto pw = unproject_pixel(grid_cams[i], x, y, candidates[d]);
                        const auto pr = project(grid_cams[j], pw);
                        const double u = pr.behind ? -1e6 : pr.u, v = pr.behind ? -1e6 : pr.v;
                        coords[2 * (y * w + x)] = u - 0.5;
                        coords[2 * (y * w + x) + 1] = v - 0.5;
                    }
                auto warped = ops::grid_sample(tape, views[j], coords);
                auto err = ops::mean_last(tape, ops::square(tape, ops::sub(tape, fi, warped)));
                acc = acc.defined() ? ops::add(tape, acc, err) : err;
            }
            costs.push_back(ops::reshape(tape, ops::scale(tape, acc, static_cast<T>(-1.0 / (n - 1))), {P, 1}));
        }
        auto logits = ops::mul_scalar(tape, ops::concat_last(tape, costs), temp);
        auto probs = ops::softmax_rows(tape, logits);
        auto inv_depth = ops::linear(tape, probs, inv_col, zero_bias);
        auto depth = ops::reshape(tape, ops::reciprocal(tape, inv_depth), {1, h, w, 1});
        if (h != out_h || w != out_w) depth = ops::resize_bilinear(tape, depth, out_h, out_w);
        depths.push_back(ops::reshape(tape, depth, {out_h, out_w}));
    }
    return depths;
}

/// Candidates uniform in inverse depth over [near, far].
inline std::vector<double> inverse_depth_candidates(double near, double far, int count) {
    require(count >= 1 && near > 0 && far > near, "plane sweep: invalid candidate range");
    std::vector<double> c(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double t = count == 1 ? 0.5 : static_cast<double>(i) / (count - 1);
        c[i] = 1.0 / (1.0 / far + t * (1.0 / near - 1.0 / far));
    }
    return c;
}

/// Learned plane-sweep depth per input view at full resolution.
template <class T>
std::vector<Tensor<T>> plane_sweep_depth(Tape<T>& tape, const ModelParams<T>& p, const InitConfig& cfg,
                                         const Tensor<T>& features, const std::vector<Camera>& cameras, double near,
                                         double far) {
    require(cameras.size() >= 2, "plane sweep: needs at least 2 views, got ", cameras.size(),
            " (use the oracle depth provider)");
    std::vector<Camera> grid;
    for (const auto& c : cameras) grid.push_back(c.subsampled(feature_stride));
    auto match = ops::linear(tape, features, p["depth.match.w"], p["depth.match.b"]);
    return plane_sweep_from_features(tape, match, grid, inverse_depth_candidates(near, far, cfg.sweep_candidates),
                                     p["depth.log_temp"], cameras[0].height, cameras[0].width);
}

/// sin/cos of (p / radius) * 2^k * pi for k < freqs, per axis: [M, 3] -> [M, 6 freqs].
template <class T>
Tensor<T> fourier_features(Tape<T>& tape, const Tensor<T>& positions, double radius, int freqs) {
    require(positions.rank() == 2 && positions.dim(1) == 3, "fourier_features: expected [M, 3], got ",
            positions.shape());
    const std::int64_t m = positions.dim(0), width = fourier_width(freqs);
    std::vector<T> v(static_cast<std::size_t>(m * width));
    std::vector<double> omega(static_cast<std::size_t>(freqs));
    for (int k = 0; k < freqs; ++k) omega[k] = std::ldexp(std::numbers::pi, k) / radius;
    // Column (a * freqs + k) * 2 holds sin, +1 holds cos.
    for (std::int64_t i = 0; i < m; ++i)
        for (int a = 0; a < 3; ++a)
            for (int k = 0; k < freqs; ++k) {
                const double arg = omega[k] * static_cast<double>(positions[i * 3 + a]);
                v[i * width + (a * freqs + k) * 2] = static_cast<T>(std::sin(arg));
                v[i * width + (a * freqs + k) * 2 + 1] = static_cast<T>(std::cos(arg));
            }
    auto vals = std::make_shared<std::vector<T>>(v);
    return ops::custom<T>(tape, {positions}, {m, width}, std::move(v),
                          [vals, omega, m, width, freqs](std::span<const T> go, const std::vector<T*>& grads) {
                              if (!grads[0]) return;
                              for (std::int64_t i = 0; i < m; ++i)
                                  for (int a = 0; a < 3; ++a)
                                      for (int k = 0; k < freqs; ++k) {
                                          const std::int64_t col = i * width + (a * freqs + k) * 2;
                                          const T s = (*vals)[col], c = (*vals)[col + 1];
                                          grads[0][i * 3 + a] +=
                                              static_cast<T>(omega[k]) * (go[col] * c - go[col + 1] * s);
                                      }
                          });
}

/// Runs the alternating kNN / global attention stack; fills pc.aggregated.
template <class T>
void aggregate_context(Tape<T>& tape, const ModelParams<T>& p, const InitConfig& cfg, PointCloud<T>& pc,
                       double radius, int views) {
    const std::int64_t m = pc.size();
    require(m >= cfg.k, "aggregate_context: ", m, " points but k = ", cfg.k);
    const auto nbr = knn<T>(pc.positions.values(), cfg.k);
    const auto local = Neighborhood::knn_graph(nbr, cfg.k);
    const auto global = Neighborhood::global_for(m, cfg.global_direct_limit, views, pc.grid_h, pc.grid_w);
    auto pos = fourier_features(tape, pc.positions, radius, cfg.fourier_freqs);
    auto x = ops::add(tape, pc.features, ops::linear(tape, pos, p["init.pos.w"], p["init.pos.b"]));
    for (int b = 0; b < cfg.context_blocks; ++b) {
        const bool is_local = b % 2 == 0; // blocks 1, 3, 5 in one-based numbering
        if (is_local && !cfg.use_knn_blocks) continue;
        if (!is_local && !cfg.use_global_blocks) continue;
        x = attention_block(tape, p, "init.ctx." + std::to_string(b), x, is_local ? local : global, cfg.heads);
    }
    pc.aggregated = x;
}

/// Mean distance from each point to its k-1 nearest other points.
template <class T>
double mean_neighbor_spacing(std::span<const T> positions, std::int64_t k) {
    const std::int64_t m = static_cast<std::int64_t>(positions.size() / 3);
    if (m < 2) return 1.0;
    k = std::min(k, m);
    const auto nbr = knn<T>(positions, k);
    double acc = 0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t a = 0; a < k; ++a) {
            const std::int64_t j = nbr[i * k + a];
            if (j == i) continue;
            acc += std::sqrt(detail::sq_dist(positions, i, j));
            ++count;
        }
    return count ? std::max(acc / count, 1e-6) : 1.0;
}

/// Decodes G_pp Gaussians per point; row j * G_pp + q belongs to point j.
template <class T>
GaussianSet<T> decode_gaussians(Tape<T>& tape, const ModelParams<T>& p, const InitConfig& cfg,
                                const PointCloud<T>& pc, double radius) {
    require(pc.aggregated.defined(), "decode_gaussians: context not aggregated");
    const std::int64_t m = pc.size(), gpp = cfg.gaussians_per_point, c2 = cfg.c2();
    auto h = ops::linear(tape, pc.aggregated, p["init.head.w"], p["init.head.b"]);
    h = ops::reshape(tape, h, {m * gpp, c2});
    auto offset = ops::scale(tape, ops::tanh(tape, ops::slice_last(tape, h, 0, 3)),
                             static_cast<T>(cfg.offset_bound * radius));
    auto pos = ops::add(tape, ops::repeat_rows(tape, pc.positions, gpp), offset);
    const double spacing = mean_neighbor_spacing<T>(pc.positions.values(), cfg.k);
    const T log_scale = static_cast<T>(std::log(cfg.scale_init_factor * spacing));
    auto shift = Tensor<T>::zeros({m * gpp, c2 - 3});
    for (std::int64_t r = 0; r < m * gpp; ++r)
        for (int a = 0; a < 3; ++a) shift.mutable_values()[r * (c2 - 3) + layout::log_scale - 3 + a] = log_scale;
    auto rest = ops::add(tape, ops::slice_last(tape, h, 3, c2), shift);
    GaussianSet<T> gs;
    gs.g = ops::concat_last(tape, {pos, rest});
    gs.z = ops::repeat_rows(tape, pc.aggregated, gpp);
    gs.iteration = 0;
    gs.sh_degree = cfg.sh_degree;
    return gs;
}

template <class T>
struct InitResult {
    PointCloud<T> cloud;
    std::vector<Tensor<T>> depths; // full resolution, per input view
    GaussianSet<T> gaussians;
};

/// Stage-1 forward: features, depth, unprojection, context aggregation, decoding.
template <class T>
InitResult<T> initial_reconstruction(Tape<T>& tape, const ModelParams<T>& p, const InitConfig& cfg,
                                     const SceneSample& scene) {
    cfg.validate();
    const int n = static_cast<int>(scene.inputs.size());
    const std::int64_t H = scene.height(), W = scene.width();
    auto images = stack_images<T>(scene.inputs);
    auto feats = extract_features(tape, p, images); // [N, H/4, W/4, C1]
    InitResult<T> out;
    const auto cams = scene.input_cameras();
    if (cfg.depth == DepthSource::oracle) {
        require(scene.depths.size() == scene.inputs.size(), "initial reconstruction: oracle depth requested but the "
                                                            "scene has no depth maps");
        for (const auto& d : scene.depths) out.depths.push_back(d.tensor<T>());
    } else {
        out.depths = plane_sweep_depth(tape, p, cfg, feats, cams, scene.near, scene.far);
    }
    const std::int64_t gh = ceil_div(H, cfg.stride), gw = ceil_div(W, cfg.stride);
    if (gh != feats.dim(1) || gw != feats.dim(2)) feats = ops::resize_bilinear(tape, feats, gh, gw);
    std::vector<Tensor<T>> pts;
    for (int i = 0; i < n; ++i)
        pts.push_back(unproject(tape, cams[i].subsampled(cfg.stride), downsample_depth(tape, out.depths[i], cfg.stride)));
    auto& pc = out.cloud;
    pc.positions = concat_rows(tape, pts);
    pc.features = ops::reshape(tape, feats, {n * gh * gw, static_cast<std::int64_t>(cfg.c1)});
    pc.grid_h = static_cast<int>(gh);
    pc.grid_w = static_cast<int>(gw);
    pc.view_index.resize(static_cast<std::size_t>(n * gh * gw));
    for (std::size_t j = 0; j < pc.view_index.size(); ++j) pc.view_index[j] = static_cast<int>(j / (gh * gw));
    aggregate_context(tape, p, cfg, pc, scene.radius, n);
    out.gaussians = decode_gaussians(tape, p, cfg, pc, scene.radius);
    return out;
}

} // namespace resplat
