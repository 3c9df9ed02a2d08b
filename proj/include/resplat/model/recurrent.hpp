#pragma once

#include <string>
#include <vector>

#include "resplat/model/feedback.hpp"

namespace resplat {

template <class T>
struct GaussianDelta {
    Tensor<T> dg; // [M, C2]
    Tensor<T> dz; // [M, C1]
};

/// Registers the update network (rec.*). Output heads start at zero.
template <class T>
void add_recurrent_params(ModelParams<T>& p, const InitConfig& icfg, const RecurrentConfig& cfg,
                          std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const std::int64_t c1 = icfg.c1, c2 = icfg.c2(), c3 = error_channels(cfg.error_mode);
    const std::int64_t cin = c2 + c1 + c3;
    p.add("rec.in.w", {cin, c1}, init::xavier<T>(rng, cin, c1));
    p.add("rec.in.b", {c1}, init::zeros<T>(c1));
    for (int b = 0; b < cfg.blocks; ++b) add_block_params(p, rng, "rec.blk." + std::to_string(b), c1, icfg.mlp_ratio);
    p.add("rec.head.ln.g", {c1}, init::constant<T>(c1, T(1)));
    p.add("rec.head.ln.b", {c1}, init::zeros<T>(c1));
    p.add("rec.dg.w", {c1, c2}, init::zeros<T>(c1 * c2));
    p.add("rec.dg.b", {c2}, init::zeros<T>(c2));
    p.add("rec.dz.w", {c1, c1}, init::zeros<T>(c1 * c1));
    p.add("rec.dz.b", {c1}, init::zeros<T>(c1));
}

/// Registers the full model: stage 1, error propagation and update network.
template <class T>
ModelParams<T> make_model(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams<T> p;
    add_init_params(p, cfg.init, seed);
    add_feedback_params(p, cfg.recurrent, seed + 1);
    add_recurrent_params(p, cfg.init, cfg.recurrent, seed + 2);
    return p;
}

/// Predicts additive updates from (g, z, e) with kNN attention over current positions.
template <class T>
GaussianDelta<T> update_step(Tape<T>& tape, const ModelParams<T>& p, const InitConfig& icfg,
                             const RecurrentConfig& cfg, const GaussianSet<T>& gs, const Tensor<T>& error,
                             double radius) {
    const std::int64_t m = gs.size(), c2 = icfg.c2();
    require(gs.g.dim(1) == c2 && gs.z.rank() == 2 && gs.z.dim(0) == m && gs.z.dim(1) == icfg.c1,
            "update_step: Gaussian set ", gs.g.shape(), " / ", gs.z.shape(), " does not match the config");
    require(error.rank() == 2 && error.dim(0) == m && error.dim(1) == error_channels(cfg.error_mode),
            "update_step: error ", error.shape(), " not aligned with ", m, " Gaussians");
    const std::int64_t k = std::min<std::int64_t>(cfg.k, m);
    auto pos = ops::slice_last(tape, gs.g, 0, 3);
    const auto nb = Neighborhood::knn_graph(knn<T>(pos.values(), k), k);
    auto x = ops::linear(tape, ops::concat_last(tape, {gs.g, gs.z, error}), p["rec.in.w"], p["rec.in.b"]);
    for (int b = 0; b < cfg.blocks; ++b)
        x = attention_block(tape, p, "rec.blk." + std::to_string(b), x, nb, icfg.heads);
    x = ops::layer_norm(tape, x, p["rec.head.ln.g"], p["rec.head.ln.b"]);
    auto raw = ops::linear(tape, x, p["rec.dg.w"], p["rec.dg.b"]);
    auto dpos = ops::scale(tape, ops::tanh(tape, ops::slice_last(tape, raw, 0, 3)),
                           static_cast<T>(cfg.position_delta_bound * radius));
    GaussianDelta<T> d;
    d.dg = ops::concat_last(tape, {dpos, ops::slice_last(tape, raw, 3, c2)});
    d.dz = ops::linear(tape, x, p["rec.dz.w"], p["rec.dz.b"]);
    return d;
}

/// g + Δg and z + Δz in raw parameter space; the iteration index advances.
template <class T>
GaussianSet<T> apply_delta(Tape<T>& tape, const GaussianSet<T>& gs, const GaussianDelta<T>& d) {
    require(d.dg.shape() == gs.g.shape() && d.dz.shape() == gs.z.shape(), "apply_delta: delta ", d.dg.shape(), " / ",
            d.dz.shape(), " does not match ", gs.g.shape(), " / ", gs.z.shape());
    GaussianSet<T> out;
    out.g = ops::add(tape, gs.g, d.dg);
    out.z = ops::add(tape, gs.z, d.dz);
    out.iteration = gs.iteration + 1;
    out.sh_degree = gs.sh_degree;
    return out;
}

template <class T>
struct RecurrentContext {
    const ModelParams<T>* params = nullptr;
    const ModelConfig* config = nullptr;
    const ErrorFeatureNet<T>* error_net = nullptr;
    RenderSettings render;
};

/// One feedback step: render inputs, feature error, propagation, update.
template <class T>
GaussianSet<T> recurrent_step(Tape<T>& tape, const RecurrentContext<T>& ctx, const GaussianSet<T>& gs,
                              const SceneSample& scene, const Tensor<T>& gt_inputs) {
    const auto& icfg = ctx.config->init;
    const auto& rcfg = ctx.config->recurrent;
    const std::int64_t n = static_cast<std::int64_t>(scene.inputs.size());
    const std::int64_t gh = ceil_div(scene.height(), icfg.stride), gw = ceil_div(scene.width(), icfg.stride);
    const std::int64_t c3 = error_channels(rcfg.error_mode);
    Tensor<T> error;
    if (rcfg.zero_error) {
        error = Tensor<T>::zeros({gs.size(), c3});
    } else {
        auto rendered = render_inputs(tape, gs, scene.input_cameras(), ctx.render);
        auto raw = feature_error(tape, rendered.stacked, gt_inputs, rcfg.error_mode, *ctx.error_net);
        if (raw.dim(1) != gh || raw.dim(2) != gw) raw = ops::resize_bilinear(tape, raw, gh, gw);
        error = propagate_error(tape, *ctx.params, rcfg, raw, gs.size(), icfg.gaussians_per_point,
                                icfg.global_direct_limit);
    }
    require(error.dim(0) == gs.size(), "recurrent step: ", error.dim(0), " error rows for ", gs.size(),
            " Gaussians (", n, " views)");
    auto delta = update_step(tape, *ctx.params, icfg, rcfg, gs, error, scene.radius);
    return apply_delta(tape, gs, delta);
}

/// Returns [G⁰, G¹, …, G^T] with weights shared across steps.
template <class T>
std::vector<GaussianSet<T>> run_recurrent(Tape<T>& tape, const RecurrentContext<T>& ctx, const GaussianSet<T>& g0,
                                          const SceneSample& scene, int iterations) {
    require(iterations >= 0, "run_recurrent: negative iteration count ", iterations);
    std::vector<GaussianSet<T>> traj{g0};
    if (iterations == 0) return traj;
    const auto gt = stack_images<T>(scene.inputs);
    for (int t = 0; t < iterations; ++t) {
        GaussianSet<T> cur = traj.back();
        if (ctx.config->recurrent.detach_between_steps && t > 0) {
            cur.g = cur.g.detach();
            cur.z = cur.z.detach();
            cur.g.set_requires_grad(false);
            cur.z.set_requires_grad(false);
        }
        traj.push_back(recurrent_step(tape, ctx, cur, scene, gt));
    }
    return traj;
}

} // namespace resplat
