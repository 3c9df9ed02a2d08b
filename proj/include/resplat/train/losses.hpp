#pragma once

#include <cmath>
#include <vector>

#include "resplat/model/config.hpp"
#include "resplat/model/feedback.hpp"

namespace resplat {

/// mean |Î - I| + λ · mean |F(Î) - F(I)| over the frozen error-feature pyramid.
/// Views are [H, W, 3] or [N, H, W, 3]; the target is treated as a constant.
template <class T>
Tensor<T> render_loss(Tape<T>& tape, const Tensor<T>& rendered, const Tensor<T>& gt, double lambda,
                      const ErrorFeatureNet<T>& net) {
    require(rendered.shape() == gt.shape(), "render_loss: rendered ", rendered.shape(), " vs ground truth ",
            gt.shape());
    require(lambda >= 0, "render_loss: negative feature weight ", lambda);
    auto loss = ops::mean(tape, ops::abs(tape, ops::sub(tape, rendered, gt)));
    if (lambda == 0) return loss;
    auto batch = [&](Tape<T>& tp, const Tensor<T>& x) {
        return x.rank() == 3 ? ops::reshape(tp, x, {1, x.dim(0), x.dim(1), x.dim(2)}) : x;
    };
    Tape<T> frozen(false);
    const auto target = net(frozen, batch(frozen, gt));
    auto feat = ops::mean(tape, ops::abs(tape, ops::sub(tape, net(tape, batch(tape, rendered)), target)));
    return ops::add(tape, loss, ops::scale(tape, feat, static_cast<T>(lambda)));
}

/// Edge-aware smoothness: mean |∂x D| e^{-|∂x I|} + mean |∂y D| e^{-|∂y I|}, with
/// forward differences and the image gradient averaged over channels.
template <class T>
Tensor<T> depth_smooth_loss(Tape<T>& tape, const Image& image, const Tensor<T>& depth) {
    require(depth.rank() == 2 && depth.dim(0) == image.height && depth.dim(1) == image.width,
            "depth_smooth_loss: depth ", depth.shape(), " does not match image ", image.height, "x", image.width);
    const int h = image.height, w = image.width;
    auto edge_weights = [&](int axis) {
        const int oh = axis == 0 ? h - 1 : h, ow = axis == 1 ? w - 1 : w;
        const int step = axis == 0 ? w : 1;
        std::vector<T> v(static_cast<std::size_t>(oh) * ow);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const int p = y * w + x;
                double g = 0;
                for (int c = 0; c < 3; ++c) g += image.rgb[(p + step) * 3 + c] - image.rgb[p * 3 + c];
                v[y * ow + x] = static_cast<T>(std::exp(-std::abs(g / 3.0)));
            }
        return Tensor<T>::from({oh, ow}, std::move(v));
    };
    Tensor<T> total;
    for (int axis : {1, 0}) {
        if ((axis == 1 ? w : h) < 2) continue;
        auto term = ops::mean(tape, ops::mul(tape, ops::abs(tape, ops::forward_diff(tape, depth, axis)),
                                             edge_weights(axis)));
        total = total.defined() ? ops::add(tape, total, term) : term;
    }
    return total.defined() ? total : Tensor<T>::zeros({1});
}

/// Σ_v render_loss(Î_v, I_v) + α Σ_i depth_smooth_loss(I_i, D̂_i).
template <class T>
Tensor<T> stage1_loss(Tape<T>& tape, const std::vector<Tensor<T>>& rendered, const std::vector<Tensor<T>>& targets,
                      const std::vector<Image>& inputs, const std::vector<Tensor<T>>& depths, const LossConfig& cfg,
                      const ErrorFeatureNet<T>& net) {
    cfg.validate();
    require(!rendered.empty(), "stage1_loss: no target views");
    require(rendered.size() == targets.size(), "stage1_loss: ", rendered.size(), " renders for ", targets.size(),
            " targets");
    require(inputs.size() == depths.size(), "stage1_loss: ", depths.size(), " depth maps for ", inputs.size(),
            " input views");
    Tensor<T> loss = render_loss(tape, rendered[0], targets[0], cfg.lambda, net);
    for (std::size_t v = 1; v < rendered.size(); ++v)
        loss = ops::add(tape, loss, render_loss(tape, rendered[v], targets[v], cfg.lambda, net));
    if (cfg.alpha > 0)
        for (std::size_t i = 0; i < inputs.size(); ++i)
            loss = ops::add(tape, loss,
                            ops::scale(tape, depth_smooth_loss(tape, inputs[i], depths[i]), static_cast<T>(cfg.alpha)));
    return loss;
}

/// Weights γ^{n-1-t} for t = 0..n-1, so the last prediction has weight 1.
inline std::vector<double> stage2_weights(int n, double gamma) {
    require(n > 0, "stage2 weights: empty trajectory");
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) w[t] = std::pow(gamma, n - 1 - t);
    return w;
}

/// Σ_t γ^{n-1-t} Σ_v render_loss(Î_v^t, I_v). renders[t][v] is view v of supervised prediction t.
template <class T>
Tensor<T> stage2_loss(Tape<T>& tape, const std::vector<std::vector<Tensor<T>>>& renders,
                      const std::vector<Tensor<T>>& targets, const LossConfig& cfg, const ErrorFeatureNet<T>& net) {
    cfg.validate();
    require(!renders.empty(), "stage2_loss: empty trajectory");
    const auto w = stage2_weights(static_cast<int>(renders.size()), cfg.gamma);
    Tensor<T> loss;
    for (std::size_t t = 0; t < renders.size(); ++t) {
        require(renders[t].size() == targets.size() && !targets.empty(), "stage2_loss: prediction ", t, " has ",
                renders[t].size(), " renders for ", targets.size(), " targets");
        for (std::size_t v = 0; v < targets.size(); ++v) {
            auto term = ops::scale(tape, render_loss(tape, renders[t][v], targets[v], cfg.lambda, net),
                                   static_cast<T>(w[t]));
            loss = loss.defined() ? ops::add(tape, loss, term) : term;
        }
    }
    return loss;
}

} // namespace resplat
