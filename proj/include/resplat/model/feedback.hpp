#pragma once

#include <string>
#include <vector>

#include "resplat/model/blocks.hpp"
#include "resplat/model/config.hpp"
#include "resplat/model/init_recon.hpp"
#include "resplat/render/rasterizer.hpp"

namespace resplat {

/// Frozen three-stage convolutional pyramid (1/2, 1/4, 1/8 resolution; widths
/// 16, 24, 24). Weights are orthonormal projections drawn from a fixed seed.
template <class T>
class ErrorFeatureNet {
public:
    static constexpr std::uint64_t default_seed = 0x5eed'f00d;
    static constexpr int widths[3] = {16, 24, 24};
    static constexpr std::int64_t channels = 16 + 24 + 24;

    explicit ErrorFeatureNet(std::uint64_t seed = default_seed) {
        Rng rng(seed);
        std::int64_t cin = 3;
        for (int s = 0; s < 3; ++s) {
            const std::int64_t cout = widths[s];
            // Gain sqrt(2) roughly preserves activation scale through ReLU.
            weights_[s] = Tensor<T>::from({3, 3, cin, cout}, init::orthogonal<T>(rng, 9 * cin, cout, std::sqrt(2.0)));
            cin = cout;
        }
    }

    /// [N, H, W, 3] in [0, 1] -> [N, H/4, W/4, 64].
    Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& images) const {
        require(images.rank() == 4 && images.dim(3) == 3, "error features: expected [N, H, W, 3], got ",
                images.shape());
        const std::int64_t h4 = images.dim(1) / 4, w4 = images.dim(2) / 4;
        require(images.dim(1) % 4 == 0 && images.dim(2) % 4 == 0 && h4 > 0 && w4 > 0,
                "error features: image extents ", images.dim(1), "x", images.dim(2), " not divisible by 4");
        auto x = ops::add_scalar(tape, images, T(-0.5));
        std::vector<Tensor<T>> levels;
        for (int s = 0; s < 3; ++s) {
            x = ops::relu(tape, ops::conv2d(tape, x, weights_[s], Tensor<T>(), 2, 1));
            levels.push_back(x.dim(1) == h4 && x.dim(2) == w4 ? x : ops::resize_bilinear(tape, x, h4, w4));
        }
        return ops::concat_last(tape, levels);
    }

    const Tensor<T>& weight(int stage) const { return weights_[stage]; }

private:
    Tensor<T> weights_[3];
};

inline std::int64_t error_channels(ErrorMode mode) {
    return mode == ErrorMode::feature ? ErrorFeatureNet<double>::channels : 3;
}

inline std::int64_t error_heads(ErrorMode mode) { return mode == ErrorMode::feature ? 4 : 1; }

/// Registers the error propagation blocks (prop.*).
template <class T>
void add_feedback_params(ModelParams<T>& p, const RecurrentConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const std::int64_t c3 = error_channels(cfg.error_mode);
    for (int b = 0; b < cfg.propagation_blocks; ++b) add_block_params(p, rng, "prop." + std::to_string(b), c3, 2);
}

/// Renders every camera from G; returns the views and the stacked [N, H, W, 3] colors.
template <class T>
struct InputRenders {
    std::vector<RenderedView<T>> views;
    Tensor<T> stacked;
};

template <class T>
InputRenders<T> render_inputs(Tape<T>& tape, const GaussianSet<T>& gs, const std::vector<Camera>& cameras,
                              const RenderSettings& settings = {}) {
    require(!cameras.empty(), "render_inputs: no cameras");
    InputRenders<T> out;
    std::vector<Tensor<T>> flat;
    for (const auto& cam : cameras) {
        out.views.push_back(render(tape, gs, cam, settings));
        flat.push_back(ops::reshape(tape, out.views.back().rgb, {out.views.back().rgb.numel()}));
    }
    auto all = flat.size() == 1 ? flat[0] : ops::concat_last(tape, flat);
    out.stacked = ops::reshape(
        tape, all, {static_cast<std::int64_t>(cameras.size()), cameras[0].height, cameras[0].width, 3});
    return out;
}

/// Raw error Ê = F(rendered) - F(gt) at 1/4 resolution, [N, H/4, W/4, C3].
/// The ground-truth branch is evaluated off the tape.
template <class T>
Tensor<T> feature_error(Tape<T>& tape, const Tensor<T>& rendered, const Tensor<T>& gt, ErrorMode mode,
                        const ErrorFeatureNet<T>& net) {
    require(rendered.shape() == gt.shape(), "feature_error: rendered ", rendered.shape(), " vs ground truth ",
            gt.shape());
    if (mode == ErrorMode::rgb) {
        require(rendered.rank() == 4 && rendered.dim(1) % 4 == 0 && rendered.dim(2) % 4 == 0,
                "feature_error: image extents ", rendered.shape(), " not divisible by 4");
        const std::int64_t h4 = rendered.dim(1) / 4, w4 = rendered.dim(2) / 4;
        auto diff = ops::sub(tape, rendered, gt);
        return ops::resize_bilinear(tape, diff, h4, w4);
    }
    Tape<T> frozen(false);
    const auto target = net(frozen, gt);
    return ops::sub(tape, net(tape, rendered), target);
}

/// Two global blocks over all raw error vectors, read out in point order and
/// repeated per Gaussian. raw: [N, h, w, C3] on the point grid.
template <class T>
Tensor<T> propagate_error(Tape<T>& tape, const ModelParams<T>& p, const RecurrentConfig& cfg, const Tensor<T>& raw,
                          std::int64_t gaussians, int gaussians_per_point, std::int64_t direct_limit = 65536) {
    require(raw.rank() == 4, "propagate_error: expected [N, h, w, C], got ", raw.shape());
    const std::int64_t n = raw.dim(0), h = raw.dim(1), w = raw.dim(2), c3 = raw.dim(3);
    const std::int64_t m = n * h * w;
    require(m * gaussians_per_point == gaussians, "propagate_error: ", m, " error vectors x ", gaussians_per_point,
            " Gaussians per point does not match ", gaussians, " Gaussians");
    require(c3 == error_channels(cfg.error_mode), "propagate_error: error width ", c3, " does not match mode ",
            to_string(cfg.error_mode));
    auto x = ops::reshape(tape, raw, {m, c3});
    const auto nb = Neighborhood::global_for(m, direct_limit, static_cast<int>(n), static_cast<int>(h),
                                             static_cast<int>(w));
    for (int b = 0; b < cfg.propagation_blocks; ++b)
        x = attention_block(tape, p, "prop." + std::to_string(b), x, nb, error_heads(cfg.error_mode));
    return ops::repeat_rows(tape, x, gaussians_per_point);
}

} // namespace resplat
