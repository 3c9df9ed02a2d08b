#pragma once

#include <vector>

#include "resplat/geometry/camera.hpp"
#include "resplat/tensor/ops.hpp"

namespace resplat {

/// Points unprojected from subsampled depth grids, ordered view-major then
/// row-major, so point j and grid cell j of the stacked per-view grids coincide.
template <class T>
struct PointCloud {
    Tensor<T> positions;  // [M, 3]
    Tensor<T> features;   // [M, C1]
    Tensor<T> aggregated; // [M, C1], filled by context aggregation
    std::vector<int> view_index;
    int grid_h = 0; // per-view grid extents
    int grid_w = 0;

    std::int64_t size() const { return positions.defined() ? positions.dim(0) : 0; }
};

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

/// Number of points for N views of HxW at subsample stride s.
inline std::int64_t point_count(std::int64_t views, std::int64_t height, std::int64_t width, std::int64_t stride) {
    return views * ceil_div(height, stride) * ceil_div(width, stride);
}

/// Bilinear resize of a [H, W] depth map to [ceil(H/s), ceil(W/s)].
template <class T>
Tensor<T> downsample_depth(Tape<T>& tape, const Tensor<T>& depth, std::int64_t stride) {
    require(depth.rank() == 2, "downsample_depth: expected [H, W], got ", depth.shape());
    require(stride > 0, "downsample_depth: stride must be positive");
    bool any_positive = false;
    for (T d : depth.values()) any_positive = any_positive || d > T(0);
    require(any_positive, "downsample_depth: depth map has no positive values");
    const auto h = depth.dim(0), w = depth.dim(1);
    if (stride == 1) return depth;
    auto grid = ops::reshape(tape, depth, {h, w, 1});
    auto small = ops::resize_bilinear(tape, grid, ceil_div(h, stride), ceil_div(w, stride));
    return ops::reshape(tape, small, {ceil_div(h, stride), ceil_div(w, stride)});
}

/// Lifts every cell of a depth grid to a world point. `camera` must already be
/// the subsampled camera matching the grid. Differentiable in depth.
template <class T>
Tensor<T> unproject(Tape<T>& tape, const Camera& camera, const Tensor<T>& depth) {
    require(depth.rank() == 2 && depth.dim(0) == camera.height && depth.dim(1) == camera.width,
            "unproject: depth ", depth.shape(), " does not match camera grid ", camera.height, "x", camera.width);
    require(std::abs(camera.K.determinant()) > 1e-12, "unproject: singular intrinsics");
    const auto h = depth.dim(0), w = depth.dim(1);
    const Eigen::Matrix3d Kinv = camera.K.inverse();
    const Eigen::Matrix3d Rt = camera.R.transpose();
    const Eigen::Vector3d offset = -Rt * camera.t;
    // world = Rᵀ ray d - Rᵀ t; store Rᵀ ray per cell.
    std::vector<double> dirs(static_cast<std::size_t>(h * w * 3));
    std::vector<T> v(static_cast<std::size_t>(h * w * 3));
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t i = y * w + x;
            const Eigen::Vector3d dir = Rt * (Kinv * Eigen::Vector3d(x + 0.5, y + 0.5, 1.0));
            const double d = static_cast<double>(depth[i]);
            require(d > 0, "unproject: non-positive depth ", d, " at cell (", x, ", ", y, ")");
            for (int a = 0; a < 3; ++a) {
                dirs[3 * i + a] = dir[a];
                v[3 * i + a] = static_cast<T>(dir[a] * d + offset[a]);
            }
        }
    return ops::custom<T>(tape, {depth}, {h * w, 3}, std::move(v),
                          [dirs = std::move(dirs)](std::span<const T> go, const std::vector<T*>& grads) {
                              if (!grads[0]) return;
                              for (std::size_t i = 0; i < dirs.size() / 3; ++i)
                                  for (int a = 0; a < 3; ++a)
                                      grads[0][i] += go[3 * i + a] * static_cast<T>(dirs[3 * i + a]);
                          });
}

} // namespace resplat
