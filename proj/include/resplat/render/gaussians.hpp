#pragma once

#include "resplat/render/sh.hpp"
#include "resplat/tensor/tensor.hpp"

namespace resplat {

/// Column layout of a raw Gaussian parameter row:
/// [x y z | opacity logit | log-scale xyz | quaternion wxyz | SH (coefficient-major, RGB interleaved)].
namespace layout {
inline constexpr int position = 0;
inline constexpr int opacity = 3;
inline constexpr int log_scale = 4;
inline constexpr int rotation = 7;
inline constexpr int sh = 11;
inline constexpr int width(int sh_degree) { return sh + 3 * sh::coeff_count(sh_degree); }
} // namespace layout

/// Gaussians at one recurrent iteration: raw parameters g [M, C2] and hidden
/// state z [M, C1].
template <class T>
struct GaussianSet {
    Tensor<T> g;
    Tensor<T> z;
    int iteration = 0;
    int sh_degree = 1;

    std::int64_t size() const { return g.defined() ? g.dim(0) : 0; }
};

} // namespace resplat
