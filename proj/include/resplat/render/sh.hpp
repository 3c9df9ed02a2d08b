#pragma once

#include <array>
#include <span>

#include "resplat/core/error.hpp"

namespace resplat::sh {

inline constexpr int max_degree = 2;

inline constexpr int coeff_count(int degree) { return (degree + 1) * (degree + 1); }

inline constexpr double C0 = 0.28209479177387814;
inline constexpr double C1 = 0.4886025119029199;
inline constexpr double C2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                 -1.0925484305920792, 0.5462742152960396};

/// Real SH basis values (Condon–Shortley phase, graphics ordering m = -l..l)
/// and optionally their derivatives with respect to the direction.
inline void basis(int degree, const double dir[3], double* out, double (*d_out)[3] = nullptr) {
    require(degree >= 0 && degree <= max_degree, "sh: unsupported degree ", degree);
    const double x = dir[0], y = dir[1], z = dir[2];
    out[0] = C0;
    if (d_out) d_out[0][0] = d_out[0][1] = d_out[0][2] = 0;
    if (degree < 1) return;
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if (d_out) {
        d_out[1][0] = 0, d_out[1][1] = -C1, d_out[1][2] = 0;
        d_out[2][0] = 0, d_out[2][1] = 0, d_out[2][2] = C1;
        d_out[3][0] = -C1, d_out[3][1] = 0, d_out[3][2] = 0;
    }
    if (degree < 2) return;
    out[4] = C2[0] * x * y;
    out[5] = C2[1] * y * z;
    out[6] = C2[2] * (2 * z * z - x * x - y * y);
    out[7] = C2[3] * x * z;
    out[8] = C2[4] * (x * x - y * y);
    if (d_out) {
        d_out[4][0] = C2[0] * y, d_out[4][1] = C2[0] * x, d_out[4][2] = 0;
        d_out[5][0] = 0, d_out[5][1] = C2[1] * z, d_out[5][2] = C2[1] * y;
        d_out[6][0] = -2 * C2[2] * x, d_out[6][1] = -2 * C2[2] * y, d_out[6][2] = 4 * C2[2] * z;
        d_out[7][0] = C2[3] * z, d_out[7][1] = 0, d_out[7][2] = C2[3] * x;
        d_out[8][0] = 2 * C2[4] * x, d_out[8][1] = -2 * C2[4] * y, d_out[8][2] = 0;
    }
}

/// RGB from coefficients laid out coefficient-major with interleaved channels
/// (coeffs[k*3 + c]); the DC band carries the +0.5 offset.
template <class T>
std::array<double, 3> eval(std::span<const T> coeffs, int degree, const double dir[3]) {
    const int nb = coeff_count(degree);
    require(static_cast<int>(coeffs.size()) == 3 * nb, "sh: expected ", 3 * nb, " coefficients, got ",
            coeffs.size());
    double b[coeff_count(max_degree)];
    basis(degree, dir, b);
    std::array<double, 3> rgb{0.5, 0.5, 0.5};
    for (int k = 0; k < nb; ++k)
        for (int c = 0; c < 3; ++c) rgb[c] += b[k] * static_cast<double>(coeffs[3 * k + c]);
    return rgb;
}

} // namespace resplat::sh
