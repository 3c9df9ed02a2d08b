#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "resplat/scene/sample.hpp"

namespace resplat {

inline constexpr double psnr_cap = 99.0;

/// -10 log10(MSE); +inf for identical images.
inline double psnr(const Image& a, const Image& b) {
    require(a.width == b.width && a.height == b.height && a.rgb.size() == b.rgb.size(), "psnr: image sizes ",
            a.width, "x", a.height, " and ", b.width, "x", b.height, " differ");
    require(!a.rgb.empty(), "psnr: empty images");
    double se = 0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.rgb.size());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

/// PSNR as written to CSV files.
inline double psnr_capped(double v) { return std::min(v, psnr_cap); }

/// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5),
/// C1 = (0.01)^2, C2 = (0.03)^2 for unit dynamic range. Statistics use
/// valid windows only (no padding).
inline double ssim(const Image& a, const Image& b) {
    require(a.width == b.width && a.height == b.height && a.rgb.size() == b.rgb.size(), "ssim: image sizes ",
            a.width, "x", a.height, " and ", b.width, "x", b.height, " differ");
    constexpr int win = 11, half = 5;
    constexpr double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    require(a.width >= win && a.height >= win, "ssim: images must be at least ", win, "x", win);
    double kernel[win];
    double ksum = 0;
    for (int i = 0; i < win; ++i) ksum += kernel[i] = std::exp(-(i - half) * (i - half) / (2 * sigma * sigma));
    for (double& k : kernel) k /= ksum;
    const int w = a.width, h = a.height, ow = w - win + 1, oh = h - win + 1;
    // Separable filtering of x, y, x², y², xy per channel.
    auto filter = [&](const std::vector<double>& src) {
        std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < ow; ++x) {
                double s = 0;
                for (int k = 0; k < win; ++k) s += kernel[k] * src[y * w + x + k];
                tmp[y * ow + x] = s;
            }
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double s = 0;
                for (int k = 0; k < win; ++k) s += kernel[k] * tmp[(y + k) * ow + x];
                out[y * ow + x] = s;
            }
        return out;
    };
    double total = 0;
    for (int ch = 0; ch < 3; ++ch) {
        std::vector<double> x(static_cast<std::size_t>(w) * h), y(x.size()), xx(x.size()), yy(x.size()), xy(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = a.rgb[i * 3 + ch];
            y[i] = b.rgb[i * 3 + ch];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
        double acc = 0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cv = sxy[i] - mx[i] * my[i];
            acc += ((2 * mx[i] * my[i] + c1) * (2 * cv + c2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += acc / static_cast<double>(mx.size());
    }
    return total / 3.0;
}

} // namespace resplat
