#pragma once

// Tile-based Gaussian rasterizer with an analytic backward pass.
//
// A Gaussian contributes to a pixel only inside its cutoff ellipse
// (Mahalanobis distance <= cutoff_sigma), with alpha
//   a' = min(alpha_cap, opacity * exp(-0.5 dᵀ cov2D⁻¹ d)),
// composited front to back by camera depth (ties by index) over a black
// background. Compositing for a pixel stops before the contribution that would
// drop transmittance below min_transmittance. Tiles only decide which
// Gaussians a pixel examines; the ellipse test makes the result independent of
// the tile size.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

#include "resplat/core/parallel.hpp"
#include "resplat/geometry/camera.hpp"
#include "resplat/render/gaussians.hpp"
#include "resplat/render/sh.hpp"
#include "resplat/tensor/ops.hpp"

namespace resplat {

struct RenderSettings {
    int tile_size = 16;
    double dilation_px = 0.3;
    double alpha_cap = 0.999;
    double near_plane = 0.01;
    double cutoff_sigma = 3.0;
    double min_transmittance = 1e-4;
    double frustum_guard = 1.3; // centers beyond this multiple of the half-FOV tangent are culled
};

/// Screen-space footprint of one Gaussian plus the intermediates its backward pass needs.
struct ProjectedGaussian {
    bool visible = false;
    bool behind = false; // culled: at or behind the near plane, or outside the guarded frustum
    double u = 0, v = 0, depth = 0;
    double cov[3] = {0, 0, 0};   // cov2D as (xx, xy, yy), dilation included
    double conic[3] = {0, 0, 0}; // inverse of cov2D as (xx, xy, yy)
    double opacity = 0;
    double color[3] = {0, 0, 0};
    bool color_free[3] = {false, false, false}; // false where the [0, 1] clamp is active
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;        // inclusive pixel bounds of the cutoff box

    Eigen::Vector3d pc = Eigen::Vector3d::Zero(); // camera-space mean
    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    Eigen::Vector3d scale = Eigen::Vector3d::Ones();
    Eigen::Vector4d qhat = Eigen::Vector4d(1, 0, 0, 0);
    double qnorm = 1;
    Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();
    double dir_len = 1;
    Eigen::Matrix<double, 2, 3> jw = Eigen::Matrix<double, 2, 3>::Zero(); // J W
    Eigen::Matrix3d sigma3 = Eigen::Matrix3d::Identity();
};

namespace detail {

inline Eigen::Matrix3d quat_to_rot(const Eigen::Vector4d& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y), 2 * (x * y + w * z),
        1 - 2 * (x * x + z * z), 2 * (y * z - w * x), 2 * (x * z - w * y), 2 * (y * z + w * x),
        1 - 2 * (x * x + y * y);
    return R;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace detail

/// EWA projection of one raw parameter row.
template <class T>
ProjectedGaussian project_gaussian(const Camera& cam, std::span<const T> row, int sh_degree,
                                   const RenderSettings& settings = {}) {
    require(static_cast<int>(row.size()) == layout::width(sh_degree), "project_gaussian: row has ", row.size(),
            " values, expected ", layout::width(sh_degree));
    ProjectedGaussian p;
    const Eigen::Vector3d mu(row[0], row[1], row[2]);
    p.pc = cam.R * mu + cam.t;
    p.depth = p.pc.z();
    if (p.pc.z() <= settings.near_plane) {
        p.behind = true;
        return p;
    }
    const double x = p.pc.x(), y = p.pc.y(), z = p.pc.z();
    const double fx = cam.fx(), fy = cam.fy();
    const double lim_x = settings.frustum_guard * std::max(cam.cx(), cam.width - cam.cx()) / fx;
    const double lim_y = settings.frustum_guard * std::max(cam.cy(), cam.height - cam.cy()) / fy;
    if (std::abs(x / z) > lim_x || std::abs(y / z) > lim_y) {
        p.behind = true;
        return p;
    }
    p.u = fx * x / z + cam.cx();
    p.v = fy * y / z + cam.cy();

    Eigen::Vector4d q(row[layout::rotation], row[layout::rotation + 1], row[layout::rotation + 2],
                      row[layout::rotation + 3]);
    p.qnorm = std::max(q.norm(), 1e-12);
    p.qhat = q / p.qnorm;
    p.rot = detail::quat_to_rot(p.qhat);
    for (int a = 0; a < 3; ++a) p.scale[a] = std::exp(static_cast<double>(row[layout::log_scale + a]));
    const Eigen::Matrix3d M = p.rot * p.scale.asDiagonal();
    p.sigma3 = M * M.transpose();

    Eigen::Matrix<double, 2, 3> J;
    J << fx / z, 0, -fx * x / (z * z), 0, fy / z, -fy * y / (z * z);
    p.jw = J * cam.R;
    Eigen::Matrix2d cov = p.jw * p.sigma3 * p.jw.transpose();
    const double eps2 = settings.dilation_px * settings.dilation_px;
    cov(0, 0) += eps2;
    cov(1, 1) += eps2;
    p.cov[0] = cov(0, 0);
    p.cov[1] = 0.5 * (cov(0, 1) + cov(1, 0));
    p.cov[2] = cov(1, 1);
    const double det = p.cov[0] * p.cov[2] - p.cov[1] * p.cov[1];
    if (!(det > 0)) return p;
    p.conic[0] = p.cov[2] / det;
    p.conic[1] = -p.cov[1] / det;
    p.conic[2] = p.cov[0] / det;

    const double mid = 0.5 * (p.cov[0] + p.cov[2]);
    const double lam = mid + std::sqrt(0.25 * (p.cov[0] - p.cov[2]) * (p.cov[0] - p.cov[2]) + p.cov[1] * p.cov[1]);
    const double radius = settings.cutoff_sigma * std::sqrt(lam);
    p.x0 = std::max(0, static_cast<int>(std::ceil(p.u - radius - 0.5)));
    p.x1 = std::min(cam.width - 1, static_cast<int>(std::floor(p.u + radius - 0.5)));
    p.y0 = std::max(0, static_cast<int>(std::ceil(p.v - radius - 0.5)));
    p.y1 = std::min(cam.height - 1, static_cast<int>(std::floor(p.v + radius - 0.5)));

    p.opacity = detail::sigmoid(static_cast<double>(row[layout::opacity]));
    const Eigen::Vector3d view = mu - cam.center();
    p.dir_len = std::max(view.norm(), 1e-12);
    p.dir = view / p.dir_len;
    const double d[3] = {p.dir.x(), p.dir.y(), p.dir.z()};
    const auto rgb = sh::eval(row.subspan(layout::sh), sh_degree, d);
    for (int c = 0; c < 3; ++c) {
        p.color[c] = std::clamp(rgb[c], 0.0, 1.0);
        p.color_free[c] = rgb[c] > 0.0 && rgb[c] < 1.0;
    }
    p.visible = p.x0 <= p.x1 && p.y0 <= p.y1;
    return p;
}

/// Forward cache kept for the backward pass.
struct RenderState {
    struct Contribution {
        std::int32_t index;
        double alpha;         // a'
        double transmittance; // T before this contribution
        double gauss;         // exp(-0.5 m)
        bool capped;
    };

    Camera camera;
    RenderSettings settings;
    int sh_degree = 1;
    std::int64_t count = 0;
    std::vector<ProjectedGaussian> proj;
    std::vector<std::vector<Contribution>> tile_contrib;
    std::vector<std::array<std::int32_t, 2>> pixel_range; // [begin, end) into the pixel's tile buffer
    int tiles_x = 0;

    std::vector<double> rgb;   // [H, W, 3]
    std::vector<double> alpha; // [H, W]
    std::vector<double> depth; // [H, W], alpha-normalized expected depth, 0 where alpha ~ 0

    int tile_of(int x, int y) const { return (y / settings.tile_size) * tiles_x + x / settings.tile_size; }
};

/// Renders raw parameters g (count rows of layout::width(sh_degree)).
template <class T>
std::shared_ptr<RenderState> render_forward(std::span<const T> g, std::int64_t count, int sh_degree,
                                            const Camera& cam, const RenderSettings& settings = {}) {
    cam.validate();
    const int C2 = layout::width(sh_degree);
    require(static_cast<std::int64_t>(g.size()) == count * C2, "render: ", g.size(), " values do not form ", count,
            " rows of width ", C2);
    require(settings.tile_size > 0, "render: tile size must be positive");
    auto st = std::make_shared<RenderState>();
    st->camera = cam;
    st->settings = settings;
    st->sh_degree = sh_degree;
    st->count = count;
    st->proj.resize(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i)
        st->proj[i] = project_gaussian(cam, g.subspan(static_cast<std::size_t>(i * C2), C2), sh_degree, settings);

    std::vector<std::int32_t> order;
    for (std::int64_t i = 0; i < count; ++i)
        if (st->proj[i].visible) order.push_back(static_cast<std::int32_t>(i));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::int32_t a, std::int32_t b) { return st->proj[a].depth < st->proj[b].depth; });

    const int ts = settings.tile_size;
    st->tiles_x = (cam.width + ts - 1) / ts;
    const int tiles_y = (cam.height + ts - 1) / ts;
    std::vector<std::vector<std::int32_t>> bins(static_cast<std::size_t>(st->tiles_x * tiles_y));
    for (std::int32_t i : order) {
        const auto& p = st->proj[i];
        for (int ty = p.y0 / ts; ty <= p.y1 / ts; ++ty)
            for (int tx = p.x0 / ts; tx <= p.x1 / ts; ++tx) bins[ty * st->tiles_x + tx].push_back(i);
    }

    const std::int64_t npix = static_cast<std::int64_t>(cam.width) * cam.height;
    st->rgb.assign(static_cast<std::size_t>(npix * 3), 0.0);
    st->alpha.assign(static_cast<std::size_t>(npix), 0.0);
    st->depth.assign(static_cast<std::size_t>(npix), 0.0);
    st->pixel_range.assign(static_cast<std::size_t>(npix), {0, 0});
    st->tile_contrib.assign(bins.size(), {});
    const double cut2 = settings.cutoff_sigma * settings.cutoff_sigma;

    parallel_chunks(static_cast<std::int64_t>(bins.size()), [&](int, std::int64_t tb, std::int64_t te) {
        for (std::int64_t tile = tb; tile < te; ++tile) {
            const int tx = static_cast<int>(tile % st->tiles_x), ty = static_cast<int>(tile / st->tiles_x);
            auto& buf = st->tile_contrib[tile];
            const auto& list = bins[tile];
            for (int y = ty * ts; y < std::min(cam.height, (ty + 1) * ts); ++y)
                for (int x = tx * ts; x < std::min(cam.width, (tx + 1) * ts); ++x) {
                    const std::int64_t pix = static_cast<std::int64_t>(y) * cam.width + x;
                    const double px = x + 0.5, py = y + 0.5;
                    double Tr = 1.0, c[3] = {0, 0, 0}, dep = 0;
                    const auto begin = static_cast<std::int32_t>(buf.size());
                    for (std::int32_t i : list) {
                        const auto& p = st->proj[i];
                        const double dx = px - p.u, dy = py - p.v;
                        const double m = p.conic[0] * dx * dx + 2 * p.conic[1] * dx * dy + p.conic[2] * dy * dy;
                        if (m > cut2) continue;
                        const double gv = std::exp(-0.5 * m);
                        const double raw = p.opacity * gv;
                        const bool capped = raw >= settings.alpha_cap;
                        const double a = capped ? settings.alpha_cap : raw;
                        const double next = Tr * (1 - a);
                        if (next < settings.min_transmittance) break;
                        for (int ch = 0; ch < 3; ++ch) c[ch] += p.color[ch] * a * Tr;
                        dep += p.depth * a * Tr;
                        buf.push_back({i, a, Tr, gv, capped});
                        Tr = next;
                    }
                    st->pixel_range[pix] = {begin, static_cast<std::int32_t>(buf.size())};
                    for (int ch = 0; ch < 3; ++ch) st->rgb[pix * 3 + ch] = c[ch];
                    st->alpha[pix] = 1 - Tr;
                    st->depth[pix] = (1 - Tr) > 1e-10 ? dep / (1 - Tr) : 0.0;
                }
        }
    });
    return st;
}

/// Gradient of a scalar loss with respect to every raw parameter, given the
/// rows `g` used in the forward pass and dL/d(rgb) as an [H, W, 3] array.
/// Culled Gaussians receive zero gradient.
template <class T>
std::vector<double> render_backward(const RenderState& st, std::span<const T> g, std::span<const double> d_rgb) {
    const Camera& cam = st.camera;
    const std::int64_t npix = static_cast<std::int64_t>(cam.width) * cam.height;
    require(static_cast<std::int64_t>(d_rgb.size()) == npix * 3, "render_backward: upstream gradient has ",
            d_rgb.size(), " values, forward pass rendered ", npix * 3);
    const int C2 = layout::width(st.sh_degree);
    require(static_cast<std::int64_t>(st.proj.size()) == st.count &&
                static_cast<std::int64_t>(g.size()) == st.count * C2,
            "render_backward: parameters do not match the forward state");

    struct Acc {
        double du = 0, dv = 0, da = 0, db = 0, dc = 0, dop = 0, dcol[3] = {0, 0, 0};
    };
    const std::int64_t ntiles = static_cast<std::int64_t>(st.tile_contrib.size());
    const int workers = std::max(1, chunk_workers(ntiles));
    std::vector<std::vector<Acc>> acc(static_cast<std::size_t>(workers));
    const int ts = st.settings.tile_size;

    parallel_chunks(ntiles, [&](int worker, std::int64_t tb, std::int64_t te) {
        auto& A = acc[worker];
        A.assign(static_cast<std::size_t>(st.count), Acc{});
        for (std::int64_t tile = tb; tile < te; ++tile) {
            const int tx = static_cast<int>(tile % st.tiles_x), ty = static_cast<int>(tile / st.tiles_x);
            const auto& buf = st.tile_contrib[tile];
            for (int y = ty * ts; y < std::min(cam.height, (ty + 1) * ts); ++y)
                for (int x = tx * ts; x < std::min(cam.width, (tx + 1) * ts); ++x) {
                    const std::int64_t pix = static_cast<std::int64_t>(y) * cam.width + x;
                    const double* go = d_rgb.data() + pix * 3;
                    if (go[0] == 0 && go[1] == 0 && go[2] == 0) continue;
                    const auto [b, e] = st.pixel_range[pix];
                    const double px = x + 0.5, py = y + 0.5;
                    double behind[3] = {0, 0, 0}; // sum of c_j a_j T_j over later contributions
                    for (std::int32_t k = e - 1; k >= b; --k) {
                        const auto& ct = buf[k];
                        const auto& p = st.proj[ct.index];
                        Acc& a = A[ct.index];
                        const double w = ct.alpha * ct.transmittance;
                        double d_alpha = 0;
                        for (int ch = 0; ch < 3; ++ch) {
                            a.dcol[ch] += go[ch] * w;
                            d_alpha += go[ch] * (p.color[ch] * ct.transmittance - behind[ch] / (1 - ct.alpha));
                            behind[ch] += p.color[ch] * w;
                        }
                        if (ct.capped) continue;
                        a.dop += d_alpha * ct.gauss;
                        const double dm = -0.5 * d_alpha * p.opacity * ct.gauss; // dL/d(mahalanobis)
                        const double dx = px - p.u, dy = py - p.v;
                        a.du += -2 * dm * (p.conic[0] * dx + p.conic[1] * dy);
                        a.dv += -2 * dm * (p.conic[1] * dx + p.conic[2] * dy);
                        a.da += dm * dx * dx;
                        a.db += dm * 2 * dx * dy;
                        a.dc += dm * dy * dy;
                    }
                }
        }
    });
    for (int w = 1; w < workers; ++w) {
        if (acc[w].empty()) continue;
        for (std::int64_t i = 0; i < st.count; ++i) {
            Acc& a = acc[0][i];
            const Acc& o = acc[w][i];
            a.du += o.du, a.dv += o.dv, a.da += o.da, a.db += o.db, a.dc += o.dc, a.dop += o.dop;
            for (int ch = 0; ch < 3; ++ch) a.dcol[ch] += o.dcol[ch];
        }
    }

    const int nb = sh::coeff_count(st.sh_degree);
    std::vector<double> dg(static_cast<std::size_t>(st.count * C2), 0.0);
    if (acc[0].empty()) return dg;
    const double fx = cam.fx(), fy = cam.fy();
    parallel_chunks(st.count, [&](int, std::int64_t ib, std::int64_t ie) {
        for (std::int64_t i = ib; i < ie; ++i) {
            const auto& p = st.proj[i];
            if (!p.visible) continue;
            const Acc& a = acc[0][i];
            const T* row = g.data() + i * C2;
            double* out = dg.data() + i * C2;

            out[layout::opacity] = a.dop * p.opacity * (1 - p.opacity);

            // color -> SH coefficients and view direction
            double draw[3];
            for (int ch = 0; ch < 3; ++ch) draw[ch] = p.color_free[ch] ? a.dcol[ch] : 0.0;
            double basis[sh::coeff_count(sh::max_degree)], dbasis[sh::coeff_count(sh::max_degree)][3];
            const double dirv[3] = {p.dir.x(), p.dir.y(), p.dir.z()};
            sh::basis(st.sh_degree, dirv, basis, dbasis);
            Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
            for (int k = 0; k < nb; ++k)
                for (int ch = 0; ch < 3; ++ch) {
                    out[layout::sh + 3 * k + ch] = basis[k] * draw[ch];
                    const double w = draw[ch] * static_cast<double>(row[layout::sh + 3 * k + ch]);
                    for (int ax = 0; ax < 3; ++ax) d_dir[ax] += w * dbasis[k][ax];
                }
            Eigen::Vector3d dmu = (d_dir - p.dir * p.dir.dot(d_dir)) / p.dir_len;

            // conic -> cov2D -> (J W, Σ)
            Eigen::Matrix2d A;
            A << p.conic[0], p.conic[1], p.conic[1], p.conic[2];
            Eigen::Matrix2d dA;
            dA << a.da, 0.5 * a.db, 0.5 * a.db, a.dc;
            const Eigen::Matrix2d dcov = -A * dA * A;
            const Eigen::Matrix3d dsigma = p.jw.transpose() * dcov * p.jw;
            const Eigen::Matrix<double, 2, 3> dJ = 2.0 * dcov * p.jw * p.sigma3 * cam.R.transpose();
            const double x = p.pc.x(), y = p.pc.y(), z = p.pc.z();
            const double z2 = z * z, z3 = z2 * z;
            Eigen::Vector3d dpc;
            dpc.x() = -dJ(0, 2) * fx / z2 + a.du * fx / z;
            dpc.y() = -dJ(1, 2) * fy / z2 + a.dv * fy / z;
            dpc.z() = -dJ(0, 0) * fx / z2 + dJ(0, 2) * 2 * fx * x / z3 - dJ(1, 1) * fy / z2 +
                      dJ(1, 2) * 2 * fy * y / z3 - a.du * fx * x / z2 - a.dv * fy * y / z2;
            dmu += cam.R.transpose() * dpc;
            for (int k = 0; k < 3; ++k) out[layout::position + k] = dmu[k];

            // Σ = M Mᵀ with M = R(q) diag(s)
            const Eigen::Matrix3d M = p.rot * p.scale.asDiagonal();
            const Eigen::Matrix3d dM = 2.0 * dsigma * M;
            for (int k = 0; k < 3; ++k) out[layout::log_scale + k] = dM.col(k).dot(p.rot.col(k)) * p.scale[k];
            const Eigen::Matrix3d dR = dM * p.scale.asDiagonal();
            const double w = p.qhat[0], qx = p.qhat[1], qy = p.qhat[2], qz = p.qhat[3];
            Eigen::Matrix3d Rw, Rx, Ry, Rz;
            Rw << 0, -2 * qz, 2 * qy, 2 * qz, 0, -2 * qx, -2 * qy, 2 * qx, 0;
            Rx << 0, 2 * qy, 2 * qz, 2 * qy, -4 * qx, -2 * w, 2 * qz, 2 * w, -4 * qx;
            Ry << -4 * qy, 2 * qx, 2 * w, 2 * qx, 0, 2 * qz, -2 * w, 2 * qz, -4 * qy;
            Rz << -4 * qz, -2 * w, 2 * qx, 2 * w, -4 * qz, 2 * qy, 2 * qx, 2 * qy, 0;
            const Eigen::Vector4d dqhat(dR.cwiseProduct(Rw).sum(), dR.cwiseProduct(Rx).sum(),
                                        dR.cwiseProduct(Ry).sum(), dR.cwiseProduct(Rz).sum());
            const Eigen::Vector4d dq = (dqhat - p.qhat * p.qhat.dot(dqhat)) / p.qnorm;
            for (int k = 0; k < 4; ++k) out[layout::rotation + k] = dq[k];
        }
    });
    return dg;
}

template <class T>
struct RenderedView {
    Tensor<T> rgb;   // [H, W, 3], differentiable in the Gaussian parameters
    Tensor<T> alpha; // [H, W]
    Tensor<T> depth; // [H, W]
    std::shared_ptr<RenderState> state;
};

/// Renders a Gaussian set into one camera. Only the color image carries gradients.
template <class T>
RenderedView<T> render(Tape<T>& tape, const GaussianSet<T>& gs, const Camera& cam,
                       const RenderSettings& settings = {}) {
    require(gs.g.defined() && gs.g.rank() == 2 && gs.g.dim(1) == layout::width(gs.sh_degree),
            "render: Gaussian parameters must be [M, ", layout::width(gs.sh_degree), "]",
            gs.g.defined() ? std::string(", got ") + shape_str(gs.g.shape()) : std::string());
    auto st = render_forward(gs.g.values(), gs.g.dim(0), gs.sh_degree, cam, settings);
    const std::int64_t h = cam.height, w = cam.width;
    auto cast = [](const std::vector<double>& v) { return std::vector<T>(v.begin(), v.end()); };
    RenderedView<T> out;
    out.state = st;
    out.alpha = Tensor<T>::from({h, w}, cast(st->alpha));
    out.depth = Tensor<T>::from({h, w}, cast(st->depth));
    out.rgb = ops::custom<T>(tape, {gs.g}, {h, w, 3}, cast(st->rgb),
                             [st, g = gs.g](std::span<const T> go, const std::vector<T*>& grads) {
                                 if (!grads[0]) return;
                                 const std::vector<double> up(go.begin(), go.end());
                                 const auto dg = render_backward(*st, g.values(), std::span<const double>(up));
                                 for (std::size_t i = 0; i < dg.size(); ++i) grads[0][i] += static_cast<T>(dg[i]);
                             });
    return out;
}

} // namespace resplat
