#include <gtest/gtest.h>

#include "../support/fd.hpp"
#include "../support/render_oracle.hpp"
#include "resplat/render/rasterizer.hpp"

using namespace resplat;
using namespace resplat::testing;
using TD = Tensor<double>;

namespace {

std::vector<double> one_gaussian(Eigen::Vector3d mu, double logit, double scale, Eigen::Vector3d rgb, int deg = 1) {
    std::vector<double> r(static_cast<std::size_t>(layout::width(deg)), 0.0);
    for (int a = 0; a < 3; ++a) r[a] = mu[a];
    r[layout::opacity] = logit;
    for (int a = 0; a < 3; ++a) r[layout::log_scale + a] = std::log(scale);
    r[layout::rotation] = 1;
    for (int c = 0; c < 3; ++c) r[layout::sh + c] = (rgb[c] - 0.5) / sh::C0;
    return r;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST(Sh, DegreeZeroIsScaledConstantPlusHalf) {
    const double dir[3] = {0.3, -0.4, std::sqrt(1 - 0.25)};
    const std::vector<double> c = {0.2, -1.0, 3.0};
    auto rgb = sh::eval<double>(c, 0, dir);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(rgb[k], 0.282095 * c[k] + 0.5, 1e-6);
}

TEST(Sh, DegreeOneIsOdd) {
    Rng rng(1);
    std::vector<double> c(12);
    for (auto& v : c) v = rng.normal();
    Eigen::Vector3d d(rng.normal(), rng.normal(), rng.normal());
    d.normalize();
    const double dp[3] = {d.x(), d.y(), d.z()}, dn[3] = {-d.x(), -d.y(), -d.z()};
    auto a = sh::eval<double>(c, 1, dp), b = sh::eval<double>(c, 1, dn), dc = sh::eval<double>(std::span(c).first(3), 0, dp);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(a[k] - dc[k], -(b[k] - dc[k]), 1e-14);
}

TEST(Sh, MatchesLegendreOracle) {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::Vector3d d(rng.normal(), rng.normal(), rng.normal());
        d.normalize();
        const double dp[3] = {d.x(), d.y(), d.z()};
        double b[9], db[9][3];
        sh::basis(2, dp, b, db);
        int k = 0;
        for (int l = 0; l <= 2; ++l)
            for (int m = -l; m <= l; ++m, ++k) EXPECT_NEAR(b[k], sh_reference(l, m, d), 1e-12) << l << "," << m;
        // Directional derivatives against the oracle along a tangent.
        for (int kk = 0; kk < 9; ++kk)
            for (int a = 0; a < 3; ++a) {
                double bp[9], bm[9];
                double xp[3] = {dp[0], dp[1], dp[2]}, xm[3] = {dp[0], dp[1], dp[2]};
                xp[a] += 1e-6, xm[a] -= 1e-6;
                sh::basis(2, xp, bp);
                sh::basis(2, xm, bm);
                EXPECT_NEAR(db[kk][a], (bp[kk] - bm[kk]) / 2e-6, 1e-7);
            }
    }
}

TEST(ProjectGaussian, IsotropicOnAxisClosedForm) {
    auto cam = Camera::make(50, 50, 16, 16, 32, 32);
    for (double d : {1.0, 2.5, 7.0})
        for (double s : {0.05, 0.2}) {
            auto row = one_gaussian({0, 0, d}, 0, s, {0.5, 0.5, 0.5});
            auto p = project_gaussian<double>(cam, row, 1);
            const double expect = std::pow(50 * s / d, 2) + 0.09;
            EXPECT_NEAR(p.cov[0], expect, 1e-12);
            EXPECT_NEAR(p.cov[2], expect, 1e-12);
            EXPECT_NEAR(p.cov[1], 0, 1e-12);
            EXPECT_DOUBLE_EQ(p.depth, d);
            EXPECT_DOUBLE_EQ(p.u, 16);
        }
}

TEST(ProjectGaussian, DoublingScalesQuadruplesFootprint) {
    Rng rng(3);
    auto cam = random_view(rng, 32, 32, 30);
    auto g = random_gaussians(rng, {.count = 1});
    auto a = project_gaussian<double>(cam, g, 1);
    for (int k = 0; k < 3; ++k) g[layout::log_scale + k] += std::log(2.0);
    auto b = project_gaussian<double>(cam, g, 1);
    for (int k = 0; k < 3; ++k) {
        const double dil = (k == 1) ? 0 : 0.09;
        EXPECT_NEAR(b.cov[k] - dil, 4 * (a.cov[k] - dil), 1e-10);
    }
}

TEST(ProjectGaussian, BehindCameraIsFlagged) {
    auto cam = Camera::make(50, 50, 16, 16, 32, 32);
    auto p = project_gaussian<double>(cam, one_gaussian({0, 0, -1}, 0, 0.1, {0.5, 0.5, 0.5}), 1);
    EXPECT_TRUE(p.behind);
    EXPECT_FALSE(p.visible);
}

TEST(Render, SaturatedSingleSplat) {
    auto cam = Camera::make(32, 32, 16.5, 16.5, 32, 32); // splat center on pixel (16, 16)
    const Eigen::Vector3d c(0.2, 0.6, 0.9);
    auto row = one_gaussian({0, 0, 3}, 10, 0.5, c);
    auto st = render_forward<double>(row, 1, 1, cam);
    const int pix = 16 * 32 + 16;
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(st->rgb[pix * 3 + k], c[k] * 0.999, 1e-3);
}

TEST(Render, EmptySetIsBlack) {
    auto cam = Camera::make(32, 32, 16, 16, 32, 24);
    auto st = render_forward<double>({}, 0, 1, cam);
    for (double v : st->rgb) EXPECT_EQ(v, 0.0);
    for (double v : st->alpha) EXPECT_EQ(v, 0.0);
}

TEST(Render, TwoOverlappingMatchBruteForce) {
    auto cam = Camera::make(32, 32, 16, 16, 32, 32);
    auto a = one_gaussian({0.1, 0, 3}, 0.5, 0.4, {0.9, 0.1, 0.2});
    auto b = one_gaussian({-0.1, 0.05, 3.5}, 1.0, 0.6, {0.1, 0.8, 0.3});
    a.insert(a.end(), b.begin(), b.end());
    auto st = render_forward<double>(a, 2, 1, cam);
    auto ref = brute_force_render(a, 1, cam);
    EXPECT_LT(max_abs_diff(st->rgb, ref.rgb), 1e-6);
    EXPECT_LT(max_abs_diff(st->alpha, ref.alpha), 1e-6);
}

TEST(Render, RandomScenesMatchBruteForce) {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        auto cam = random_view(rng, 32, 32, 28);
        auto g = random_gaussians(rng, {.count = 40, .sh_degree = 1 + trial % 2, .spread = 0.8, .scale_lo = 0.02,
                                        .scale_hi = 0.3, .logit_lo = -2, .logit_hi = 6});
        auto st = render_forward<double>(g, 40, 1 + trial % 2, cam);
        auto ref = brute_force_render(g, 1 + trial % 2, cam);
        EXPECT_LT(max_abs_diff(st->rgb, ref.rgb), 1e-6) << trial;
    }
}

TEST(Render, TilingIsTransparent) {
    Rng rng(5);
    auto cam = random_view(rng, 48, 40, 40);
    auto g = random_gaussians(rng, {.count = 60, .spread = 0.8, .scale_lo = 0.02, .scale_hi = 0.25, .logit_lo = -1,
                                    .logit_hi = 5});
    auto base = render_forward<double>(g, 60, 1, cam, {.tile_size = 16});
    for (int ts : {8, 64}) {
        auto other = render_forward<double>(g, 60, 1, cam, {.tile_size = ts});
        EXPECT_LT(max_abs_diff(base->rgb, other->rgb), 1e-6) << ts;
    }
    for (double a : base->alpha) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
    }
}

TEST(Render, EqualDepthCompositesByIndexDeterministically) {
    auto cam = Camera::make(32, 32, 16, 16, 32, 32);
    auto a = one_gaussian({0, 0, 3}, 0.5, 0.4, {0.9, 0.1, 0.2});
    auto b = one_gaussian({0, 0, 3}, 0.5, 0.4, {0.1, 0.8, 0.3});
    auto ab = a, ba = b;
    ab.insert(ab.end(), b.begin(), b.end());
    ba.insert(ba.end(), a.begin(), a.end());
    auto s1 = render_forward<double>(ab, 2, 1, cam), s2 = render_forward<double>(ab, 2, 1, cam);
    EXPECT_EQ(s1->rgb, s2->rgb);
    // The first-indexed Gaussian sits in front: its color dominates.
    auto s3 = render_forward<double>(ba, 2, 1, cam);
    const int pix = (16 * 32 + 16) * 3;
    EXPECT_GT(s1->rgb[pix], s3->rgb[pix]);
}

TEST(Render, ExpectedDepthOfSingleOpaqueSplat) {
    auto cam = Camera::make(32, 32, 16, 16, 32, 32);
    auto st = render_forward<double>(one_gaussian({0, 0, 2.5}, 3, 0.5, {0.5, 0.5, 0.5}), 1, 1, cam);
    EXPECT_NEAR(st->depth[16 * 32 + 16], 2.5, 1e-12);
}

TEST(RenderBackward, MatchesFiniteDifferences) {
    Rng rng(6);
    for (int trial = 0; trial < 6; ++trial) {
        const int deg = trial % 3;
        auto cam = random_view(rng, 8, 8, 7);
        auto g = TD::from({3, layout::width(deg)}, random_gaussians(rng, {.count = 3, .sh_degree = deg, .spread = 0.3,
                                                                           .scale_lo = 0.3, .scale_hi = 0.7}));
        auto r = fd_check({g}, [&](Tape<double>& t) {
            GaussianSet<double> gs{g, {}, 0, deg};
            return probe(t, render(t, gs, cam).rgb, 17);
        });
        EXPECT_LT(r.rel_error, 1e-4) << "trial " << trial << " norm " << r.numeric_norm;
    }
}

TEST(RenderBackward, ZeroUpstreamGivesZeroGradients) {
    Rng rng(7);
    auto cam = random_view(rng, 16, 16, 14);
    auto g = random_gaussians(rng, {.count = 5});
    auto st = render_forward<double>(g, 5, 1, cam);
    auto dg = render_backward<double>(*st, g, std::vector<double>(16 * 16 * 3, 0.0));
    for (double v : dg) EXPECT_EQ(v, 0.0);
}

TEST(RenderBackward, OccludedGaussianGetsNoGradient) {
    auto cam = Camera::make(16, 16, 8, 8, 16, 16);
    // Two wide, saturated layers: alpha hits the cap on every pixel.
    auto g = one_gaussian({0, 0, 2}, 20, 100, {0.3, 0.3, 0.3});
    auto g2 = one_gaussian({0, 0, 2.1}, 20, 100, {0.6, 0.2, 0.3});
    auto back = one_gaussian({0, 0, 4}, 0.5, 0.3, {0.9, 0.9, 0.1});
    g.insert(g.end(), g2.begin(), g2.end());
    g.insert(g.end(), back.begin(), back.end());
    auto st = render_forward<double>(g, 3, 1, cam);
    Rng rng(8);
    auto up = rng.normal_vector<double>(16 * 16 * 3);
    auto dg = render_backward<double>(*st, g, up);
    const int w = layout::width(1);
    for (int k = 0; k < w; ++k) EXPECT_LE(std::abs(dg[2 * w + k]), 1e-6) << k;
}

TEST(RenderBackward, CulledGaussianGetsZeroGradient) {
    auto cam = Camera::make(16, 16, 8, 8, 16, 16);
    auto g = one_gaussian({0, 0, 2}, 0, 0.3, {0.3, 0.3, 0.3});
    auto behind = one_gaussian({0, 0, -2}, 0, 0.3, {0.3, 0.3, 0.3});
    g.insert(g.end(), behind.begin(), behind.end());
    auto st = render_forward<double>(g, 2, 1, cam);
    Rng rng(9);
    auto dg = render_backward<double>(*st, g, rng.normal_vector<double>(16 * 16 * 3));
    const int w = layout::width(1);
    for (int k = 0; k < w; ++k) EXPECT_EQ(dg[w + k], 0.0);
}

TEST(RenderForward, GrazingGaussianOutsideFrustumIsCulled) {
    // Just in front of the camera plane but far to the side: its footprint would cover the image.
    auto cam = Camera::make(16, 16, 8, 8, 16, 16);
    auto g = one_gaussian({4, 0, 0.08}, 3, 0.6, {0.9, 0.9, 0.9});
    EXPECT_TRUE(project_gaussian<double>(cam, g, 1).behind);
    auto st = render_forward<double>(g, 1, 1, cam);
    for (double a : st->alpha) EXPECT_EQ(a, 0.0);
    // Inside the guard band a center beyond the image edge still contributes.
    auto edge = one_gaussian({1.1, 0, 2}, 3, 0.3, {0.9, 0.9, 0.9});
    EXPECT_FALSE(project_gaussian<double>(cam, edge, 1).behind);
}

TEST(RenderBackward, MismatchedStateIsAnError) {
    auto cam = Camera::make(16, 16, 8, 8, 16, 16);
    auto g = one_gaussian({0, 0, 2}, 0, 0.3, {0.3, 0.3, 0.3});
    auto st = render_forward<double>(g, 1, 1, cam);
    EXPECT_THROW(render_backward<double>(*st, g, std::vector<double>(10, 0.0)), Error);
    std::vector<double> two = g;
    two.insert(two.end(), g.begin(), g.end());
    EXPECT_THROW(render_backward<double>(*st, two, std::vector<double>(16 * 16 * 3, 0.0)), Error);
}

TEST(RenderBackward, ParallelMatchesSingleThread) {
    Rng rng(10);
    auto cam = random_view(rng, 40, 40, 36);
    auto g = random_gaussians(rng, {.count = 50, .spread = 0.8, .scale_lo = 0.05, .scale_hi = 0.3});
    auto up = rng.normal_vector<double>(40 * 40 * 3);
    set_thread_count(1);
    auto a = render_backward<double>(*render_forward<double>(g, 50, 1, cam), g, up);
    set_thread_count(4);
    auto b = render_backward<double>(*render_forward<double>(g, 50, 1, cam), g, up);
    set_thread_count(1);
    EXPECT_LT(max_abs_diff(a, b), 1e-12);
}
