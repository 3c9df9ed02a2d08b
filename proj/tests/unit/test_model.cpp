#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "../support/fd.hpp"
#include "../support/scenes.hpp"
#include "resplat/model/init_recon.hpp"

using namespace resplat;
using TD = Tensor<double>;
using resplat::testing::tiny_model;
using resplat::testing::tiny_spec;

namespace {

ModelParams<double> block_params(std::int64_t c, std::uint64_t seed) {
    ModelParams<double> p;
    Rng rng(seed);
    add_block_params(p, rng, "b", c, 2);
    resplat::testing::randomize(p, "b.", seed + 1, 0.4);
    return p;
}

// Independent attention oracle: softmax over dot products of row vectors.
Eigen::MatrixXd attention_oracle(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k, const Eigen::MatrixXd& v,
                                 double scale) {
    Eigen::MatrixXd s = q * k.transpose() * scale;
    for (int i = 0; i < s.rows(); ++i) {
        s.row(i).array() -= s.row(i).maxCoeff();
        s.row(i) = s.row(i).array().exp().matrix();
        s.row(i) /= s.row(i).sum();
    }
    return s * v;
}

Eigen::MatrixXd to_matrix(const TD& t) {
    Eigen::MatrixXd m(t.dim(0), t.dim(1));
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) m(i, j) = t[i * m.cols() + j];
    return m;
}

} // namespace

TEST(AttentionBlock, ZeroResidualProjectionsGiveIdentity) {
    Rng rng(1);
    const std::int64_t m = 32, c = 8;
    auto x = TD::from({m, c}, rng.normal_vector<double>(m * c));
    std::vector<double> pts(m * 3);
    for (auto& v : pts) v = rng.normal();
    const auto nbrs = knn<double>(pts, 4);
    for (const auto& nb : {Neighborhood::knn_graph(nbrs, 4), Neighborhood::dense(), Neighborhood::unshuffled(2, 4, 4)}) {
        auto p = block_params(c, 2);
        zero_block_residuals(p, "b");
        Tape<double> tape(false);
        auto y = attention_block(tape, p, "b", x, nb, 2);
        for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
    }
}

TEST(AttentionBlock, UnshuffleWithUnitFactorEqualsDenseAttention) {
    Rng rng(3);
    const std::int64_t m = 24, c = 8;
    auto q = TD::from({m, c}, rng.normal_vector<double>(m * c));
    auto k = TD::from({m, c}, rng.normal_vector<double>(m * c));
    auto v = TD::from({m, c}, rng.normal_vector<double>(m * c));
    Tape<double> tape(false);
    auto dense = attend(tape, q, k, v, Neighborhood::dense(), 2);
    auto grouped = attend(tape, q, k, v, Neighborhood::unshuffled(2, 3, 4, 1), 2);
    for (std::int64_t i = 0; i < dense.numel(); ++i) EXPECT_NEAR(dense[i], grouped[i], 1e-12);
}

TEST(AttentionBlock, UnshuffleMatchesGroupedTokenOracle) {
    // 1 view, 6x5 grid, factor 2: groups pad to 3x3 by edge replication.
    Rng rng(4);
    const int h = 6, w = 5, r = 2, heads = 2;
    const std::int64_t m = h * w, c = 4, dh = c / heads;
    auto q = TD::from({m, c}, rng.normal_vector<double>(m * c));
    auto k = TD::from({m, c}, rng.normal_vector<double>(m * c));
    auto v = TD::from({m, c}, rng.normal_vector<double>(m * c));
    Tape<double> tape(false);
    auto out = attend(tape, q, k, v, Neighborhood::unshuffled(1, h, w, r), heads);
    const int gh = 3, gw = 3;
    const auto Q = to_matrix(q), K = to_matrix(k), V = to_matrix(v);
    for (int hd = 0; hd < heads; ++hd) {
        Eigen::MatrixXd gq(gh * gw, r * r * dh), gk(gh * gw, r * r * dh), gv(gh * gw, r * r * dh);
        for (int by = 0; by < gh; ++by)
            for (int bx = 0; bx < gw; ++bx)
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx) {
                        const int y = std::min(by * r + dy, h - 1), x = std::min(bx * r + dx, w - 1);
                        const int src = y * w + x, col = (dy * r + dx) * dh;
                        gq.block(by * gw + bx, col, 1, dh) = Q.block(src, hd * dh, 1, dh);
                        gk.block(by * gw + bx, col, 1, dh) = K.block(src, hd * dh, 1, dh);
                        gv.block(by * gw + bx, col, 1, dh) = V.block(src, hd * dh, 1, dh);
                    }
        const auto go = attention_oracle(gq, gk, gv, 1 / std::sqrt(double(r * r * dh)));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int row = (y / r) * gw + x / r, col = ((y % r) * r + x % r) * dh;
                for (int j = 0; j < dh; ++j) EXPECT_NEAR(out[(y * w + x) * c + hd * dh + j], go(row, col + j), 1e-12);
            }
    }
}

TEST(AttentionBlock, UnshuffleLayoutMismatchIsAnError) {
    Tape<double> tape(false);
    auto x = TD::zeros({10, 4});
    EXPECT_THROW(attend(tape, x, x, x, Neighborhood::unshuffled(1, 3, 3), 1), Error);
}

TEST(AttentionBlock, GradientsMatchFiniteDifferencesInAllModes) {
    Rng rng(5);
    const std::int64_t m = 12, c = 4;
    std::vector<double> pts(m * 3);
    for (auto& v : pts) v = rng.normal();
    const auto nbrs = knn<double>(pts, 3);
    for (const auto& nb : {Neighborhood::knn_graph(nbrs, 3), Neighborhood::dense(), Neighborhood::unshuffled(1, 3, 4, 2)}) {
        auto p = block_params(c, 6);
        auto x = TD::from({m, c}, rng.normal_vector<double>(m * c));
        std::vector<TD> leaves{x, p.at("b.q.w"), p.at("b.v.w"), p.at("b.mlp1.w"), p.at("b.ln1.g")};
        auto rep = resplat::testing::fd_check(leaves, [&](Tape<double>& t) {
            return resplat::testing::probe(t, attention_block(t, p, "b", x, nb, 2), 7);
        });
        EXPECT_LT(rep.rel_error, 1e-6);
    }
}

TEST(Features, ShapeLawAndNonDivisibleError) {
    ModelParams<double> p;
    InitConfig cfg;
    cfg.c1 = 8;
    add_init_params(p, cfg, 1);
    Tape<double> tape(false);
    auto f = extract_features(tape, p, TD::zeros({3, 16, 28, 3}));
    EXPECT_EQ(f.shape(), (Shape{3, 4, 7, 8}));
    EXPECT_THROW(extract_features(tape, p, TD::zeros({1, 18, 28, 3})), Error);
}

TEST(Features, ZeroImagesGiveZeroFeatures) {
    ModelParams<double> p;
    InitConfig cfg;
    cfg.c1 = 8;
    add_init_params(p, cfg, 2);
    Tape<double> tape(false);
    auto f = extract_features(tape, p, TD::zeros({2, 8, 8, 3}));
    for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(Features, ShiftByFourPixelsShiftsByOneCell) {
    ModelParams<double> p;
    InitConfig cfg;
    cfg.c1 = 8;
    add_init_params(p, cfg, 3);
    resplat::testing::randomize(p, "init.enc.", 4, 0.3);
    Rng rng(5);
    const int h = 24, w = 32;
    auto base = rng.normal_vector<double>(h * (w + 4) * 3);
    std::vector<double> a(h * w * 3), b(h * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                a[(y * w + x) * 3 + ch] = base[(y * (w + 4) + x) * 3 + ch];
                b[(y * w + x) * 3 + ch] = base[(y * (w + 4) + x + 4) * 3 + ch];
            }
    Tape<double> tape(false);
    auto fa = extract_features(tape, p, TD::from({1, h, w, 3}, a));
    auto fb = extract_features(tape, p, TD::from({1, h, w, 3}, b));
    const int fh = h / 4, fw = w / 4, c = 8;
    // Interior cells away from the zero-padded border.
    for (int y = 1; y < fh - 1; ++y)
        for (int x = 1; x < fw - 2; ++x)
            for (int j = 0; j < c; ++j) EXPECT_NEAR(fb[(y * fw + x) * c + j], fa[(y * fw + x + 1) * c + j], 1e-12);
}

namespace {

// Two cameras viewing the fronto-parallel plane z = d; features are a smooth
// multichannel texture of world (x, y) sampled at each grid cell.
struct PlaneRig {
    std::vector<Camera> cams;
    TD match;
};

PlaneRig plane_rig(double depth, int h, int w) {
    PlaneRig rig;
    const double f = 0.9 * w;
    rig.cams.push_back(Camera::make(f, f, w / 2.0, h / 2.0, w, h));
    rig.cams.push_back(Camera::make(f, f, w / 2.0, h / 2.0, w, h, Eigen::Matrix3d::Identity(),
                                    Eigen::Vector3d(-0.3, 0.05, 0)));
    const int c = 4;
    std::vector<double> v;
    for (const auto& cam : rig.cams)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const auto p = unproject_pixel(cam, x, y, depth);
                v.push_back(std::sin(3.1 * p.x()) + std::cos(2.3 * p.y()));
                v.push_back(std::cos(4.7 * p.x() + 1.0));
                v.push_back(std::sin(5.3 * p.y() - 0.5 * p.x()));
                v.push_back(std::sin(2.0 * p.x() + 3.0 * p.y()));
            }
    rig.match = TD::from({2, h, w, c}, v);
    return rig;
}

} // namespace

TEST(PlaneSweep, RecoversTexturedPlaneWithinOneCandidateSpacing) {
    const int h = 16, w = 24;
    for (double d : {1.3, 2.2, 3.7}) {
        auto rig = plane_rig(d, h, w);
        const auto cand = inverse_depth_candidates(1.0, 5.0, 24);
        Tape<double> tape(false);
        auto depths = plane_sweep_from_features(tape, rig.match, rig.cams, cand, TD::scalar(std::log(1e4)), h, w);
        ASSERT_EQ(depths.size(), 2u);
        const double spacing = (1.0 / 1.0 - 1.0 / 5.0) / (cand.size() - 1); // inverse-depth spacing
        for (int y = 4; y < h - 4; ++y)
            for (int x = 6; x < w - 6; ++x)
                EXPECT_NEAR(1.0 / depths[0][y * w + x], 1.0 / d, spacing) << "depth " << d;
    }
}

TEST(PlaneSweep, SingleCandidateIsReturnedExactly) {
    auto rig = plane_rig(2.0, 8, 12);
    Tape<double> tape(false);
    auto depths = plane_sweep_from_features(tape, rig.match, rig.cams, {2.0}, TD::scalar(0.0), 8, 12);
    for (const auto& d : depths)
        for (double v : d.values()) EXPECT_EQ(v, 2.0);
}

TEST(PlaneSweep, FlatFeaturesGiveCandidateMeanInInverseDepth) {
    auto rig = plane_rig(2.0, 8, 12);
    const std::vector<double> cand = {1.0, 2.0, 4.0};
    Tape<double> tape(false);
    auto depths = plane_sweep_from_features(tape, TD::zeros({2, 8, 12, 4}), rig.cams, cand, TD::scalar(1.0), 8, 12);
    const double expected = 1.0 / ((1.0 + 0.5 + 0.25) / 3);
    for (const auto& d : depths)
        for (double v : d.values()) {
            EXPECT_TRUE(std::isfinite(v));
            EXPECT_NEAR(v, expected, 1e-12);
        }
}

TEST(PlaneSweep, SingleViewIsAnError) {
    auto rig = plane_rig(2.0, 8, 12);
    Tape<double> tape(false);
    auto one = TD::zeros({1, 8, 12, 4});
    EXPECT_THROW(plane_sweep_from_features(tape, one, {rig.cams[0]}, {2.0}, TD::scalar(0.0), 8, 12), Error);
}

TEST(PlaneSweep, TemperatureAndFeaturesReceiveGradients) {
    auto rig = plane_rig(2.0, 4, 6);
    const auto cand = inverse_depth_candidates(1.0, 4.0, 4);
    auto match = rig.match.clone();
    auto lt = TD::scalar(0.5);
    auto rep = resplat::testing::fd_check({match, lt}, [&](Tape<double>& t) {
        auto d = plane_sweep_from_features(t, match, rig.cams, cand, lt, 4, 6);
        return ops::add(t, resplat::testing::probe(t, d[0], 1), resplat::testing::probe(t, d[1], 2));
    });
    EXPECT_LT(rep.rel_error, 1e-6);
    EXPECT_GT(rep.numeric_norm, 0);
}

TEST(Fourier, ValuesAndGradient) {
    Rng rng(8);
    auto p = TD::from({5, 3}, rng.normal_vector<double>(15));
    Tape<double> tape(false);
    auto f = fourier_features(tape, p, 2.0, 4);
    ASSERT_EQ(f.shape(), (Shape{5, 24}));
    for (int i = 0; i < 5; ++i)
        for (int a = 0; a < 3; ++a)
            for (int k = 0; k < 4; ++k) {
                const double arg = p[i * 3 + a] / 2.0 * std::pow(2.0, k) * std::numbers::pi;
                EXPECT_NEAR(f[i * 24 + (a * 4 + k) * 2], std::sin(arg), 1e-14);
                EXPECT_NEAR(f[i * 24 + (a * 4 + k) * 2 + 1], std::cos(arg), 1e-14);
            }
    auto rep = resplat::testing::fd_check(
        {p}, [&](Tape<double>& t) { return resplat::testing::probe(t, fourier_features(t, p, 2.0, 4), 9); });
    EXPECT_LT(rep.rel_error, 1e-6);
}

namespace {

PointCloud<double> random_cloud(std::int64_t m, std::int64_t c, std::uint64_t seed) {
    Rng rng(seed);
    PointCloud<double> pc;
    pc.positions = TD::from({m, 3}, rng.normal_vector<double>(m * 3));
    pc.features = TD::from({m, c}, rng.normal_vector<double>(m * c));
    pc.grid_h = 1;
    pc.grid_w = static_cast<int>(m);
    return pc;
}

} // namespace

TEST(Aggregate, ShapeLawAndResidualIdentity) {
    auto cfg = tiny_model().init;
    ModelParams<double> p;
    add_init_params(p, cfg, 1);
    auto pc = random_cloud(40, cfg.c1, 2);
    for (int b = 0; b < cfg.context_blocks; ++b) zero_block_residuals(p, "init.ctx." + std::to_string(b));
    for (auto& v : p.at("init.pos.w").mutable_values()) v = 0;
    Tape<double> tape(false);
    aggregate_context(tape, p, cfg, pc, 2.0, 1);
    ASSERT_EQ(pc.aggregated.shape(), (Shape{40, cfg.c1}));
    for (std::int64_t i = 0; i < pc.features.numel(); ++i) EXPECT_EQ(pc.aggregated[i], pc.features[i]);
}

TEST(Aggregate, PermutationEquivariance) {
    auto cfg = tiny_model().init;
    ModelParams<double> p;
    add_init_params(p, cfg, 3);
    const std::int64_t m = 50, c = cfg.c1;
    auto pc = random_cloud(m, c, 4);
    std::vector<std::int64_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(5);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    PointCloud<double> qc = pc;
    std::vector<double> qp(m * 3), qf(m * c);
    for (std::int64_t i = 0; i < m; ++i) {
        for (int a = 0; a < 3; ++a) qp[i * 3 + a] = pc.positions[perm[i] * 3 + a];
        for (std::int64_t j = 0; j < c; ++j) qf[i * c + j] = pc.features[perm[i] * c + j];
    }
    qc.positions = TD::from({m, 3}, qp);
    qc.features = TD::from({m, c}, qf);
    Tape<double> tape(false);
    aggregate_context(tape, p, cfg, pc, 2.0, 1);
    aggregate_context(tape, p, cfg, qc, 2.0, 1);
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < c; ++j) EXPECT_NEAR(qc.aggregated[i * c + j], pc.aggregated[perm[i] * c + j], 1e-10);
}

TEST(Aggregate, TooFewPointsIsAnError) {
    auto cfg = tiny_model().init;
    ModelParams<double> p;
    add_init_params(p, cfg, 1);
    auto pc = random_cloud(3, cfg.c1, 2);
    Tape<double> tape(false);
    EXPECT_THROW(aggregate_context(tape, p, cfg, pc, 1.0, 1), Error);
}

TEST(Decode, ZeroOffsetHeadKeepsCentersAndCountLaw) {
    for (int gpp : {1, 4}) {
        auto cfg = tiny_model().init;
        cfg.gaussians_per_point = gpp;
        ModelParams<double> p;
        add_init_params(p, cfg, 6);
        auto pc = random_cloud(20, cfg.c1, 7);
        pc.aggregated = pc.features;
        for (auto& v : p.at("init.head.w").mutable_values()) v = 0;
        Tape<double> tape(false);
        auto gs = decode_gaussians(tape, p, cfg, pc, 3.0);
        ASSERT_EQ(gs.size(), 20 * gpp);
        ASSERT_EQ(gs.g.dim(1), cfg.c2());
        for (std::int64_t j = 0; j < 20; ++j)
            for (int q = 0; q < gpp; ++q) {
                const std::int64_t row = j * gpp + q;
                for (int a = 0; a < 3; ++a) EXPECT_EQ(gs.g[row * cfg.c2() + a], pc.positions[j * 3 + a]);
                for (std::int64_t c = 0; c < cfg.c1; ++c) EXPECT_EQ(gs.z[row * cfg.c1 + c], pc.aggregated[j * cfg.c1 + c]);
            }
    }
}

TEST(Decode, InitialScaleFollowsPointSpacingAndOffsetsAreBounded) {
    auto cfg = tiny_model().init;
    ModelParams<double> p;
    add_init_params(p, cfg, 8);
    resplat::testing::randomize(p, "init.head.w", 9, 50.0);
    // Unit lattice: every non-self neighbor among the 3 nearest lies at distance 1.
    std::vector<double> pos;
    for (int x = 0; x < 6; ++x)
        for (int y = 0; y < 6; ++y) pos.insert(pos.end(), {x * 1.0, y * 1.0, 0.0});
    PointCloud<double> pc;
    pc.positions = TD::from({36, 3}, pos);
    pc.aggregated = TD::full({36, cfg.c1}, 0.0);
    cfg.k = 3;
    Tape<double> tape(false);
    auto gs = decode_gaussians(tape, p, cfg, pc, 2.0);
    const int c2 = cfg.c2();
    for (int r = 0; r < 36; ++r) {
        for (int a = 0; a < 3; ++a) EXPECT_NEAR(gs.g[r * c2 + layout::log_scale + a], std::log(0.5), 1e-12);
        EXPECT_NEAR(gs.g[r * c2 + layout::opacity], cfg.opacity_init_logit, 1e-12);
        EXPECT_NEAR(gs.g[r * c2 + layout::rotation], 1.0, 1e-12);
    }
    // Large head weights still keep centers within the offset bound.
    pc.aggregated = TD::from({36, cfg.c1}, Rng(3).normal_vector<double>(36 * cfg.c1));
    Tape<double> t2(false);
    auto g2 = decode_gaussians(t2, p, cfg, pc, 2.0);
    for (int r = 0; r < 36; ++r)
        for (int a = 0; a < 3; ++a) EXPECT_LE(std::abs(g2.g[r * c2 + a] - pos[r * 3 + a]), 0.05 * 2.0 + 1e-12);
}

TEST(InitialReconstruction, EndToEndCountLaw) {
    auto scene = gen_scene(11, tiny_spec(3, 24, 16));
    for (int s : {2, 4, 8}) {
        auto cfg = tiny_model();
        cfg.init.stride = s;
        auto p = make_model<double>(cfg, 1);
        Tape<double> tape(false);
        auto r = initial_reconstruction(tape, p, cfg.init, scene);
        EXPECT_EQ(r.gaussians.size(), point_count(3, 16, 24, s));
        EXPECT_EQ(r.cloud.size(), point_count(3, 16, 24, s));
    }
}

TEST(InitialReconstruction, GradientsReachEveryStageOneModule) {
    auto scene = gen_scene(12, tiny_spec(2, 24, 16));
    auto cfg = tiny_model();
    cfg.init.depth = DepthSource::plane_sweep;
    cfg.init.sweep_candidates = 6;
    auto p = make_model<double>(cfg, 2);
    Tape<double> tape;
    auto r = initial_reconstruction(tape, p, cfg.init, scene);
    // An input view sees every decoded Gaussian regardless of the untrained depth.
    auto view = render(tape, r.gaussians, scene.inputs[0].camera);
    auto loss = ops::mean(tape, ops::abs(tape, ops::sub(tape, view.rgb, scene.inputs[0].image.tensor<double>())));
    tape.backward(loss);
    for (const char* name : {"init.enc.conv1.w", "init.enc.proj.w", "depth.match.w", "depth.log_temp", "init.pos.w",
                             "init.ctx.0.q.w", "init.ctx.1.mlp1.w", "init.head.w"}) {
        const auto& t = p[name];
        ASSERT_TRUE(t.has_grad()) << name;
        double norm = 0;
        for (double g : t.grad()) norm += g * g;
        EXPECT_GT(norm, 0) << name;
    }
}

TEST(InitialReconstruction, OracleDepthRequiresDepthMaps) {
    auto scene = gen_scene(13, tiny_spec(2, 24, 16));
    scene.depths.clear();
    auto cfg = tiny_model();
    auto p = make_model<double>(cfg, 3);
    Tape<double> tape(false);
    EXPECT_THROW(initial_reconstruction(tape, p, cfg.init, scene), Error);
}
