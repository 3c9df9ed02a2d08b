#include <gtest/gtest.h>

#include <numeric>

#include "../support/scenes.hpp"
#include "resplat/model/recurrent.hpp"

using namespace resplat;
using TD = Tensor<double>;
using resplat::testing::randomize;
using resplat::testing::tiny_model;
using resplat::testing::tiny_spec;

namespace {

struct Fixture {
    ModelConfig cfg;
    SceneSample scene;
    ModelParams<double> params;
    ErrorFeatureNet<double> net;
    GaussianSet<double> g0;

    explicit Fixture(ModelConfig c, std::uint64_t seed = 5) : cfg(std::move(c)) {
        scene = gen_scene(seed, tiny_spec(2, 24, 16));
        params = make_model<double>(cfg, seed);
        Tape<double> tape(false);
        g0 = initial_reconstruction(tape, params, cfg.init, scene).gaussians;
    }
    RecurrentContext<double> context() const { return {&params, &cfg, &net, {}}; }
};

void expect_bitwise(const TD& a, const TD& b, const char* what) {
    ASSERT_EQ(a.shape(), b.shape()) << what;
    for (std::int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]) << what << " at " << i;
}

std::vector<double> uniform(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform();
    return v;
}

double grad_norm(const TD& t) {
    if (!t.has_grad()) return 0;
    double s = 0;
    for (double g : t.grad()) s += g * g;
    return s;
}

} // namespace

TEST(Recurrent, ZeroHeadsKeepEveryIterateAtTheInitialSet) {
    for (auto mode : {ErrorMode::rgb, ErrorMode::feature}) {
        auto cfg = tiny_model();
        cfg.recurrent.error_mode = mode;
        Fixture f(cfg);
        randomize(f.params, "rec.blk", 9, 0.3);
        randomize(f.params, "prop.", 10, 0.3);
        Tape<double> tape(false);
        auto traj = run_recurrent(tape, f.context(), f.g0, f.scene, 3);
        ASSERT_EQ(traj.size(), 4u);
        for (int t = 1; t <= 3; ++t) {
            expect_bitwise(traj[t].g, f.g0.g, "g");
            expect_bitwise(traj[t].z, f.g0.z, "z");
            EXPECT_EQ(traj[t].iteration, t);
        }
    }
}

TEST(Recurrent, ShorterTrajectoryIsBitwisePrefix) {
    Fixture f(tiny_model());
    randomize(f.params, "rec.", 3, 0.2);
    randomize(f.params, "prop.", 4, 0.2);
    Tape<double> t2(false), t3(false);
    auto a = run_recurrent(t2, f.context(), f.g0, f.scene, 2);
    auto b = run_recurrent(t3, f.context(), f.g0, f.scene, 3);
    ASSERT_EQ(a.size(), 3u);
    ASSERT_EQ(b.size(), 4u);
    for (int t = 0; t <= 2; ++t) {
        expect_bitwise(a[t].g, b[t].g, "g");
        expect_bitwise(a[t].z, b[t].z, "z");
    }
    double moved = 0;
    for (std::int64_t i = 0; i < b[3].g.numel(); ++i) moved += std::abs(b[3].g[i] - b[2].g[i]);
    EXPECT_GT(moved, 0);
}

TEST(Recurrent, UpdatesAreAdditive) {
    Fixture f(tiny_model());
    randomize(f.params, "rec.", 6, 0.2);
    Tape<double> tape(false);
    const auto err = TD::from({f.g0.size(), 3}, Rng(1).normal_vector<double>(f.g0.size() * 3));
    auto d = update_step(tape, f.params, f.cfg.init, f.cfg.recurrent, f.g0, err, f.scene.radius);
    auto g1 = apply_delta(tape, f.g0, d);
    for (std::int64_t i = 0; i < g1.g.numel(); ++i) EXPECT_EQ(g1.g[i], f.g0.g[i] + d.dg[i]);
    for (std::int64_t i = 0; i < g1.z.numel(); ++i) EXPECT_EQ(g1.z[i], f.g0.z[i] + d.dz[i]);
    const double bound = f.cfg.recurrent.position_delta_bound * f.scene.radius;
    for (std::int64_t j = 0; j < f.g0.size(); ++j)
        for (int a = 0; a < 3; ++a) EXPECT_LE(std::abs(d.dg[j * d.dg.dim(1) + a]), bound);
}

TEST(Recurrent, UpdateIsPermutationEquivariant) {
    Fixture f(tiny_model());
    randomize(f.params, "rec.", 7, 0.2);
    const std::int64_t m = f.g0.size(), c2 = f.g0.g.dim(1), c1 = f.g0.z.dim(1);
    const auto err = TD::from({m, 3}, Rng(2).normal_vector<double>(m * 3));
    std::vector<std::int64_t> perm(m);
    for (std::int64_t i = 0; i < m; ++i) perm[i] = (i * 7 + 3) % m;
    auto permute = [&](const TD& t, std::int64_t c) {
        std::vector<double> v(t.numel());
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t k = 0; k < c; ++k) v[i * c + k] = t[perm[i] * c + k];
        return TD::from({m, c}, v);
    };
    ASSERT_EQ(std::gcd(std::int64_t{7}, m), 1);
    GaussianSet<double> gp{permute(f.g0.g, c2), permute(f.g0.z, c1), 0, f.g0.sh_degree};
    Tape<double> tape(false);
    auto d = update_step(tape, f.params, f.cfg.init, f.cfg.recurrent, f.g0, err, f.scene.radius);
    auto dp = update_step(tape, f.params, f.cfg.init, f.cfg.recurrent, gp, permute(err, 3), f.scene.radius);
    const auto expect = permute(d.dg, c2);
    for (std::int64_t i = 0; i < expect.numel(); ++i) EXPECT_NEAR(dp.dg[i], expect[i], 1e-12);
}

TEST(Recurrent, GradientsReachUpdateAndPropagationWeights) {
    for (bool detach : {false, true}) {
        auto cfg = tiny_model();
        cfg.recurrent.detach_between_steps = detach;
        Fixture f(cfg);
        randomize(f.params, "rec.", 11, 0.2);
        randomize(f.params, "prop.", 12, 0.2);
        Tape<double> tape;
        auto traj = run_recurrent(tape, f.context(), f.g0, f.scene, 2);
        auto view = render(tape, traj.back(), f.scene.targets[0].camera);
        auto loss = ops::mean(tape, ops::abs(tape, ops::sub(tape, view.rgb, f.scene.targets[0].image.tensor<double>())));
        tape.backward(loss);
        for (const char* name : {"rec.in.w", "rec.blk.0.q.w", "rec.head.ln.g", "rec.dg.w", "prop.0.v.w"})
            EXPECT_GT(grad_norm(f.params[name]), 0) << name << " detach=" << detach;
        // The hidden-state head only matters through later steps.
        if (detach)
            EXPECT_EQ(grad_norm(f.params["rec.dz.w"]), 0);
        else
            EXPECT_GT(grad_norm(f.params["rec.dz.w"]), 0);
    }
}

TEST(Recurrent, ZeroErrorSwitchFeedsZeros) {
    auto cfg = tiny_model();
    cfg.recurrent.zero_error = true;
    Fixture f(cfg);
    randomize(f.params, "rec.", 13, 0.2);
    Tape<double> tape(false);
    auto traj = run_recurrent(tape, f.context(), f.g0, f.scene, 1);
    const auto zeros = TD::zeros({f.g0.size(), 3});
    auto d = update_step(tape, f.params, cfg.init, cfg.recurrent, f.g0, zeros, f.scene.radius);
    auto expect = apply_delta(tape, f.g0, d);
    expect_bitwise(traj[1].g, expect.g, "g");
}

TEST(Recurrent, MisalignedErrorIsRejected) {
    Fixture f(tiny_model());
    Tape<double> tape(false);
    const auto err = TD::zeros({f.g0.size() - 1, 3});
    EXPECT_THROW(update_step(tape, f.params, f.cfg.init, f.cfg.recurrent, f.g0, err, f.scene.radius), Error);
}

TEST(Feedback, RenderInputsStacksPerViewRenders) {
    Fixture f(tiny_model());
    Tape<double> tape(false);
    const auto cams = f.scene.input_cameras();
    auto r = render_inputs(tape, f.g0, cams);
    ASSERT_EQ(r.stacked.shape(), (Shape{2, 16, 24, 3}));
    for (std::size_t v = 0; v < cams.size(); ++v) {
        auto single = render(tape, f.g0, cams[v]);
        for (std::int64_t i = 0; i < single.rgb.numel(); ++i)
            ASSERT_EQ(r.stacked[static_cast<std::int64_t>(v) * single.rgb.numel() + i], single.rgb[i]);
    }
}

TEST(Feedback, ErrorIsZeroOnIdenticalInputsAndAntisymmetric) {
    ErrorFeatureNet<double> net;
    Rng rng(3);
    const auto a = TD::from({2, 16, 24, 3}, uniform(rng, 2 * 16 * 24 * 3));
    const auto b = TD::from({2, 16, 24, 3}, uniform(rng, 2 * 16 * 24 * 3));
    for (auto mode : {ErrorMode::rgb, ErrorMode::feature}) {
        Tape<double> tape(false);
        auto same = feature_error(tape, a, a, mode, net);
        ASSERT_EQ(same.shape(), (Shape{2, 4, 6, error_channels(mode)}));
        for (double v : same.values()) ASSERT_EQ(v, 0.0);
        auto ab = feature_error(tape, a, b, mode, net);
        auto ba = feature_error(tape, b, a, mode, net);
        for (std::int64_t i = 0; i < ab.numel(); ++i) ASSERT_EQ(ab[i], -ba[i]);
    }
    Tape<double> tape(false);
    EXPECT_THROW(feature_error(tape, a, TD::zeros({2, 16, 20, 3}), ErrorMode::rgb, net), Error);
}

TEST(Feedback, ErrorFeatureNetIsDeterministicAndFrozen) {
    ErrorFeatureNet<double> n1, n2;
    for (int s = 0; s < 3; ++s) {
        expect_bitwise(n1.weight(s), n2.weight(s), "weight");
        EXPECT_FALSE(n1.weight(s).requires_grad());
    }
    // Columns of each flattened stage weight are orthonormal up to the gain.
    const auto& w = n1.weight(1);
    const std::int64_t rows = w.dim(0) * w.dim(1) * w.dim(2), cols = w.dim(3);
    for (std::int64_t a = 0; a < cols; ++a)
        for (std::int64_t b = 0; b < cols; ++b) {
            double dot = 0;
            for (std::int64_t r = 0; r < rows; ++r) dot += w[r * cols + a] * w[r * cols + b];
            EXPECT_NEAR(dot, a == b ? 2.0 : 0.0, 1e-10);
        }
}

TEST(Feedback, GroundTruthBranchReceivesNoGradient) {
    ErrorFeatureNet<double> net;
    Rng rng(4);
    auto a = TD::from({1, 8, 8, 3}, uniform(rng, 192));
    auto b = TD::from({1, 8, 8, 3}, uniform(rng, 192));
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tape<double> tape;
    auto e = feature_error(tape, a, b, ErrorMode::feature, net);
    tape.backward(ops::sum(tape, ops::mul(tape, e, e)));
    EXPECT_GT(grad_norm(a), 0);
    EXPECT_EQ(grad_norm(b), 0);
}

TEST(Feedback, ZeroResidualPropagationIsIdentityInPointOrder) {
    auto cfg = tiny_model().recurrent;
    cfg.propagation_blocks = 2;
    for (int gpp : {1, 3}) {
        ModelParams<double> p;
        add_feedback_params(p, cfg, 1);
        for (int b = 0; b < 2; ++b) zero_block_residuals(p, "prop." + std::to_string(b));
        Rng rng(5);
        const auto raw = TD::from({2, 4, 6, 3}, rng.normal_vector<double>(144));
        Tape<double> tape(false);
        auto e = propagate_error(tape, p, cfg, raw, 48 * gpp, gpp);
        ASSERT_EQ(e.shape(), (Shape{48 * gpp, 3}));
        for (std::int64_t j = 0; j < 48; ++j)
            for (int r = 0; r < gpp; ++r)
                for (int c = 0; c < 3; ++c) ASSERT_EQ(e[(j * gpp + r) * 3 + c], raw[j * 3 + c]);
    }
}

TEST(Feedback, ZeroErrorWithZeroBiasesPropagatesToZero) {
    auto cfg = tiny_model().recurrent;
    ModelParams<double> p;
    add_feedback_params(p, cfg, 2);
    randomize(p, "prop.0.q", 3, 0.5);
    randomize(p, "prop.0.mlp1.w", 4, 0.5);
    Tape<double> tape(false);
    auto e = propagate_error(tape, p, cfg, TD::zeros({1, 4, 4, 3}), 16, 1);
    for (double v : e.values()) EXPECT_EQ(v, 0.0);
}

TEST(Feedback, PropagationMixesAcrossViews) {
    auto cfg = tiny_model().recurrent;
    ModelParams<double> p;
    add_feedback_params(p, cfg, 3);
    randomize(p, "prop.", 4, 0.5);
    std::vector<double> raw(2 * 4 * 4 * 3, 0.0);
    raw[0] = 1.0; // a single error vector in view 0
    Tape<double> tape(false);
    auto base = propagate_error(tape, p, cfg, TD::zeros({2, 4, 4, 3}), 32, 1);
    auto e = propagate_error(tape, p, cfg, TD::from({2, 4, 4, 3}, raw), 32, 1);
    double changed = 0;
    for (std::int64_t i = 16 * 3; i < 32 * 3; ++i) changed += std::abs(e[i] - base[i]);
    EXPECT_GT(changed, 0);
}

TEST(Feedback, PropagationRejectsMisalignedCounts) {
    auto cfg = tiny_model().recurrent;
    ModelParams<double> p;
    add_feedback_params(p, cfg, 4);
    Tape<double> tape(false);
    EXPECT_THROW(propagate_error(tape, p, cfg, TD::zeros({1, 4, 4, 3}), 15, 1), Error);
    EXPECT_THROW(propagate_error(tape, p, cfg, TD::zeros({1, 4, 4, 5}), 16, 1), Error);
}

TEST(Feedback, FullScaleReadoutCount) {
    // Eight 512x960 views give 128x240 error vectors each.
    auto cfg = tiny_model().recurrent;
    cfg.error_mode = ErrorMode::feature;
    cfg.propagation_blocks = 0;
    ModelParams<float> p;
    add_feedback_params(p, cfg, 5);
    const auto raw = Tensor<float>::zeros({8, 128, 240, 64});
    Tape<float> tape(false);
    auto e = propagate_error(tape, p, cfg, raw, 245760, 1);
    EXPECT_EQ(e.dim(0), 245760);
    EXPECT_EQ(e.dim(1), 64);
}
