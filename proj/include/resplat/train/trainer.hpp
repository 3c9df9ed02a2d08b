#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <string>
#include <vector>

#include "resplat/io/checkpoint.hpp"
#include "resplat/model/recurrent.hpp"
#include "resplat/scene/metrics.hpp"
#include "resplat/train/losses.hpp"
#include "resplat/train/optimizer.hpp"

namespace resplat {

/// Parameter groups optimized by each stage.
inline const std::vector<std::string>& stage1_prefixes() {
    static const std::vector<std::string> p = {"init.", "depth."};
    return p;
}
inline const std::vector<std::string>& stage2_prefixes() {
    static const std::vector<std::string> p = {"prop.", "rec."};
    return p;
}

struct TrainConfig {
    std::int64_t steps = 1000;
    OptimConfig optim;       // total_steps is overridden by steps
    std::uint64_t seed = 0;
    std::string log_path;    // CSV loss curve; empty disables
    std::string checkpoint_path;
    std::int64_t checkpoint_every = 0; // 0: only at the end
    RenderSettings render;
};

struct LogRow {
    std::int64_t step = 0;
    int stage = 1;
    double loss = 0;
    double psnr = 0;
    double lr = 0;
};

struct TrainResult {
    std::vector<LogRow> log;
    std::int64_t skipped_steps = 0;
};

using ProgressFn = std::function<void(const LogRow&)>;

/// Uniform draw of the unroll length on {1, …, max}.
class IterationSampler {
public:
    IterationSampler(int max_iterations, std::uint64_t seed) : max_(max_iterations), rng_(seed) {
        require(max_iterations >= 1, "iteration sampler: maximum must be at least 1");
    }
    int next() { return static_cast<int>(rng_.uniform_int(1, max_)); }

private:
    int max_;
    Rng rng_;
};

namespace detail {

inline std::vector<std::size_t> pick_targets(Rng& rng, std::size_t available, int wanted) {
    std::vector<std::size_t> idx(available);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (wanted <= 0 || static_cast<std::size_t>(wanted) >= available) return idx;
    for (std::size_t i = 0; i < static_cast<std::size_t>(wanted); ++i)
        std::swap(idx[i], idx[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                        static_cast<std::int64_t>(available - 1)))]);
    idx.resize(static_cast<std::size_t>(wanted));
    return idx;
}

class CsvLog {
public:
    CsvLog(const std::string& path, std::uint64_t seed) {
        if (path.empty()) return;
        if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
            std::filesystem::create_directories(parent);
        os_.open(path);
        require(os_.good(), "cannot write loss log '", path, "'");
        os_ << "# seed=" << seed << "\nstep,stage,loss,psnr,lr\n";
    }
    void write(const LogRow& r) {
        if (!os_.is_open()) return;
        os_ << r.step << ',' << r.stage << ',' << std::setprecision(8) << r.loss << ',' << psnr_capped(r.psnr) << ','
            << r.lr << '\n';
        os_.flush();
    }

private:
    std::ofstream os_;
};

template <class T>
double mean_psnr(const std::vector<Tensor<T>>& renders, const std::vector<Tensor<T>>& targets) {
    double acc = 0;
    for (std::size_t v = 0; v < renders.size(); ++v)
        acc += psnr_capped(psnr(Image::from(renders[v]), Image::from(targets[v])));
    return renders.empty() ? 0.0 : acc / static_cast<double>(renders.size());
}

template <class T>
void save_stage(const TrainConfig& tc, const ModelConfig& cfg, const ModelParams<T>& p, std::int64_t step, int stage) {
    if (tc.checkpoint_path.empty()) return;
    io::Checkpoint<T> ck;
    ck.config = cfg;
    ck.step = step;
    ck.stage = stage;
    ck.seed = tc.seed;
    ck.params = p.clone();
    if (auto parent = std::filesystem::path(tc.checkpoint_path).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
    io::save_checkpoint(tc.checkpoint_path, ck);
}

} // namespace detail

/// Stage 1: optimizes init.* and depth.* under Σ_v render_loss + α Σ_i depth_smooth_loss.
template <class T>
TrainResult train_stage1(ModelParams<T>& p, const ModelConfig& cfg, const std::vector<SceneSample>& data,
                         const TrainConfig& tc, const ProgressFn& progress = {}) {
    require(!data.empty(), "train_stage1: empty dataset");
    require(tc.steps > 0, "train_stage1: step count must be positive");
    cfg.loss.validate();
    auto oc = tc.optim;
    oc.total_steps = tc.steps;
    AdamW<T> opt(oc, stage1_prefixes());
    ErrorFeatureNet<T> net;
    Rng rng(tc.seed);
    detail::CsvLog log(tc.log_path, tc.seed);
    TrainResult out;
    for (std::int64_t step = 1; step <= tc.steps; ++step) {
        const auto& scene = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
        const auto views = detail::pick_targets(rng, scene.targets.size(), cfg.loss.target_views);
        p.zero_grad();
        Tape<T> tape;
        auto r = initial_reconstruction(tape, p, cfg.init, scene);
        std::vector<Tensor<T>> renders, targets;
        for (auto v : views) {
            renders.push_back(render(tape, r.gaussians, scene.targets[v].camera, tc.render).rgb);
            targets.push_back(scene.targets[v].image.template tensor<T>());
        }
        std::vector<Image> inputs;
        for (const auto& v : scene.inputs) inputs.push_back(v.image);
        auto loss = stage1_loss(tape, renders, targets, inputs, r.depths, cfg.loss, net);
        tape.backward(loss);
        opt.step(p);
        LogRow row{step, 1, static_cast<double>(loss[0]), detail::mean_psnr(renders, targets), opt.last_lr()};
        out.log.push_back(row);
        log.write(row);
        if (progress) progress(row);
        if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 && step < tc.steps)
            detail::save_stage(tc, cfg, p, step, 1);
    }
    out.skipped_steps = opt.skipped();
    detail::save_stage(tc, cfg, p, tc.steps, 1);
    return out;
}

/// Initial Gaussians of every scene under frozen stage-1 weights, off the tape.
template <class T>
std::vector<GaussianSet<T>> precompute_initial(const ModelParams<T>& p, const ModelConfig& cfg,
                                               const std::vector<SceneSample>& data) {
    std::vector<GaussianSet<T>> out;
    out.reserve(data.size());
    for (const auto& s : data) {
        Tape<T> tape(false);
        auto gs = initial_reconstruction(tape, p, cfg.init, s).gaussians;
        gs.g = gs.g.detach();
        gs.z = gs.z.detach();
        out.push_back(std::move(gs));
    }
    return out;
}

/// Stage 2: freezes stage-1 weights, samples T on {1, …, max_iterations} per step and
/// optimizes prop.* and rec.* under the discounted trajectory loss.
template <class T>
TrainResult train_stage2(ModelParams<T>& p, const ModelConfig& cfg, const std::vector<SceneSample>& data,
                         const TrainConfig& tc, const ProgressFn& progress = {}) {
    require(!data.empty(), "train_stage2: empty dataset");
    require(tc.steps > 0, "train_stage2: step count must be positive");
    cfg.loss.validate();
    for (const auto& prefix : stage1_prefixes()) p.freeze(prefix);
    const auto initial = precompute_initial(p, cfg, data);
    auto oc = tc.optim;
    oc.total_steps = tc.steps;
    AdamW<T> opt(oc, stage2_prefixes());
    ErrorFeatureNet<T> net;
    Rng rng(tc.seed);
    IterationSampler sampler(cfg.recurrent.max_iterations, tc.seed ^ 0x9e3779b97f4a7c15ull);
    const RecurrentContext<T> ctx{&p, &cfg, &net, tc.render};
    detail::CsvLog log(tc.log_path, tc.seed);
    TrainResult out;
    for (std::int64_t step = 1; step <= tc.steps; ++step) {
        const auto si = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1));
        const auto& scene = data[si];
        const auto views = detail::pick_targets(rng, scene.targets.size(), cfg.loss.target_views);
        const int iters = sampler.next();
        p.zero_grad();
        Tape<T> tape;
        auto traj = run_recurrent(tape, ctx, initial[si], scene, iters);
        std::vector<Tensor<T>> targets;
        for (auto v : views) targets.push_back(scene.targets[v].image.template tensor<T>());
        std::vector<std::vector<Tensor<T>>> renders;
        for (std::size_t t = cfg.loss.supervise_initial ? 0 : 1; t < traj.size(); ++t) {
            renders.emplace_back();
            for (auto v : views) renders.back().push_back(render(tape, traj[t], scene.targets[v].camera, tc.render).rgb);
        }
        auto loss = stage2_loss(tape, renders, targets, cfg.loss, net);
        tape.backward(loss);
        opt.step(p);
        LogRow row{step, 2, static_cast<double>(loss[0]), detail::mean_psnr(renders.back(), targets), opt.last_lr()};
        out.log.push_back(row);
        log.write(row);
        if (progress) progress(row);
        if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 && step < tc.steps)
            detail::save_stage(tc, cfg, p, step, 2);
    }
    out.skipped_steps = opt.skipped();
    detail::save_stage(tc, cfg, p, tc.steps, 2);
    return out;
}

/// Per-iteration quality of one scene: psnr[t] and ssim[t] average the target views of G^t.
struct SceneEval {
    std::vector<double> psnr, ssim;
    std::int64_t gaussians = 0;
    double recon_seconds = 0;  // stage 1 plus T recurrent steps
    double render_seconds = 0; // mean per target frame of the final prediction
};

template <class T>
SceneEval evaluate_scene(const ModelParams<T>& p, const ModelConfig& cfg, const SceneSample& scene, int iterations,
                         const RenderSettings& rs = {}, std::vector<GaussianSet<T>>* trajectory = nullptr) {
    using clock = std::chrono::steady_clock;
    ErrorFeatureNet<T> net;
    Tape<T> tape(false);
    const auto t0 = clock::now();
    auto g0 = initial_reconstruction(tape, p, cfg.init, scene).gaussians;
    const RecurrentContext<T> ctx{&p, &cfg, &net, rs};
    auto traj = run_recurrent(tape, ctx, g0, scene, iterations);
    SceneEval ev;
    ev.recon_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    ev.gaussians = traj.back().size();
    for (std::size_t t = 0; t < traj.size(); ++t) {
        double ps = 0, ss = 0, secs = 0;
        for (const auto& v : scene.targets) {
            const auto r0 = clock::now();
            auto img = Image::from(render(tape, traj[t], v.camera, rs).rgb);
            secs += std::chrono::duration<double>(clock::now() - r0).count();
            ps += psnr_capped(psnr(img, v.image));
            ss += img.width >= 11 && img.height >= 11 ? ssim(img, v.image) : 0.0;
        }
        const double n = static_cast<double>(scene.targets.size());
        ev.psnr.push_back(ps / n);
        ev.ssim.push_back(ss / n);
        if (t + 1 == traj.size()) ev.render_seconds = secs / n;
    }
    if (trajectory) *trajectory = std::move(traj);
    return ev;
}

} // namespace resplat
