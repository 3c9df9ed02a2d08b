#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "resplat/core/parallel.hpp"
#include "resplat/io/checkpoint.hpp"
#include "resplat/io/scene_io.hpp"
#include "resplat/scene/synth.hpp"
#include "resplat/train/trainer.hpp"

namespace resplat::app {

namespace fs = std::filesystem;

/// Everything a command needs. Built from defaults, then a config file, then flags.
struct RunConfig {
    ModelConfig model;
    SynthSpec synth;
    std::int64_t steps = 1000;
    double lr = 2e-4;
    double weight_decay = 0.01;
    double warmup_fraction = 0.05;
    std::int64_t checkpoint_every = 0;
    std::uint64_t seed = 0;
    int threads = 0; // 0: all available cores
    int iterations = 3;
    int count = 1;
    bool oracle_gaussians = false;
    bool quiet = false;
    std::string log_path;

    OptimConfig optim() const {
        OptimConfig o;
        o.lr = lr;
        o.weight_decay = weight_decay;
        o.warmup_fraction = warmup_fraction;
        o.total_steps = steps;
        return o;
    }
};

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
    j = {{"inputs", s.inputs},       {"targets", s.targets},
         {"width", s.width},         {"height", s.height},
         {"sh_degree", s.sh_degree}, {"objects", s.objects},
         {"object_gaussians", s.object_gaussians}, {"room", s.room},
         {"wall_spacing", s.wall_spacing},         {"orbit_radius", s.orbit_radius},
         {"orbit_arc_deg", s.orbit_arc_deg},       {"height_jitter", s.height_jitter},
         {"look_jitter", s.look_jitter},           {"fov_deg", s.fov_deg},
         {"texture_frequency", s.texture_frequency}};
}

inline void from_json(const nlohmann::json& j, SynthSpec& s) {
    s.inputs = j.value("inputs", s.inputs);
    s.targets = j.value("targets", s.targets);
    s.width = j.value("width", s.width);
    s.height = j.value("height", s.height);
    s.sh_degree = j.value("sh_degree", s.sh_degree);
    s.objects = j.value("objects", s.objects);
    s.object_gaussians = j.value("object_gaussians", s.object_gaussians);
    s.room = j.value("room", s.room);
    s.wall_spacing = j.value("wall_spacing", s.wall_spacing);
    s.orbit_radius = j.value("orbit_radius", s.orbit_radius);
    s.orbit_arc_deg = j.value("orbit_arc_deg", s.orbit_arc_deg);
    s.height_jitter = j.value("height_jitter", s.height_jitter);
    s.look_jitter = j.value("look_jitter", s.look_jitter);
    s.fov_deg = j.value("fov_deg", s.fov_deg);
    s.texture_frequency = j.value("texture_frequency", s.texture_frequency);
}

/// Overlays the keys present in a config file onto rc.
inline void apply_config_file(RunConfig& rc, const fs::path& path) {
    std::ifstream is(path);
    require(is.good(), "cannot open config file '", path.string(), "'");
    nlohmann::json j;
    try {
        is >> j;
        if (j.contains("model")) from_json(j.at("model"), rc.model);
        if (j.contains("synth")) from_json(j.at("synth"), rc.synth);
        if (j.contains("train")) {
            const auto& t = j.at("train");
            rc.steps = t.value("steps", rc.steps);
            rc.lr = t.value("lr", rc.lr);
            rc.weight_decay = t.value("weight_decay", rc.weight_decay);
            rc.warmup_fraction = t.value("warmup_fraction", rc.warmup_fraction);
            rc.checkpoint_every = t.value("checkpoint_every", rc.checkpoint_every);
        }
        rc.seed = j.value("seed", rc.seed);
        rc.threads = j.value("threads", rc.threads);
        rc.iterations = j.value("iterations", rc.iterations);
        rc.count = j.value("count", rc.count);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        fail("config file '", path.string(), "': ", e.what());
    }
}

inline void apply_threads(const RunConfig& rc) {
    set_thread_count(rc.threads > 0 ? rc.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
}

/// Scene directories under root, sorted by name; root itself when it holds a scene.
inline std::vector<fs::path> scene_dirs(const fs::path& root) {
    require(fs::is_directory(root), "'", root.string(), "' is not a directory");
    if (fs::exists(root / "cameras.json")) return {root};
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && fs::exists(e.path() / "cameras.json")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    require(!out.empty(), "'", root.string(), "' contains no scene directories");
    return out;
}

inline std::vector<SceneSample> load_dataset(const fs::path& root) {
    std::vector<SceneSample> out;
    for (const auto& d : scene_dirs(root)) out.push_back(io::load_scene_dir(d));
    return out;
}

inline std::ofstream open_csv(const fs::path& path, std::uint64_t seed, const std::string& header) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    require(os.good(), "cannot write '", path.string(), "'");
    os << "# seed=" << seed << '\n' << header << '\n' << std::setprecision(10);
    return os;
}

inline std::string indexed(const char* stem, int i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%04d%s", stem, i, ext);
    return buf;
}

/// Writes count synthetic scenes; scene i uses seed + i.
inline void gen_data(const RunConfig& rc, const fs::path& out_dir) {
    require(rc.count > 0, "gen-data: count must be positive");
    rc.synth.validate();
    for (int i = 0; i < rc.count; ++i)
        io::save_scene_dir(gen_scene(rc.seed + static_cast<std::uint64_t>(i), rc.synth), out_dir / indexed("scene_", i, ""));
}

inline ProgressFn progress_printer(const RunConfig& rc) {
    if (rc.quiet) return {};
    const std::int64_t every = std::max<std::int64_t>(1, rc.steps / 50);
    return [every, total = rc.steps](const LogRow& r) {
        if (r.step % every == 0 || r.step == total)
            std::cerr << "stage " << r.stage << " step " << r.step << '/' << total << " loss " << r.loss << " psnr "
                      << r.psnr << '\n';
    };
}

inline TrainConfig train_config(const RunConfig& rc, const fs::path& out_ckpt) {
    TrainConfig tc;
    tc.steps = rc.steps;
    tc.optim = rc.optim();
    tc.seed = rc.seed;
    tc.log_path = rc.log_path.empty() ? out_ckpt.string() + ".loss.csv" : rc.log_path;
    tc.checkpoint_path = out_ckpt.string();
    tc.checkpoint_every = rc.checkpoint_every;
    return tc;
}

/// Stage 1 from a fresh model seeded with rc.seed.
inline void train_init(const RunConfig& rc, const fs::path& data_dir, const fs::path& out_ckpt) {
    const auto data = load_dataset(data_dir);
    auto params = make_model<float>(rc.model, rc.seed);
    train_stage1<float>(params, rc.model, data, train_config(rc, out_ckpt), progress_printer(rc));
}

/// Stage 2 from a stage-1 checkpoint. The initializer section of the configuration
/// comes from the checkpoint; feedback and update weights are rebuilt for rc.
inline void train_recurrent(const RunConfig& rc, const fs::path& data_dir, const fs::path& init_ckpt,
                            const fs::path& out_ckpt) {
    const auto ck = io::load_checkpoint<float>(init_ckpt);
    ModelConfig cfg = rc.model;
    cfg.init = ck.config.init;
    auto params = make_model<float>(cfg, rc.seed);
    for (const auto& prefix : stage1_prefixes())
        for (auto& [name, t] : params.all())
            if (name.rfind(prefix, 0) == 0) {
                const auto& src = ck.params[name];
                require(src.shape() == t.shape(), "train-recurrent: checkpoint tensor '", name, "' has shape ",
                        src.shape(), ", expected ", t.shape());
                std::copy(src.values().begin(), src.values().end(), t.mutable_values().begin());
            }
    const auto data = load_dataset(data_dir);
    train_stage2<float>(params, cfg, data, train_config(rc, out_ckpt), progress_printer(rc));
}

inline ModelConfig runtime_config(const RunConfig& rc, const io::Checkpoint<float>& ck) {
    ModelConfig cfg = ck.config;
    cfg.recurrent.zero_error = rc.model.recurrent.zero_error;
    return cfg;
}

/// Trajectory G^0..G^T of one scene under a checkpoint.
inline std::vector<GaussianSet<float>> reconstruct(const io::Checkpoint<float>& ck, const ModelConfig& cfg,
                                                   const SceneSample& scene, int iterations) {
    std::vector<GaussianSet<float>> traj;
    evaluate_scene<float>(ck.params, cfg, scene, iterations, {}, &traj);
    return traj;
}

/// Writes gaussians_tNNNN.ply, render_tNNNN_<view>.png and metrics.csv for t = 0..T.
inline void infer(const RunConfig& rc, const fs::path& scene_dir, const fs::path& ckpt, const fs::path& out_dir) {
    require(rc.iterations >= 0, "infer: iterations must be non-negative");
    const auto ck = io::load_checkpoint<float>(ckpt);
    const auto cfg = runtime_config(rc, ck);
    const auto scene = io::load_scene_dir(scene_dir);
    const auto names = io::read_cameras(scene_dir / "cameras.json");
    fs::create_directories(out_dir);
    const auto traj = reconstruct(ck, cfg, scene, rc.iterations);
    auto csv = open_csv(out_dir / "metrics.csv", rc.seed, "iteration,view,psnr,ssim,gaussians");
    for (std::size_t t = 0; t < traj.size(); ++t) {
        io::write_ply(out_dir / indexed("gaussians_t", static_cast<int>(t), ".ply"), io::to_cloud(traj[t]));
        Tape<float> tape(false);
        std::size_t v = 0;
        for (const auto& e : names) {
            if (e.role != "target") continue;
            const auto img = Image::from(render(tape, traj[t], e.camera).rgb);
            io::write_image(out_dir / (indexed("render_t", static_cast<int>(t), "_") + e.name + ".png"), img);
            const auto& gt = scene.targets[v++].image;
            csv << t << ',' << e.name << ',' << psnr_capped(psnr(img, gt)) << ','
                << (img.width >= 11 && img.height >= 11 ? ssim(img, gt) : 0.0) << ',' << traj[t].size() << '\n';
        }
    }
}

/// Per-scene, per-iteration metrics. With oracle_gaussians every iterate is the
/// scene's ground-truth cloud and no checkpoint is read.
inline void eval(const RunConfig& rc, const std::vector<fs::path>& roots, const fs::path& ckpt, const fs::path& out_csv) {
    require(rc.iterations >= 0, "eval: iterations must be non-negative");
    std::vector<fs::path> dirs;
    for (const auto& r : roots)
        for (auto& d : scene_dirs(r)) dirs.push_back(d);
    std::optional<io::Checkpoint<float>> ck;
    if (!rc.oracle_gaussians) ck = io::load_checkpoint<float>(ckpt);
    auto csv = open_csv(out_csv, rc.seed, "scene,iteration,psnr,ssim,gaussians,recon_seconds,render_seconds");
    for (const auto& dir : dirs) {
        const auto scene = io::load_scene_dir(dir);
        SceneEval ev;
        if (rc.oracle_gaussians) {
            require(scene.truth.size() > 0, "eval: scene '", dir.string(), "' has no ground-truth Gaussians");
            using clock = std::chrono::steady_clock;
            double ps = 0, ss = 0, secs = 0;
            for (const auto& v : scene.targets) {
                const auto t0 = clock::now();
                const auto img = render_truth(scene.truth, v.camera).first;
                secs += std::chrono::duration<double>(clock::now() - t0).count();
                ps += psnr_capped(psnr(img, v.image));
                ss += img.width >= 11 && img.height >= 11 ? ssim(img, v.image) : 0.0;
            }
            const double n = static_cast<double>(scene.targets.size());
            ev.psnr.assign(static_cast<std::size_t>(rc.iterations) + 1, ps / n);
            ev.ssim.assign(ev.psnr.size(), ss / n);
            ev.gaussians = scene.truth.size();
            ev.render_seconds = secs / n;
        } else {
            ev = evaluate_scene<float>(ck->params, runtime_config(rc, *ck), scene, rc.iterations);
        }
        for (std::size_t t = 0; t < ev.psnr.size(); ++t)
            csv << dir.filename().string() << ',' << t << ',' << ev.psnr[t] << ',' << ev.ssim[t] << ','
                << ev.gaussians << ',' << ev.recon_seconds << ',' << ev.render_seconds << '\n';
        if (!rc.quiet)
            std::cerr << dir.filename().string() << " psnr " << ev.psnr.front() << " -> " << ev.psnr.back() << '\n';
    }
}

/// Renders every camera of a cameras.json. A PLY is rendered as is; a checkpoint is first
/// run on the scene that owns the cameras.json and its final iterate is rendered.
/// Writes <view>.png and full-precision <view>.pfm.
inline void render_views(const RunConfig& rc, const fs::path& source, const fs::path& cameras, const fs::path& out_dir) {
    const auto views = io::read_cameras(cameras);
    fs::create_directories(out_dir);
    auto emit = [&](const std::string& name, const Image& img) {
        io::write_image(out_dir / (name + ".png"), img);
        io::write_pfm_rgb(out_dir / (name + ".pfm"), img);
    };
    if (io::detail::extension(source) == ".ply") {
        const auto cloud = io::read_ply(source);
        for (const auto& v : views) emit(v.name, render_truth(cloud, v.camera).first);
        return;
    }
    const auto ck = io::load_checkpoint<float>(source);
    const auto scene = io::load_scene_dir(cameras.parent_path());
    const auto traj = reconstruct(ck, runtime_config(rc, ck), scene, rc.iterations);
    Tape<float> tape(false);
    for (const auto& v : views) emit(v.name, Image::from(render(tape, traj.back(), v.camera).rgb));
}

} // namespace resplat::app
