#include <CLI11.hpp>
#include <iostream>

#include "resplat/app/commands.hpp"

using namespace resplat;
namespace fs = std::filesystem;

namespace {

/// A flag bound to a scratch value, copied onto the run config only when given.
struct Overrides {
    std::vector<std::function<void(app::RunConfig&)>> apply;

    template <class V>
    void add(CLI::App& cmd, const std::string& name, const std::string& help, V app::RunConfig::*field) {
        auto value = std::make_shared<V>();
        auto* opt = cmd.add_option(name, *value, help);
        apply.push_back([opt, value, field](app::RunConfig& rc) {
            if (opt->count()) rc.*field = *value;
        });
    }

    template <class V, class Fn>
    void add_with(CLI::App& cmd, const std::string& name, const std::string& help, Fn setter) {
        auto value = std::make_shared<V>();
        auto* opt = cmd.add_option(name, *value, help);
        apply.push_back([opt, value, setter](app::RunConfig& rc) {
            if (opt->count()) setter(rc, *value);
        });
    }

    void flag(CLI::App& cmd, const std::string& name, const std::string& help,
              std::function<void(app::RunConfig&)> setter) {
        auto* opt = cmd.add_flag(name, help);
        apply.push_back([opt, setter](app::RunConfig& rc) {
            if (opt->count()) setter(rc);
        });
    }
};

void add_model_flags(CLI::App& cmd, Overrides& o) {
    o.add_with<int>(cmd, "--stride", "subsample stride s (2, 4 or 8)", [](auto& rc, int v) { rc.model.init.stride = v; });
    o.add_with<int>(cmd, "--c1", "point feature width", [](auto& rc, int v) { rc.model.init.c1 = v; });
    o.add_with<int>(cmd, "--context-blocks", "context attention blocks",
                    [](auto& rc, int v) { rc.model.init.context_blocks = v; });
    o.add_with<int>(cmd, "--gaussians-per-point", "Gaussians decoded per point",
                    [](auto& rc, int v) { rc.model.init.gaussians_per_point = v; });
    o.add_with<std::string>(cmd, "--depth", "depth provider: oracle or plane_sweep",
                            [](auto& rc, const std::string& v) { rc.model.init.depth = parse_depth_source(v); });
    o.add_with<int>(cmd, "--target-views", "target views per training step",
                    [](auto& rc, int v) { rc.model.loss.target_views = v; });
    o.add_with<double>(cmd, "--alpha", "depth smoothness weight", [](auto& rc, double v) { rc.model.loss.alpha = v; });
    o.add_with<double>(cmd, "--lambda", "feature loss weight", [](auto& rc, double v) { rc.model.loss.lambda = v; });
    o.add_with<double>(cmd, "--gamma", "recurrent loss discount", [](auto& rc, double v) { rc.model.loss.gamma = v; });
}

void add_recurrent_flags(CLI::App& cmd, Overrides& o) {
    o.add_with<std::string>(cmd, "--error-mode", "feedback error: feature or rgb",
                            [](auto& rc, const std::string& v) { rc.model.recurrent.error_mode = parse_error_mode(v); });
    o.add_with<int>(cmd, "--recurrent-blocks", "update network blocks",
                    [](auto& rc, int v) { rc.model.recurrent.blocks = v; });
    o.flag(cmd, "--detach-between-steps", "truncate gradients between recurrent steps",
           [](auto& rc) { rc.model.recurrent.detach_between_steps = true; });
    o.flag(cmd, "--supervise-initial", "include the initial prediction in the loss",
           [](auto& rc) { rc.model.loss.supervise_initial = true; });
}

void add_zero_error_flag(CLI::App& cmd, Overrides& o) {
    o.flag(cmd, "--zero-error", "feed zeros in place of the rendering error",
           [](auto& rc) { rc.model.recurrent.zero_error = true; });
}

void add_train_flags(CLI::App& cmd, Overrides& o) {
    o.add(cmd, "--steps", "optimizer steps", &app::RunConfig::steps);
    o.add(cmd, "--lr", "peak learning rate", &app::RunConfig::lr);
    o.add(cmd, "--weight-decay", "decoupled weight decay", &app::RunConfig::weight_decay);
    o.add(cmd, "--warmup-fraction", "linear warmup share of the schedule", &app::RunConfig::warmup_fraction);
    o.add(cmd, "--checkpoint-every", "intermediate checkpoint period (0: end only)", &app::RunConfig::checkpoint_every);
    o.add(cmd, "--log", "loss curve CSV (default: <out>.loss.csv)", &app::RunConfig::log_path);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App cli{"Feed-forward Gaussian splatting with recurrent refinement"};
    cli.require_subcommand(1);
    cli.fallthrough();
    Overrides o;
    std::string config_path;
    cli.add_option("--config", config_path, "JSON config file (flags take precedence)")->check(CLI::ExistingFile);
    o.add(cli, "--seed", "random seed", &app::RunConfig::seed);
    o.add(cli, "--threads", "worker threads (default: all cores)", &app::RunConfig::threads);
    o.flag(cli, "--quiet", "suppress progress output", [](auto& rc) { rc.quiet = true; });

    std::string out, data, init, ckpt, scene, cameras, source;
    std::vector<std::string> scenes;

    auto* gen = cli.add_subcommand("gen-data", "write synthetic scene directories");
    gen->add_option("--out", out, "output directory")->required();
    o.add(*gen, "--count", "number of scenes", &app::RunConfig::count);
    o.add_with<int>(*gen, "--width", "image width", [](auto& rc, int v) { rc.synth.width = v; });
    o.add_with<int>(*gen, "--height", "image height", [](auto& rc, int v) { rc.synth.height = v; });
    o.add_with<int>(*gen, "--inputs", "input views per scene", [](auto& rc, int v) { rc.synth.inputs = v; });
    o.add_with<int>(*gen, "--targets", "target views per scene", [](auto& rc, int v) { rc.synth.targets = v; });

    auto* ti = cli.add_subcommand("train-init", "stage 1: train the initial reconstructor");
    ti->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ti->add_option("--out", out, "output checkpoint")->required();
    add_model_flags(*ti, o);
    add_train_flags(*ti, o);

    auto* tr = cli.add_subcommand("train-recurrent", "stage 2: train the recurrent refiner");
    tr->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--init", init, "stage-1 checkpoint")->required()->check(CLI::ExistingFile);
    tr->add_option("--out", out, "output checkpoint")->required();
    o.add_with<int>(*tr, "--iterations", "maximum unroll length", [](auto& rc, int v) {
        rc.model.recurrent.max_iterations = v;
    });
    add_model_flags(*tr, o);
    add_recurrent_flags(*tr, o);
    add_zero_error_flag(*tr, o);
    add_train_flags(*tr, o);

    auto* inf = cli.add_subcommand("infer", "reconstruct one scene and write every iterate");
    inf->add_option("--scene", scene, "scene directory")->required()->check(CLI::ExistingDirectory);
    inf->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    inf->add_option("--out", out, "output directory")->required();
    o.add(*inf, "--iterations", "recurrent iterations T", &app::RunConfig::iterations);
    add_zero_error_flag(*inf, o);

    auto* ev = cli.add_subcommand("eval", "per-scene, per-iteration metrics CSV");
    ev->add_option("--scenes", scenes, "scene or dataset directories")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--ckpt", ckpt, "checkpoint")->check(CLI::ExistingFile);
    ev->add_option("--out", out, "output CSV")->required();
    o.add(*ev, "--iterations", "recurrent iterations T", &app::RunConfig::iterations);
    o.flag(*ev, "--oracle-gaussians", "evaluate the ground-truth Gaussians instead of a model",
           [](auto& rc) { rc.oracle_gaussians = true; });
    add_zero_error_flag(*ev, o);

    auto* rd = cli.add_subcommand("render", "render a PLY or checkpoint at the cameras of a cameras.json");
    rd->add_option("source", source, "PLY file or checkpoint")->required()->check(CLI::ExistingFile);
    rd->add_option("cameras", cameras, "cameras.json")->required()->check(CLI::ExistingFile);
    rd->add_option("out", out, "output directory")->required();
    o.add(*rd, "--iterations", "recurrent iterations for a checkpoint", &app::RunConfig::iterations);

    CLI11_PARSE(cli, argc, argv);

    try {
        app::RunConfig rc;
        if (!config_path.empty()) app::apply_config_file(rc, config_path);
        for (const auto& f : o.apply) f(rc);
        app::apply_threads(rc);
        if (*gen) {
            app::gen_data(rc, out);
        } else if (*ti) {
            app::train_init(rc, data, out);
        } else if (*tr) {
            app::train_recurrent(rc, data, init, out);
        } else if (*inf) {
            app::infer(rc, scene, ckpt, out);
        } else if (*ev) {
            require(rc.oracle_gaussians || !ckpt.empty(), "eval: --ckpt is required unless --oracle-gaussians is set");
            std::vector<fs::path> roots(scenes.begin(), scenes.end());
            app::eval(rc, roots, ckpt, out);
        } else if (*rd) {
            app::render_views(rc, source, cameras, out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
