#pragma once

#include <nlohmann/json.hpp>

#include "resplat/core/error.hpp"
#include "resplat/render/gaussians.hpp"

namespace resplat {

enum class ErrorMode { feature, rgb };
enum class DepthSource { oracle, plane_sweep };

inline const char* to_string(ErrorMode m) { return m == ErrorMode::feature ? "feature" : "rgb"; }
inline const char* to_string(DepthSource d) { return d == DepthSource::oracle ? "oracle" : "plane_sweep"; }

inline ErrorMode parse_error_mode(const std::string& s) {
    if (s == "feature") return ErrorMode::feature;
    if (s == "rgb") return ErrorMode::rgb;
    fail("unknown error mode '", s, "' (expected feature or rgb)");
}

inline DepthSource parse_depth_source(const std::string& s) {
    if (s == "oracle") return DepthSource::oracle;
    if (s == "plane_sweep") return DepthSource::plane_sweep;
    fail("unknown depth source '", s, "' (expected oracle or plane_sweep)");
}

struct InitConfig {
    int stride = 4;          // subsample stride s: 2, 4 or 8
    int gaussians_per_point = 1;
    int c1 = 64;
    int context_blocks = 6;  // alternating kNN (odd) and global (even)
    int k = 16;
    int sh_degree = 1;
    int heads = 4;
    int mlp_ratio = 2;
    int fourier_freqs = 4;
    std::int64_t global_direct_limit = 65536; // above this, global attention uses pixel unshuffle
    DepthSource depth = DepthSource::oracle;
    int sweep_candidates = 16;
    int match_width = 8;
    double offset_bound = 0.05;  // times scene radius
    double scale_init_factor = 0.5; // initial scale = factor * mean neighbor spacing
    double opacity_init_logit = 1.0;
    bool use_knn_blocks = true;
    bool use_global_blocks = true;

    int c2() const { return layout::width(sh_degree); }

    void validate() const {
        require(stride == 2 || stride == 4 || stride == 8, "init config: stride must be 2, 4 or 8, got ", stride);
        require(gaussians_per_point >= 1 && c1 > 1 && context_blocks >= 0 && k >= 1 && heads >= 1,
                "init config: extents must be positive");
        require(c1 % heads == 0, "init config: c1 = ", c1, " not divisible by ", heads, " heads");
        require(sh_degree >= 0 && sh_degree <= sh::max_degree, "init config: SH degree ", sh_degree,
                " unsupported");
    }
};

struct RecurrentConfig {
    int max_iterations = 3;
    int blocks = 4;
    int k = 16;
    int propagation_blocks = 2;
    double position_delta_bound = 0.01; // times scene radius
    ErrorMode error_mode = ErrorMode::feature;
    bool zero_error = false;
    bool detach_between_steps = false;

    void validate() const {
        require(max_iterations >= 1, "recurrent config: max iterations must be at least 1");
        require(blocks >= 0 && k >= 1 && propagation_blocks >= 0, "recurrent config: extents must be positive");
    }
};

struct LossConfig {
    double alpha = 0.01;  // depth smoothness weight
    double lambda = 0.5;  // feature-space term weight
    double gamma = 0.9;   // recurrent discount
    int target_views = 4;
    bool supervise_initial = false; // include G^0 in the recurrent loss

    void validate() const {
        require(alpha >= 0 && lambda >= 0, "loss config: weights must be non-negative");
        require(gamma > 0 && gamma <= 1, "loss config: gamma must lie in (0, 1], got ", gamma);
    }
};

struct ModelConfig {
    InitConfig init;
    RecurrentConfig recurrent;
    LossConfig loss;
};

inline void to_json(nlohmann::json& j, const InitConfig& c) {
    j = {{"stride", c.stride},
         {"gaussians_per_point", c.gaussians_per_point},
         {"c1", c.c1},
         {"context_blocks", c.context_blocks},
         {"k", c.k},
         {"sh_degree", c.sh_degree},
         {"heads", c.heads},
         {"mlp_ratio", c.mlp_ratio},
         {"fourier_freqs", c.fourier_freqs},
         {"global_direct_limit", c.global_direct_limit},
         {"depth", to_string(c.depth)},
         {"sweep_candidates", c.sweep_candidates},
         {"match_width", c.match_width},
         {"offset_bound", c.offset_bound},
         {"scale_init_factor", c.scale_init_factor},
         {"opacity_init_logit", c.opacity_init_logit},
         {"use_knn_blocks", c.use_knn_blocks},
         {"use_global_blocks", c.use_global_blocks}};
}

inline void from_json(const nlohmann::json& j, InitConfig& c) {
    c.stride = j.value("stride", c.stride);
    c.gaussians_per_point = j.value("gaussians_per_point", c.gaussians_per_point);
    c.c1 = j.value("c1", c.c1);
    c.context_blocks = j.value("context_blocks", c.context_blocks);
    c.k = j.value("k", c.k);
    c.sh_degree = j.value("sh_degree", c.sh_degree);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.fourier_freqs = j.value("fourier_freqs", c.fourier_freqs);
    c.global_direct_limit = j.value("global_direct_limit", c.global_direct_limit);
    if (j.contains("depth")) c.depth = parse_depth_source(j.at("depth").get<std::string>());
    c.sweep_candidates = j.value("sweep_candidates", c.sweep_candidates);
    c.match_width = j.value("match_width", c.match_width);
    c.offset_bound = j.value("offset_bound", c.offset_bound);
    c.scale_init_factor = j.value("scale_init_factor", c.scale_init_factor);
    c.opacity_init_logit = j.value("opacity_init_logit", c.opacity_init_logit);
    c.use_knn_blocks = j.value("use_knn_blocks", c.use_knn_blocks);
    c.use_global_blocks = j.value("use_global_blocks", c.use_global_blocks);
}

inline void to_json(nlohmann::json& j, const RecurrentConfig& c) {
    j = {{"max_iterations", c.max_iterations},
         {"blocks", c.blocks},
         {"k", c.k},
         {"propagation_blocks", c.propagation_blocks},
         {"position_delta_bound", c.position_delta_bound},
         {"error_mode", to_string(c.error_mode)},
         {"zero_error", c.zero_error},
         {"detach_between_steps", c.detach_between_steps}};
}

inline void from_json(const nlohmann::json& j, RecurrentConfig& c) {
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.blocks = j.value("blocks", c.blocks);
    c.k = j.value("k", c.k);
    c.propagation_blocks = j.value("propagation_blocks", c.propagation_blocks);
    c.position_delta_bound = j.value("position_delta_bound", c.position_delta_bound);
    if (j.contains("error_mode")) c.error_mode = parse_error_mode(j.at("error_mode").get<std::string>());
    c.zero_error = j.value("zero_error", c.zero_error);
    c.detach_between_steps = j.value("detach_between_steps", c.detach_between_steps);
}

inline void to_json(nlohmann::json& j, const LossConfig& c) {
    j = {{"alpha", c.alpha},
         {"lambda", c.lambda},
         {"gamma", c.gamma},
         {"target_views", c.target_views},
         {"supervise_initial", c.supervise_initial}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
    c.alpha = j.value("alpha", c.alpha);
    c.lambda = j.value("lambda", c.lambda);
    c.gamma = j.value("gamma", c.gamma);
    c.target_views = j.value("target_views", c.target_views);
    c.supervise_initial = j.value("supervise_initial", c.supervise_initial);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"init", c.init}, {"recurrent", c.recurrent}, {"loss", c.loss}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    if (j.contains("init")) c.init = j.at("init").get<InitConfig>();
    if (j.contains("recurrent")) c.recurrent = j.at("recurrent").get<RecurrentConfig>();
    if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
}

} // namespace resplat
