#pragma once

#include "resplat/model/recurrent.hpp"
#include "resplat/scene/synth.hpp"

namespace resplat::testing {

/// A small synthetic scene that renders in milliseconds.
inline SynthSpec tiny_spec(int inputs = 2, int width = 24, int height = 16) {
    SynthSpec s;
    s.inputs = inputs;
    s.targets = 1;
    s.width = width;
    s.height = height;
    s.wall_spacing = 0.8;
    s.objects = 1;
    s.object_gaussians = 60;
    return s;
}

/// Narrow model configuration for fast tests.
inline ModelConfig tiny_model(int c1 = 8) {
    ModelConfig c;
    c.init.c1 = c1;
    c.init.heads = 2;
    c.init.k = 4;
    c.init.context_blocks = 2;
    c.recurrent.blocks = 1;
    c.recurrent.k = 4;
    c.recurrent.propagation_blocks = 1;
    c.recurrent.error_mode = ErrorMode::rgb;
    return c;
}

/// Fills every parameter matching prefix with small random values.
template <class T>
void randomize(ModelParams<T>& p, const std::string& prefix, std::uint64_t seed, double scale = 0.1) {
    Rng rng(seed);
    for (auto& [name, t] : p.all())
        if (name.rfind(prefix, 0) == 0)
            for (auto& v : t.mutable_values()) v = static_cast<T>(rng.normal(0, scale));
}

} // namespace resplat::testing
