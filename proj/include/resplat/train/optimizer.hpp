#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "resplat/model/params.hpp"

namespace resplat {

struct OptimConfig {
    double lr = 2e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double warmup_fraction = 0.05;
    std::int64_t total_steps = 1000;

    void validate() const {
        require(lr >= 0 && weight_decay >= 0, "optimizer: learning rate and weight decay must be non-negative");
        require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "optimizer: betas must lie in [0, 1)");
        require(warmup_fraction >= 0 && warmup_fraction < 1, "optimizer: warmup fraction must lie in [0, 1)");
        require(total_steps > 0, "optimizer: total steps must be positive");
    }
    std::int64_t warmup_steps() const { return static_cast<std::int64_t>(std::floor(warmup_fraction * total_steps)); }
};

/// lr_base · min(t / warmup, 1) · ½(1 + cos(π t_post / T_post)) for step t in [0, total].
inline double learning_rate(const OptimConfig& c, std::int64_t t) {
    const std::int64_t warm = c.warmup_steps();
    const double ramp = warm > 0 ? std::min(1.0, static_cast<double>(t) / warm) : 1.0;
    const std::int64_t post = std::max<std::int64_t>(0, t - warm), span = std::max<std::int64_t>(1, c.total_steps - warm);
    const double frac = std::min(1.0, static_cast<double>(post) / span);
    return c.lr * ramp * 0.5 * (1 + std::cos(std::numbers::pi * frac));
}

/// AdamW with decoupled weight decay over the trainable parameters matching a set of prefixes.
template <class T>
class AdamW {
public:
    AdamW(OptimConfig cfg, std::vector<std::string> prefixes) : cfg_(cfg), prefixes_(std::move(prefixes)) {
        cfg_.validate();
    }

    /// Applies one update from the accumulated gradients. Returns false and leaves every
    /// parameter untouched when any gradient is non-finite.
    bool step(ModelParams<T>& params) {
        std::vector<std::pair<const std::string*, Tensor<T>*>> active;
        for (auto& [name, t] : params.all())
            if (trainable(name, t) && t.has_grad()) active.emplace_back(&name, &t);
        for (auto [name, t] : active)
            for (T g : t->grad())
                if (!std::isfinite(static_cast<double>(g))) {
                    ++skipped_;
                    return false;
                }
        ++t_;
        const double lr = learning_rate(cfg_, t_);
        last_lr_ = lr;
        const double bc1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto [name, t] : active) {
            auto& st = state_[*name];
            const auto n = static_cast<std::size_t>(t->numel());
            if (st.m.size() != n) {
                st.m.assign(n, 0.0);
                st.v.assign(n, 0.0);
            }
            auto vals = t->mutable_values();
            const auto g = t->grad();
            for (std::size_t i = 0; i < n; ++i) {
                const double gi = g[i];
                st.m[i] = cfg_.beta1 * st.m[i] + (1 - cfg_.beta1) * gi;
                st.v[i] = cfg_.beta2 * st.v[i] + (1 - cfg_.beta2) * gi * gi;
                const double mh = st.m[i] / bc1, vh = st.v[i] / bc2;
                double x = vals[i];
                x -= lr * cfg_.weight_decay * x;
                x -= lr * mh / (std::sqrt(vh) + cfg_.eps);
                vals[i] = static_cast<T>(x);
            }
        }
        return true;
    }

    bool trainable(const std::string& name, const Tensor<T>& t) const {
        if (!t.requires_grad()) return false;
        if (prefixes_.empty()) return true;
        for (const auto& p : prefixes_)
            if (name.rfind(p, 0) == 0) return true;
        return false;
    }

    std::int64_t steps() const { return t_; }
    std::int64_t skipped() const { return skipped_; }
    double last_lr() const { return last_lr_; }
    const OptimConfig& config() const { return cfg_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    OptimConfig cfg_;
    std::vector<std::string> prefixes_;
    std::map<std::string, Moments> state_;
    std::int64_t t_ = 0;
    std::int64_t skipped_ = 0;
    double last_lr_ = 0;
};

} // namespace resplat
