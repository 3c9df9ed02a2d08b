#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace resplat {

/// Seeded generator used everywhere randomness is needed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(eng_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(eng_);
    }
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) { // inclusive
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(eng_);
    }
    std::uint64_t next() { return eng_(); }
    std::mt19937_64& engine() { return eng_; }

    template <class T>
    std::vector<T> normal_vector(std::size_t n, double stddev = 1.0) {
        std::vector<T> v(n);
        for (auto& x : v) x = static_cast<T>(normal(0.0, stddev));
        return v;
    }

private:
    std::mt19937_64 eng_;
};

} // namespace resplat
