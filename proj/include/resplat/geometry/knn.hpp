#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "resplat/core/error.hpp"

namespace resplat {

namespace detail {

struct Candidate {
    double d2;
    std::int64_t idx;
    bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && idx < o.idx); }
};

template <class T>
double sq_dist(std::span<const T> pts, std::int64_t a, std::int64_t b) {
    const double dx = static_cast<double>(pts[3 * a]) - static_cast<double>(pts[3 * b]);
    const double dy = static_cast<double>(pts[3 * a + 1]) - static_cast<double>(pts[3 * b + 1]);
    const double dz = static_cast<double>(pts[3 * a + 2]) - static_cast<double>(pts[3 * b + 2]);
    return dx * dx + dy * dy + dz * dz;
}

/// Median nearest-neighbor distance over a strided sample of at most 64 points.
template <class T>
double median_nn_distance(std::span<const T> pts, std::int64_t m) {
    const std::int64_t samples = std::min<std::int64_t>(m, 64);
    const std::int64_t stride = std::max<std::int64_t>(1, m / samples);
    std::vector<double> d;
    for (std::int64_t s = 0; s < samples; ++s) {
        const std::int64_t i = s * stride;
        double best = std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < m; ++j)
            if (j != i) best = std::min(best, sq_dist(pts, i, j));
        if (std::isfinite(best)) d.push_back(std::sqrt(best));
    }
    if (d.empty()) return 0.0;
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    return d[d.size() / 2];
}

} // namespace detail

/// k nearest neighbors of every point (self included), sorted by distance with
/// ties broken by lower index. `points` holds m rows of xyz. Returns m*k indices.
/// A uniform hash grid with cell size twice the median nearest-neighbor
/// distance limits the candidates examined per query.
template <class T>
std::vector<std::int64_t> knn(std::span<const T> points, std::int64_t k) {
    require(points.size() % 3 == 0, "knn: expected xyz triples");
    const std::int64_t m = static_cast<std::int64_t>(points.size() / 3);
    require(k > 0 && m >= k, "knn: need at least k = ", k, " points, got ", m);

    double lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::numeric_limits<double>::infinity();
        hi[a] = -lo[a];
    }
    for (std::int64_t i = 0; i < m; ++i)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], static_cast<double>(points[3 * i + a]));
            hi[a] = std::max(hi[a], static_cast<double>(points[3 * i + a]));
        }
    const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], 1e-12});
    double cell = 2.0 * detail::median_nn_distance(points, m);
    if (!(cell > extent * 1e-6)) cell = extent / std::max(1.0, std::cbrt(static_cast<double>(m)));
    // Keep the grid coarse enough that per-axis cell counts stay bounded.
    cell = std::max(cell, extent / 1024.0);

    auto cell_of = [&](std::int64_t i, int a) {
        return static_cast<std::int64_t>(std::floor((static_cast<double>(points[3 * i + a]) - lo[a]) / cell));
    };
    std::int64_t dims[3];
    for (int a = 0; a < 3; ++a)
        dims[a] = static_cast<std::int64_t>(std::floor((hi[a] - lo[a]) / cell)) + 1;
    auto key = [&](std::int64_t x, std::int64_t y, std::int64_t z) { return (x * dims[1] + y) * dims[2] + z; };

    std::unordered_map<std::int64_t, std::vector<std::int64_t>> grid;
    grid.reserve(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) grid[key(cell_of(i, 0), cell_of(i, 1), cell_of(i, 2))].push_back(i);
    const std::int64_t max_ring = std::max({dims[0], dims[1], dims[2]});

    std::vector<std::int64_t> out(static_cast<std::size_t>(m * k));
    std::vector<detail::Candidate> cand;
    for (std::int64_t i = 0; i < m; ++i) {
        cand.clear();
        const std::int64_t cx = cell_of(i, 0), cy = cell_of(i, 1), cz = cell_of(i, 2);
        for (std::int64_t r = 0; r <= max_ring; ++r) {
            if ((2 * r + 1) * (2 * r + 1) * (2 * r + 1) > 8 * m) {
                // Sparse neighborhood: scanning every point is cheaper than more rings.
                cand.clear();
                for (std::int64_t j = 0; j < m; ++j) cand.push_back({detail::sq_dist(points, i, j), j});
                break;
            }
            for (std::int64_t x = cx - r; x <= cx + r; ++x) {
                if (x < 0 || x >= dims[0]) continue;
                for (std::int64_t y = cy - r; y <= cy + r; ++y) {
                    if (y < 0 || y >= dims[1]) continue;
                    const bool edge_xy = std::abs(x - cx) == r || std::abs(y - cy) == r;
                    const std::int64_t zstep = (edge_xy || r == 0) ? 1 : 2 * r; // interior visited already
                    for (std::int64_t z = cz - r; z <= cz + r; z += zstep) {
                        if (z < 0 || z >= dims[2]) continue;
                        auto it = grid.find(key(x, y, z));
                        if (it == grid.end()) continue;
                        for (std::int64_t j : it->second) cand.push_back({detail::sq_dist(points, i, j), j});
                    }
                }
            }
            if (static_cast<std::int64_t>(cand.size()) >= k) {
                std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end());
                // Unvisited points lie at least r cells away along some axis.
                const double bound = static_cast<double>(r) * cell;
                if (cand[k - 1].d2 < bound * bound) break;
            }
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (std::int64_t a = 0; a < k; ++a) out[i * k + a] = cand[a].idx;
    }
    return out;
}

} // namespace resplat
