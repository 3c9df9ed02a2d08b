#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "resplat/model/params.hpp"
#include "resplat/tensor/ops.hpp"

namespace resplat {

/// Which tokens each token attends to inside an attention block.
struct Neighborhood {
    enum class Kind { knn, global, global_unshuffle };
    Kind kind = Kind::global;
    std::vector<std::int64_t> nbr; // knn: row i attends to nbr[i*k .. i*k+k)
    std::int64_t k = 0;
    int views = 0, grid_h = 0, grid_w = 0; // global_unshuffle: token layout
    int factor = 4;                        // global_unshuffle: spatial reduction per axis

    static Neighborhood knn_graph(std::vector<std::int64_t> nbr, std::int64_t k) {
        Neighborhood n;
        n.kind = Kind::knn;
        n.nbr = std::move(nbr);
        n.k = k;
        return n;
    }
    static Neighborhood dense() { return {}; }
    static Neighborhood unshuffled(int views, int grid_h, int grid_w, int factor = 4) {
        Neighborhood n;
        n.kind = Kind::global_unshuffle;
        n.views = views;
        n.grid_h = grid_h;
        n.grid_w = grid_w;
        n.factor = factor;
        return n;
    }
    /// Dense global attention up to `limit` tokens, pixel-unshuffled grouping above.
    static Neighborhood global_for(std::int64_t tokens, std::int64_t limit, int views, int grid_h, int grid_w) {
        return tokens <= limit ? dense() : unshuffled(views, grid_h, grid_w);
    }
};

/// Registers a pre-norm transformer block of width c under prefix.
template <class T>
void add_block_params(ModelParams<T>& p, Rng& rng, const std::string& prefix, std::int64_t c, int mlp_ratio) {
    const std::int64_t hidden = c * mlp_ratio;
    p.add(prefix + ".ln1.g", {c}, init::constant<T>(c, T(1)));
    p.add(prefix + ".ln1.b", {c}, init::zeros<T>(c));
    for (const char* name : {".q", ".k", ".v", ".o"}) {
        p.add(prefix + name + ".w", {c, c}, init::xavier<T>(rng, c, c));
        p.add(prefix + name + ".b", {c}, init::zeros<T>(c));
    }
    p.add(prefix + ".ln2.g", {c}, init::constant<T>(c, T(1)));
    p.add(prefix + ".ln2.b", {c}, init::zeros<T>(c));
    p.add(prefix + ".mlp1.w", {c, hidden}, init::xavier<T>(rng, c, hidden));
    p.add(prefix + ".mlp1.b", {hidden}, init::zeros<T>(hidden));
    p.add(prefix + ".mlp2.w", {hidden, c}, init::xavier<T>(rng, hidden, c));
    p.add(prefix + ".mlp2.b", {c}, init::zeros<T>(c));
}

/// Zeroes the value, output and second MLP projections so the block is the identity.
template <class T>
void zero_block_residuals(ModelParams<T>& p, const std::string& prefix) {
    for (const char* name : {".v.w", ".v.b", ".o.w", ".o.b", ".mlp2.w", ".mlp2.b"})
        for (auto& v : p.at(prefix + name).mutable_values()) v = T(0);
}

namespace detail {

/// Token order for unshuffled attention: group t holds the factor x factor
/// cells of one coarse cell, padded by edge replication when the grid does
/// not divide. Returns the padded gather order and, per original token, its
/// slot in that order.
struct UnshuffleOrder {
    std::vector<std::int64_t> gather;
    std::vector<std::int64_t> slot;
    std::int64_t groups = 0;
};

inline UnshuffleOrder unshuffle_order(const Neighborhood& nb, std::int64_t tokens) {
    const std::int64_t r = nb.factor, h = nb.grid_h, w = nb.grid_w;
    require(r >= 1 && nb.views > 0 && h > 0 && w > 0, "attention: invalid unshuffle layout");
    require(nb.views * h * w == tokens, "attention: unshuffle layout ", nb.views, "x", h, "x", w, " does not match ",
            tokens, " tokens");
    const std::int64_t gh = (h + r - 1) / r, gw = (w + r - 1) / r;
    UnshuffleOrder o;
    o.groups = nb.views * gh * gw;
    o.gather.resize(static_cast<std::size_t>(o.groups * r * r));
    o.slot.assign(static_cast<std::size_t>(tokens), -1);
    for (std::int64_t v = 0; v < nb.views; ++v)
        for (std::int64_t by = 0; by < gh; ++by)
            for (std::int64_t bx = 0; bx < gw; ++bx)
                for (std::int64_t dy = 0; dy < r; ++dy)
                    for (std::int64_t dx = 0; dx < r; ++dx) {
                        const std::int64_t y = by * r + dy, x = bx * r + dx;
                        const std::int64_t src = v * h * w + std::min(y, h - 1) * w + std::min(x, w - 1);
                        const std::int64_t pos = ((v * gh + by) * gw + bx) * r * r + dy * r + dx;
                        o.gather[pos] = src;
                        if (y < h && x < w) o.slot[src] = pos;
                    }
    return o;
}

} // namespace detail

/// Multi-head attention over projected q, k, v [M, C] according to nb.
template <class T>
Tensor<T> attend(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Neighborhood& nb,
                 std::int64_t heads) {
    const std::int64_t c = q.dim(1), dh = c / heads;
    switch (nb.kind) {
    case Neighborhood::Kind::knn:
        require(nb.k > 0 && static_cast<std::int64_t>(nb.nbr.size()) == q.dim(0) * nb.k,
                "attention: neighbor table does not match ", q.dim(0), " tokens");
        return ops::knn_attention(tape, q, k, v, nb.nbr, nb.k, heads, T(1 / std::sqrt(double(dh))));
    case Neighborhood::Kind::global:
        return ops::multi_head_attention(tape, q, k, v, heads, T(1 / std::sqrt(double(dh))));
    case Neighborhood::Kind::global_unshuffle: {
        // Each head sees coarse tokens whose feature is the concatenation of the
        // head's channels over a factor x factor cell; weights are shared with
        // the dense path.
        const auto order = detail::unshuffle_order(nb, q.dim(0));
        const std::int64_t rr = static_cast<std::int64_t>(nb.factor) * nb.factor;
        const T scale = T(1 / std::sqrt(double(dh * rr)));
        std::vector<Tensor<T>> outs;
        for (std::int64_t h = 0; h < heads; ++h) {
            auto group = [&](const Tensor<T>& x) {
                auto part = ops::gather_rows(tape, ops::slice_last(tape, x, h * dh, (h + 1) * dh), order.gather);
                return ops::reshape(tape, part, {order.groups, rr * dh});
            };
            auto o = ops::softmax_attention(tape, group(q), group(k), group(v), scale);
            o = ops::reshape(tape, o, {order.groups * rr, dh});
            outs.push_back(ops::gather_rows(tape, o, order.slot));
        }
        return heads == 1 ? outs[0] : ops::concat_last(tape, outs);
    }
    }
    fail("attention: unknown neighborhood kind");
}

/// x + Wo·Attn(LN(x)), then x + MLP(LN(x)).
template <class T>
Tensor<T> attention_block(Tape<T>& tape, const ModelParams<T>& p, const std::string& prefix, const Tensor<T>& x,
                          const Neighborhood& nb, std::int64_t heads) {
    require(x.rank() == 2, "attention block: expected [M, C], got ", x.shape());
    require(heads > 0 && x.dim(1) % heads == 0, "attention block: ", heads, " heads do not divide width ", x.dim(1));
    auto h = ops::layer_norm(tape, x, p[prefix + ".ln1.g"], p[prefix + ".ln1.b"]);
    auto q = ops::linear(tape, h, p[prefix + ".q.w"], p[prefix + ".q.b"]);
    auto k = ops::linear(tape, h, p[prefix + ".k.w"], p[prefix + ".k.b"]);
    auto v = ops::linear(tape, h, p[prefix + ".v.w"], p[prefix + ".v.b"]);
    auto a = attend(tape, q, k, v, nb, heads);
    auto y = ops::add(tape, x, ops::linear(tape, a, p[prefix + ".o.w"], p[prefix + ".o.b"]));
    auto m = ops::layer_norm(tape, y, p[prefix + ".ln2.g"], p[prefix + ".ln2.b"]);
    m = ops::relu(tape, ops::linear(tape, m, p[prefix + ".mlp1.w"], p[prefix + ".mlp1.b"]));
    return ops::add(tape, y, ops::linear(tape, m, p[prefix + ".mlp2.w"], p[prefix + ".mlp2.b"]));
}

} // namespace resplat
