#pragma once

// Differentiable primitives. Every op takes the tape first; an op only records
// a backward closure when the tape is recording and some input requires grad.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "resplat/tensor/tensor.hpp"

namespace resplat::ops {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
template <class T>
using StridedR = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CStridedR = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

using Index = std::int64_t;

namespace detail {

using resplat::detail::check_finite;
using resplat::detail::needs_grad;

template <class T>
T* grad_if(const std::shared_ptr<TensorNode<T>>& n) {
    return n->requires_grad ? n->grad_data() : nullptr;
}

template <class T>
Tensor<T> make_output(Shape shape, std::vector<T> values, bool track) {
    auto out = Tensor<T>::from(std::move(shape), std::move(values));
    if (track) out.set_requires_grad(true);
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "add: shape mismatch ", a.shape(), " vs ", b.shape());
    std::vector<T> v(a.values().begin(), a.values().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.values()[i];
    const bool track = detail::needs_grad(tape, a, b);
    auto out = detail::make_output(a.shape(), std::move(v), track);
    if (track) {
        tape.record([an = a.node(), bn = b.node(), on = out.node()] {
            if (on->grad.empty()) return;
            if (T* g = detail::grad_if(an))
                for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
            if (T* g = detail::grad_if(bn))
                for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
        });
    }
    detail::check_finite(out, "add");
    return out;
}

template <class T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "sub: shape mismatch ", a.shape(), " vs ", b.shape());
    std::vector<T> v(a.values().begin(), a.values().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= b.values()[i];
    const bool track = detail::needs_grad(tape, a, b);
    auto out = detail::make_output(a.shape(), std::move(v), track);
    if (track) {
        tape.record([an = a.node(), bn = b.node(), on = out.node()] {
            if (on->grad.empty()) return;
            if (T* g = detail::grad_if(an))
                for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
            if (T* g = detail::grad_if(bn))
                for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] -= on->grad[i];
        });
    }
    detail::check_finite(out, "sub");
    return out;
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch ", a.shape(), " vs ", b.shape());
    std::vector<T> v(a.values().begin(), a.values().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b.values()[i];
    const bool track = detail::needs_grad(tape, a, b);
    auto out = detail::make_output(a.shape(), std::move(v), track);
    if (track) {
        tape.record([an = a.node(), bn = b.node(), on = out.node()] {
            if (on->grad.empty()) return;
            if (T* g = detail::grad_if(an))
                for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i] * bn->value[i];
            if (T* g = detail::grad_if(bn))
                for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i] * an->value[i];
        });
    }
    detail::check_finite(out, "mul");
    return out;
}

/// x * s for a constant s.
template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T s) {
    std::vector<T> v(x.values().begin(), x.values().end());
    for (auto& e : v) e *= s;
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output(x.shape(), std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node(), s] {
            if (on->grad.empty()) return;
            T* g = xn->grad_data();
            for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i] * s;
        });
    }
    return out;
}

/// x + c for a constant c.
template <class T>
Tensor<T> add_scalar(Tape<T>& tape, const Tensor<T>& x, T c) {
    std::vector<T> v(x.values().begin(), x.values().end());
    for (auto& e : v) e += c;
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output(x.shape(), std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node()] {
            if (on->grad.empty()) return;
            T* g = xn->grad_data();
            for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
        });
    }
    return out;
}

/// x * s where s is a one-element tensor (e.g. a learned temperature).
template <class T>
Tensor<T> mul_scalar(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& s) {
    require(s.numel() == 1, "mul_scalar: scale must have one element, got ", s.shape());
    const T sv = s[0];
    std::vector<T> v(x.values().begin(), x.values().end());
    for (auto& e : v) e *= sv;
    const bool track = detail::needs_grad(tape, x, s);
    auto out = detail::make_output(x.shape(), std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), sn = s.node(), on = out.node()] {
            if (on->grad.empty()) return;
            const T sv = sn->value[0];
            if (T* g = detail::grad_if(xn))
                for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i] * sv;
            if (T* g = detail::grad_if(sn)) {
                T acc = 0;
                for (std::size_t i = 0; i < on->grad.size(); ++i) acc += on->grad[i] * xn->value[i];
                g[0] += acc;
            }
        });
    }
    detail::check_finite(out, "mul_scalar");
    return out;
}

/// Applies y = f(x) elementwise; dfdx(x, y) gives the local derivative.
template <class T, class F, class D>
Tensor<T> unary(Tape<T>& tape, const Tensor<T>& x, F f, D dfdx, const char* name) {
    std::vector<T> v(x.values().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(x.values()[i]);
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output(x.shape(), std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node(), dfdx] {
            if (on->grad.empty()) return;
            T* g = xn->grad_data();
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                g[i] += on->grad[i] * dfdx(xn->value[i], on->value[i]);
        });
    }
    detail::check_finite(out, name);
    return out;
}

template <class T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& x) {
    return unary(tape, x, [](T a) { return std::tanh(a); }, [](T, T y) { return T(1) - y * y; }, "tanh");
}
template <class T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
    return unary(
        tape, x, [](T a) { return T(1) / (T(1) + std::exp(-a)); }, [](T, T y) { return y * (T(1) - y); },
        "sigmoid");
}
template <class T>
Tensor<T> exp(Tape<T>& tape, const Tensor<T>& x) {
    return unary(tape, x, [](T a) { return std::exp(a); }, [](T, T y) { return y; }, "exp");
}
template <class T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
    return unary(tape, x, [](T a) { return a > T(0) ? a : T(0); }, [](T a, T) { return a > T(0) ? T(1) : T(0); },
                 "relu");
}
template <class T>
Tensor<T> abs(Tape<T>& tape, const Tensor<T>& x) {
    return unary(
        tape, x, [](T a) { return std::abs(a); },
        [](T a, T) { return a > T(0) ? T(1) : (a < T(0) ? T(-1) : T(0)); }, "abs");
}
template <class T>
Tensor<T> square(Tape<T>& tape, const Tensor<T>& x) {
    return unary(tape, x, [](T a) { return a * a; }, [](T a, T) { return T(2) * a; }, "square");
}
template <class T>
Tensor<T> reciprocal(Tape<T>& tape, const Tensor<T>& x) {
    return unary(tape, x, [](T a) { return T(1) / a; }, [](T, T y) { return -y * y; }, "reciprocal");
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.values()) acc += v;
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output<T>({1}, {acc}, track);
    if (track) {
        tape.record([xn = x.node(), on = out.node()] {
            if (on->grad.empty()) return;
            T* g = xn->grad_data();
            const T go = on->grad[0];
            for (std::size_t i = 0; i < xn->value.size(); ++i) g[i] += go;
        });
    }
    detail::check_finite(out, "sum");
    return out;
}

template <class T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
    require(x.numel() > 0, "mean of an empty tensor");
    return scale(tape, sum(tape, x), T(1) / static_cast<T>(x.numel()));
}

/// Mean over the last dimension: [..., C] -> [...].
template <class T>
Tensor<T> mean_last(Tape<T>& tape, const Tensor<T>& x) {
    const Index c = x.dim(-1), rows = x.numel() / c;
    std::vector<T> v(static_cast<std::size_t>(rows), T(0));
    for (Index r = 0; r < rows; ++r) {
        T acc = 0;
        for (Index j = 0; j < c; ++j) acc += x[r * c + j];
        v[r] = acc / static_cast<T>(c);
    }
    Shape s(x.shape().begin(), x.shape().end() - 1);
    if (s.empty()) s = {1};
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output(std::move(s), std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node(), c, rows] {
            if (on->grad.empty()) return;
            T* g = xn->grad_data();
            for (Index r = 0; r < rows; ++r) {
                const T go = on->grad[r] / static_cast<T>(c);
                for (Index j = 0; j < c; ++j) g[r * c + j] += go;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
    require(numel_of(shape) == x.numel(), "reshape: cannot view ", x.shape(), " as ", shape);
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node()] {
            if (on->grad.empty()) return;
            T* g = xn->grad_data();
            for (std::size_t i = 0; i < on->grad.size(); ++i) g[i] += on->grad[i];
        });
    }
    return out;
}

/// Concatenates along the last dimension; leading dimensions must agree.
template <class T>
Tensor<T> concat_last(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat_last: no inputs");
    const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
    const Index rows = numel_of(lead);
    std::vector<Index> widths;
    Index total = 0;
    bool track = false;
    for (const auto& p : parts) {
        require(Shape(p.shape().begin(), p.shape().end() - 1) == lead, "concat_last: leading shape mismatch ",
                p.shape(), " vs ", parts[0].shape());
        widths.push_back(p.dim(-1));
        total += p.dim(-1);
        track = track || detail::needs_grad(tape, p);
    }
    std::vector<T> v(static_cast<std::size_t>(rows * total));
    Index off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Index w = widths[k];
        for (Index r = 0; r < rows; ++r)
            std::copy_n(parts[k].data() + r * w, w, v.data() + r * total + off);
        off += w;
    }
    Shape s = lead;
    s.push_back(total);
    auto out = detail::make_output(std::move(s), std::move(v), track);
    if (track) {
        std::vector<std::shared_ptr<TensorNode<T>>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        tape.record([nodes, widths, rows, total, on = out.node()] {
            if (on->grad.empty()) return;
            Index off = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                const Index w = widths[k];
                if (T* g = detail::grad_if(nodes[k]))
                    for (Index r = 0; r < rows; ++r)
                        for (Index j = 0; j < w; ++j) g[r * w + j] += on->grad[r * total + off + j];
                off += w;
            }
        });
    }
    return out;
}

/// Columns [begin, end) of the last dimension.
template <class T>
Tensor<T> slice_last(Tape<T>& tape, const Tensor<T>& x, Index begin, Index end) {
    const Index c = x.dim(-1);
    require(0 <= begin && begin <= end && end <= c, "slice_last: range [", begin, ", ", end, ") outside width ", c);
    const Index rows = x.numel() / c, w = end - begin;
    std::vector<T> v(static_cast<std::size_t>(rows * w));
    for (Index r = 0; r < rows; ++r) std::copy_n(x.data() + r * c + begin, w, v.data() + r * w);
    Shape s = x.shape();
    s.back() = w;
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output(std::move(s), std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node(), rows, c, w, begin] {
            if (on->grad.empty()) return;
            T* g = xn->grad_data();
            for (Index r = 0; r < rows; ++r)
                for (Index j = 0; j < w; ++j) g[r * c + begin + j] += on->grad[r * w + j];
        });
    }
    return out;
}

/// out[i] = x[idx[i]] on rows of a rank-2 tensor; backward scatter-adds.
template <class T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& x, std::vector<Index> idx) {
    require(x.rank() == 2, "gather_rows: expected rank-2 input, got ", x.shape());
    const Index m = x.dim(0), c = x.dim(1);
    std::vector<T> v(idx.size() * static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && idx[i] < m, "gather_rows: index ", idx[i], " outside ", m, " rows");
        std::copy_n(x.data() + idx[i] * c, c, v.data() + i * c);
    }
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output<T>({static_cast<Index>(idx.size()), c}, std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node(), idx = std::move(idx), c] {
            if (on->grad.empty()) return;
            T* g = xn->grad_data();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (Index j = 0; j < c; ++j) g[idx[i] * c + j] += on->grad[i * c + j];
        });
    }
    return out;
}

/// Row j of x becomes rows j*r .. j*r+r-1 of the output.
template <class T>
Tensor<T> repeat_rows(Tape<T>& tape, const Tensor<T>& x, Index r) {
    if (r == 1) return x;
    std::vector<Index> idx(static_cast<std::size_t>(x.dim(0) * r));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Index>(i) / r;
    return gather_rows(tape, x, std::move(idx));
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [n, k] x [k, m] -> [n, m]
template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul: incompatible shapes ", a.shape(),
            " and ", b.shape());
    const Index n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<T> v(static_cast<std::size_t>(n * m));
    MapR<T>(v.data(), n, m).noalias() = CMapR<T>(a.data(), n, k) * CMapR<T>(b.data(), k, m);
    const bool track = detail::needs_grad(tape, a, b);
    auto out = detail::make_output<T>({n, m}, std::move(v), track);
    if (track) {
        tape.record([an = a.node(), bn = b.node(), on = out.node(), n, k, m] {
            if (on->grad.empty()) return;
            CMapR<T> go(on->grad.data(), n, m);
            if (T* g = detail::grad_if(an))
                MapR<T>(g, n, k).noalias() += go * CMapR<T>(bn->value.data(), k, m).transpose();
            if (T* g = detail::grad_if(bn))
                MapR<T>(g, k, m).noalias() += CMapR<T>(an->value.data(), n, k).transpose() * go;
        });
    }
    detail::check_finite(out, "matmul");
    return out;
}

/// Row-wise affine map x W + b over any leading shape.
template <class T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b) {
    require(W.rank() == 2 && x.rank() >= 1 && x.dim(-1) == W.dim(0), "linear: input ", x.shape(),
            " does not match weight ", W.shape());
    require(b.rank() == 1 && b.dim(0) == W.dim(1), "linear: bias ", b.shape(), " does not match weight ",
            W.shape());
    const Index cin = W.dim(0), cout = W.dim(1), rows = x.numel() / cin;
    std::vector<T> v(static_cast<std::size_t>(rows * cout));
    MapR<T> o(v.data(), rows, cout);
    o.noalias() = CMapR<T>(x.data(), rows, cin) * CMapR<T>(W.data(), cin, cout);
    o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data(), cout);
    Shape s = x.shape();
    s.back() = cout;
    const bool track = detail::needs_grad(tape, x, W, b);
    auto out = detail::make_output(std::move(s), std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), wn = W.node(), bn = b.node(), on = out.node(), rows, cin, cout] {
            if (on->grad.empty()) return;
            CMapR<T> go(on->grad.data(), rows, cout);
            if (T* g = detail::grad_if(xn))
                MapR<T>(g, rows, cin).noalias() += go * CMapR<T>(wn->value.data(), cin, cout).transpose();
            if (T* g = detail::grad_if(wn))
                MapR<T>(g, cin, cout).noalias() += CMapR<T>(xn->value.data(), rows, cin).transpose() * go;
            if (T* g = detail::grad_if(bn))
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g, cout) += go.colwise().sum();
        });
    }
    detail::check_finite(out, "linear");
    return out;
}

/// Row-wise softmax of a rank-2 tensor.
template <class T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x) {
    require(x.rank() == 2 && x.dim(1) > 0, "softmax_rows: expected non-empty rank-2 input, got ", x.shape());
    const Index n = x.dim(0), m = x.dim(1);
    std::vector<T> v(x.values().begin(), x.values().end());
    for (Index i = 0; i < n; ++i) {
        T* row = v.data() + i * m;
        const T mx = *std::max_element(row, row + m);
        T z = 0;
        for (Index j = 0; j < m; ++j) z += (row[j] = std::exp(row[j] - mx));
        for (Index j = 0; j < m; ++j) row[j] /= z;
    }
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output(x.shape(), std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node(), n, m] {
            if (on->grad.empty()) return;
            T* g = xn->grad_data();
            for (Index i = 0; i < n; ++i) {
                const T* p = on->value.data() + i * m;
                const T* go = on->grad.data() + i * m;
                T dot = 0;
                for (Index j = 0; j < m; ++j) dot += p[j] * go[j];
                for (Index j = 0; j < m; ++j) g[i * m + j] += p[j] * (go[j] - dot);
            }
        });
    }
    return out;
}

/// Multi-head scaled dot-product attention. Q [n, d], K [m, d], V [m, dv];
/// heads split d and dv evenly. Each head computes softmax(Q_h K_hᵀ scale) V_h.
template <class T>
Tensor<T> multi_head_attention(Tape<T>& tape, const Tensor<T>& Q, const Tensor<T>& K, const Tensor<T>& V,
                               Index heads, T scale) {
    require(Q.rank() == 2 && K.rank() == 2 && V.rank() == 2, "attention: expected rank-2 Q, K, V");
    require(Q.dim(1) == K.dim(1), "attention: query width ", Q.shape(), " does not match key width ", K.shape());
    require(K.dim(0) == V.dim(0), "attention: ", K.dim(0), " keys but ", V.dim(0), " values");
    require(K.dim(0) > 0, "attention: no keys");
    require(heads > 0 && Q.dim(1) % heads == 0 && V.dim(1) % heads == 0, "attention: ", heads,
            " heads do not divide widths ", Q.dim(1), " and ", V.dim(1));
    const Index n = Q.dim(0), m = K.dim(0), d = Q.dim(1), dv = V.dim(1), dh = d / heads, dvh = dv / heads;
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(heads * n * m));
    std::vector<T> v(static_cast<std::size_t>(n * dv));
    for (Index h = 0; h < heads; ++h) {
        MapR<T> P(probs->data() + h * n * m, n, m);
        P.noalias() = CStridedR<T>(Q.data() + h * dh, n, dh, Eigen::OuterStride<>(d)) *
                      CStridedR<T>(K.data() + h * dh, m, dh, Eigen::OuterStride<>(d)).transpose();
        P *= scale;
        for (Index i = 0; i < n; ++i) {
            auto row = P.row(i);
            const T mx = row.maxCoeff();
            row = (row.array() - mx).exp();
            row /= row.sum();
        }
        StridedR<T>(v.data() + h * dvh, n, dvh, Eigen::OuterStride<>(dv)).noalias() =
            P * CStridedR<T>(V.data() + h * dvh, m, dvh, Eigen::OuterStride<>(dv));
    }
    const bool track = detail::needs_grad(tape, Q, K, V);
    auto out = detail::make_output<T>({n, dv}, std::move(v), track);
    if (track) {
        tape.record([qn = Q.node(), kn = K.node(), vn = V.node(), on = out.node(), probs, heads, n, m, d, dv, dh,
                     dvh, scale] {
            if (on->grad.empty()) return;
            MatR<T> dP(n, m);
            for (Index h = 0; h < heads; ++h) {
                CMapR<T> P(probs->data() + h * n * m, n, m);
                CStridedR<T> dO(on->grad.data() + h * dvh, n, dvh, Eigen::OuterStride<>(dv));
                CStridedR<T> Vh(vn->value.data() + h * dvh, m, dvh, Eigen::OuterStride<>(dv));
                if (T* g = detail::grad_if(vn))
                    StridedR<T>(g + h * dvh, m, dvh, Eigen::OuterStride<>(dv)).noalias() += P.transpose() * dO;
                dP.noalias() = dO * Vh.transpose();
                // dS = P ∘ (dP - rowsum(P ∘ dP))
                for (Index i = 0; i < n; ++i) {
                    const T dot = (P.row(i).array() * dP.row(i).array()).sum();
                    dP.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix();
                }
                dP *= scale;
                if (T* g = detail::grad_if(qn))
                    StridedR<T>(g + h * dh, n, dh, Eigen::OuterStride<>(d)).noalias() +=
                        dP * CStridedR<T>(kn->value.data() + h * dh, m, dh, Eigen::OuterStride<>(d));
                if (T* g = detail::grad_if(kn))
                    StridedR<T>(g + h * dh, m, dh, Eigen::OuterStride<>(d)).noalias() +=
                        dP.transpose() * CStridedR<T>(qn->value.data() + h * dh, n, dh, Eigen::OuterStride<>(d));
            }
        });
    }
    detail::check_finite(out, "attention");
    return out;
}

/// Single-head attention: softmax(Q Kᵀ scale) V.
template <class T>
Tensor<T> softmax_attention(Tape<T>& tape, const Tensor<T>& Q, const Tensor<T>& K, const Tensor<T>& V, T scale) {
    return multi_head_attention(tape, Q, K, V, 1, scale);
}

/// Attention where row i of Q attends only to the rows nbr[i*k .. i*k+k) of K and V.
template <class T>
Tensor<T> knn_attention(Tape<T>& tape, const Tensor<T>& Q, const Tensor<T>& K, const Tensor<T>& V,
                        const std::vector<Index>& nbr, Index k, Index heads, T scale) {
    require(Q.rank() == 2 && K.rank() == 2 && V.rank() == 2, "knn_attention: expected rank-2 Q, K, V");
    require(Q.dim(1) == K.dim(1) && K.dim(0) == V.dim(0), "knn_attention: shape mismatch ", Q.shape(), " ",
            K.shape(), " ", V.shape());
    require(k > 0 && static_cast<Index>(nbr.size()) == Q.dim(0) * k, "knn_attention: neighbor table has ",
            nbr.size(), " entries, expected ", Q.dim(0) * k);
    require(heads > 0 && Q.dim(1) % heads == 0 && V.dim(1) % heads == 0, "knn_attention: ", heads,
            " heads do not divide widths");
    const Index n = Q.dim(0), d = Q.dim(1), dv = V.dim(1), dh = d / heads, dvh = dv / heads;
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n * heads * k));
    std::vector<T> v(static_cast<std::size_t>(n * dv), T(0));
    const T* q = Q.data();
    const T* kk = K.data();
    const T* vv = V.data();
    for (Index i = 0; i < n; ++i) {
        for (Index h = 0; h < heads; ++h) {
            T* p = probs->data() + (i * heads + h) * k;
            T mx = -std::numeric_limits<T>::infinity();
            for (Index a = 0; a < k; ++a) {
                const Index j = nbr[i * k + a];
                T s = 0;
                for (Index c = 0; c < dh; ++c) s += q[i * d + h * dh + c] * kk[j * d + h * dh + c];
                p[a] = s * scale;
                mx = std::max(mx, p[a]);
            }
            T z = 0;
            for (Index a = 0; a < k; ++a) z += (p[a] = std::exp(p[a] - mx));
            for (Index a = 0; a < k; ++a) {
                p[a] /= z;
                const Index j = nbr[i * k + a];
                for (Index c = 0; c < dvh; ++c) v[i * dv + h * dvh + c] += p[a] * vv[j * dv + h * dvh + c];
            }
        }
    }
    const bool track = detail::needs_grad(tape, Q, K, V);
    auto out = detail::make_output<T>({n, dv}, std::move(v), track);
    if (track) {
        tape.record([qn = Q.node(), kn = K.node(), vn = V.node(), on = out.node(), probs, nbr, n, k, heads, d, dv,
                     dh, dvh, scale] {
            if (on->grad.empty()) return;
            T* gq = detail::grad_if(qn);
            T* gk = detail::grad_if(kn);
            T* gv = detail::grad_if(vn);
            const T* q = qn->value.data();
            const T* kk = kn->value.data();
            const T* vv = vn->value.data();
            std::vector<T> ds(static_cast<std::size_t>(k));
            for (Index i = 0; i < n; ++i) {
                for (Index h = 0; h < heads; ++h) {
                    const T* p = probs->data() + (i * heads + h) * k;
                    const T* go = on->grad.data() + i * dv + h * dvh;
                    T dot = 0;
                    for (Index a = 0; a < k; ++a) {
                        const Index j = nbr[i * k + a];
                        T dp = 0;
                        for (Index c = 0; c < dvh; ++c) dp += go[c] * vv[j * dv + h * dvh + c];
                        ds[a] = dp;
                        dot += p[a] * dp;
                        if (gv)
                            for (Index c = 0; c < dvh; ++c) gv[j * dv + h * dvh + c] += p[a] * go[c];
                    }
                    for (Index a = 0; a < k; ++a) {
                        const T s = p[a] * (ds[a] - dot) * scale;
                        const Index j = nbr[i * k + a];
                        for (Index c = 0; c < dh; ++c) {
                            if (gq) gq[i * d + h * dh + c] += s * kk[j * d + h * dh + c];
                            if (gk) gk[j * d + h * dh + c] += s * q[i * d + h * dh + c];
                        }
                    }
                }
            }
        });
    }
    detail::check_finite(out, "knn_attention");
    return out;
}

/// Per-row normalization over the last dimension followed by gain and bias.
template <class T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
    const Index c = x.dim(-1);
    require(c > 1, "layer_norm: needs more than one channel, got ", x.shape());
    require(gain.numel() == c && bias.numel() == c, "layer_norm: gain/bias ", gain.shape(), "/", bias.shape(),
            " do not match width ", c);
    const Index rows = x.numel() / c;
    auto xhat = std::make_shared<std::vector<T>>(x.values().size());
    auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
    std::vector<T> v(x.values().size());
    for (Index r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * c;
        T mu = 0;
        for (Index j = 0; j < c; ++j) mu += xr[j];
        mu /= static_cast<T>(c);
        T var = 0;
        for (Index j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(c);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (Index j = 0; j < c; ++j) {
            const T xh = (xr[j] - mu) * rs;
            (*xhat)[r * c + j] = xh;
            v[r * c + j] = xh * gain[j] + bias[j];
        }
    }
    const bool track = detail::needs_grad(tape, x, gain, bias);
    auto out = detail::make_output(x.shape(), std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node(), xhat, rstd, rows, c] {
            if (on->grad.empty()) return;
            T* gx = detail::grad_if(xn);
            T* gg = detail::grad_if(gn);
            T* gb = detail::grad_if(bn);
            std::vector<T> dy(static_cast<std::size_t>(c));
            for (Index r = 0; r < rows; ++r) {
                const T* go = on->grad.data() + r * c;
                const T* xh = xhat->data() + r * c;
                T m1 = 0, m2 = 0;
                for (Index j = 0; j < c; ++j) {
                    dy[j] = go[j] * gn->value[j];
                    m1 += dy[j];
                    m2 += dy[j] * xh[j];
                    if (gg) gg[j] += go[j] * xh[j];
                    if (gb) gb[j] += go[j];
                }
                m1 /= static_cast<T>(c);
                m2 /= static_cast<T>(c);
                if (gx)
                    for (Index j = 0; j < c; ++j) gx[r * c + j] += (*rstd)[r] * (dy[j] - m1 - xh[j] * m2);
            }
        });
    }
    detail::check_finite(out, "layer_norm");
    return out;
}

// ---------------------------------------------------------------------------
// Spatial ops on [H, W, C] or [N, H, W, C] grids.

namespace detail {
struct Grid {
    Index n, h, w, c;
};
template <class T>
Grid grid_of(const Tensor<T>& x, const char* op) {
    if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
    fail(op, ": expected [H, W, C] or [N, H, W, C], got ", x.shape());
}
inline Shape grid_shape(bool batched, Index n, Index h, Index w, Index c) {
    return batched ? Shape{n, h, w, c} : Shape{h, w, c};
}
} // namespace detail

/// [H, W, C] -> [H/r, W/r, C r²]. Output channel (dy*r + dx)*C + c holds input
/// pixel (y*r + dy, x*r + dx) channel c.
template <class T>
Tensor<T> pixel_unshuffle(Tape<T>& tape, const Tensor<T>& x, Index r) {
    const auto g = detail::grid_of(x, "pixel_unshuffle");
    require(r > 0 && g.h % r == 0 && g.w % r == 0, "pixel_unshuffle: extents ", x.shape(),
                " not divisible by ", r);
    const Index oh = g.h / r, ow = g.w / r, oc = g.c * r * r;
    std::vector<Index> src(static_cast<std::size_t>(x.numel()));
    for (Index n = 0; n < g.n; ++n)
        for (Index y = 0; y < oh; ++y)
            for (Index xx = 0; xx < ow; ++xx)
                for (Index dy = 0; dy < r; ++dy)
                    for (Index dx = 0; dx < r; ++dx)
                        for (Index c = 0; c < g.c; ++c) {
                            const Index o = ((n * oh + y) * ow + xx) * oc + (dy * r + dx) * g.c + c;
                            src[o] = ((n * g.h + y * r + dy) * g.w + xx * r + dx) * g.c + c;
                        }
    std::vector<T> v(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) v[i] = x[src[i]];
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output(detail::grid_shape(x.rank() == 4, g.n, oh, ow, oc), std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node(), src = std::move(src)] {
            if (on->grad.empty()) return;
            T* gx = xn->grad_data();
            for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += on->grad[i];
        });
    }
    return out;
}

/// Inverse of pixel_unshuffle: [H, W, C r²] -> [H r, W r, C].
template <class T>
Tensor<T> pixel_shuffle(Tape<T>& tape, const Tensor<T>& x, Index r) {
    const auto g = detail::grid_of(x, "pixel_shuffle");
    require(r > 0 && g.c % (r * r) == 0, "pixel_shuffle: channels of ", x.shape(), " not divisible by ", r * r);
    const Index oc = g.c / (r * r), oh = g.h * r, ow = g.w * r;
    std::vector<Index> src(static_cast<std::size_t>(x.numel()));
    for (Index n = 0; n < g.n; ++n)
        for (Index y = 0; y < g.h; ++y)
            for (Index xx = 0; xx < g.w; ++xx)
                for (Index dy = 0; dy < r; ++dy)
                    for (Index dx = 0; dx < r; ++dx)
                        for (Index c = 0; c < oc; ++c) {
                            const Index o = ((n * oh + y * r + dy) * ow + xx * r + dx) * oc + c;
                            src[o] = ((n * g.h + y) * g.w + xx) * g.c + (dy * r + dx) * oc + c;
                        }
    std::vector<T> v(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) v[i] = x[src[i]];
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output(detail::grid_shape(x.rank() == 4, g.n, oh, ow, oc), std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node(), src = std::move(src)] {
            if (on->grad.empty()) return;
            T* gx = xn->grad_data();
            for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += on->grad[i];
        });
    }
    return out;
}

/// 2D convolution, NHWC input and [kh, kw, Cin, Cout] weights, zero padding.
/// Pass an undefined tensor as bias for none.
template <class T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Index stride,
                 Index pad) {
    const auto g = detail::grid_of(x, "conv2d");
    require(weight.rank() == 4 && weight.dim(2) == g.c, "conv2d: weight ", weight.shape(), " does not match input ",
            x.shape());
    const Index kh = weight.dim(0), kw = weight.dim(1), cout = weight.dim(3);
    require(stride > 0, "conv2d: stride must be positive");
    const Index oh = (g.h + 2 * pad - kh) / stride + 1, ow = (g.w + 2 * pad - kw) / stride + 1;
    require(oh > 0 && ow > 0, "conv2d: input ", x.shape(), " too small for kernel");
    const bool has_bias = bias.defined();
    if (has_bias) require(bias.numel() == cout, "conv2d: bias ", bias.shape(), " does not match ", cout, " outputs");
    const Index K = kh * kw * g.c, P = g.n * oh * ow;
    // col -> source element, -1 for padding
    auto src = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(P * K));
    for (Index n = 0; n < g.n; ++n)
        for (Index y = 0; y < oh; ++y)
            for (Index xx = 0; xx < ow; ++xx) {
                Index* row = src->data() + ((n * oh + y) * ow + xx) * K;
                for (Index ky = 0; ky < kh; ++ky)
                    for (Index kx = 0; kx < kw; ++kx) {
                        const Index iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
                        const bool inside = iy >= 0 && iy < g.h && ix >= 0 && ix < g.w;
                        for (Index c = 0; c < g.c; ++c)
                            row[(ky * kw + kx) * g.c + c] = inside ? ((n * g.h + iy) * g.w + ix) * g.c + c : -1;
                    }
            }
    auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(P * K));
    for (std::size_t i = 0; i < cols->size(); ++i) (*cols)[i] = (*src)[i] < 0 ? T(0) : x[(*src)[i]];
    std::vector<T> v(static_cast<std::size_t>(P * cout));
    MapR<T> o(v.data(), P, cout);
    o.noalias() = CMapR<T>(cols->data(), P, K) * CMapR<T>(weight.data(), K, cout);
    if (has_bias) o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data(), cout);
    const bool track = tape.recording() && (x.requires_grad() || weight.requires_grad() ||
                                            (has_bias && bias.requires_grad()));
    auto out = detail::make_output(detail::grid_shape(x.rank() == 4, g.n, oh, ow, cout), std::move(v), track);
    if (track) {
        auto bn = has_bias ? bias.node() : nullptr;
        tape.record([xn = x.node(), wn = weight.node(), bn, on = out.node(), src, cols, P, K, cout] {
            if (on->grad.empty()) return;
            CMapR<T> go(on->grad.data(), P, cout);
            if (T* g = detail::grad_if(wn)) MapR<T>(g, K, cout).noalias() += CMapR<T>(cols->data(), P, K).transpose() * go;
            if (bn)
                if (T* g = detail::grad_if(bn))
                    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g, cout) += go.colwise().sum();
            if (T* g = detail::grad_if(xn)) {
                MatR<T> dcols = go * CMapR<T>(wn->value.data(), K, cout).transpose();
                const T* dc = dcols.data();
                for (std::size_t i = 0; i < src->size(); ++i)
                    if ((*src)[i] >= 0) g[(*src)[i]] += dc[i];
            }
        });
    }
    detail::check_finite(out, "conv2d");
    return out;
}

namespace detail {
/// Half-pixel bilinear source taps for resizing `in` samples to `out`.
struct Taps {
    std::vector<Index> i0, i1;
    std::vector<double> w1;
};
inline Taps bilinear_taps(Index in, Index out) {
    Taps t;
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (Index o = 0; o < out; ++o) {
        double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in - 1));
        const Index a = static_cast<Index>(std::floor(s));
        const Index b = std::min(a + 1, in - 1);
        t.i0.push_back(a);
        t.i1.push_back(b);
        t.w1.push_back(s - static_cast<double>(a));
    }
    return t;
}
} // namespace detail

/// Bilinear resize with half-pixel centers (align_corners = false) and edge clamping.
template <class T>
Tensor<T> resize_bilinear(Tape<T>& tape, const Tensor<T>& x, Index oh, Index ow) {
    const auto g = detail::grid_of(x, "resize_bilinear");
    require(oh > 0 && ow > 0, "resize_bilinear: output extents must be positive");
    const auto ty = detail::bilinear_taps(g.h, oh), tx = detail::bilinear_taps(g.w, ow);
    std::vector<T> v(static_cast<std::size_t>(g.n * oh * ow * g.c));
    for (Index n = 0; n < g.n; ++n)
        for (Index y = 0; y < oh; ++y)
            for (Index xx = 0; xx < ow; ++xx) {
                const T wy = static_cast<T>(ty.w1[y]), wx = static_cast<T>(tx.w1[xx]);
                const T* p00 = x.data() + ((n * g.h + ty.i0[y]) * g.w + tx.i0[xx]) * g.c;
                const T* p01 = x.data() + ((n * g.h + ty.i0[y]) * g.w + tx.i1[xx]) * g.c;
                const T* p10 = x.data() + ((n * g.h + ty.i1[y]) * g.w + tx.i0[xx]) * g.c;
                const T* p11 = x.data() + ((n * g.h + ty.i1[y]) * g.w + tx.i1[xx]) * g.c;
                T* o = v.data() + ((n * oh + y) * ow + xx) * g.c;
                for (Index c = 0; c < g.c; ++c)
                    o[c] = (T(1) - wy) * ((T(1) - wx) * p00[c] + wx * p01[c]) + wy * ((T(1) - wx) * p10[c] + wx * p11[c]);
            }
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output(detail::grid_shape(x.rank() == 4, g.n, oh, ow, g.c), std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node(), g, oh, ow, ty, tx] {
            if (on->grad.empty()) return;
            T* gx = xn->grad_data();
            for (Index n = 0; n < g.n; ++n)
                for (Index y = 0; y < oh; ++y)
                    for (Index xx = 0; xx < ow; ++xx) {
                        const T wy = static_cast<T>(ty.w1[y]), wx = static_cast<T>(tx.w1[xx]);
                        const T* go = on->grad.data() + ((n * oh + y) * ow + xx) * g.c;
                        T* p00 = gx + ((n * g.h + ty.i0[y]) * g.w + tx.i0[xx]) * g.c;
                        T* p01 = gx + ((n * g.h + ty.i0[y]) * g.w + tx.i1[xx]) * g.c;
                        T* p10 = gx + ((n * g.h + ty.i1[y]) * g.w + tx.i0[xx]) * g.c;
                        T* p11 = gx + ((n * g.h + ty.i1[y]) * g.w + tx.i1[xx]) * g.c;
                        for (Index c = 0; c < g.c; ++c) {
                            p00[c] += go[c] * (T(1) - wy) * (T(1) - wx);
                            p01[c] += go[c] * (T(1) - wy) * wx;
                            p10[c] += go[c] * wy * (T(1) - wx);
                            p11[c] += go[c] * wy * wx;
                        }
                    }
        });
    }
    return out;
}

/// Bilinear samples of x [h, w, C] at array coordinates (col, row) pairs, with
/// coordinates clamped to the border. Differentiable in x only.
template <class T>
Tensor<T> grid_sample(Tape<T>& tape, const Tensor<T>& x, const std::vector<double>& coords) {
    require(x.rank() == 3, "grid_sample: expected [h, w, C], got ", x.shape());
    require(coords.size() % 2 == 0, "grid_sample: coordinates must come in (x, y) pairs");
    const Index h = x.dim(0), w = x.dim(1), c = x.dim(2), P = static_cast<Index>(coords.size() / 2);
    struct Tap {
        Index i00, i01, i10, i11;
        T w00, w01, w10, w11;
    };
    auto taps = std::make_shared<std::vector<Tap>>(static_cast<std::size_t>(P));
    std::vector<T> v(static_cast<std::size_t>(P * c));
    for (Index p = 0; p < P; ++p) {
        const double sx = std::clamp(coords[2 * p], 0.0, static_cast<double>(w - 1));
        const double sy = std::clamp(coords[2 * p + 1], 0.0, static_cast<double>(h - 1));
        const Index x0 = static_cast<Index>(std::floor(sx)), y0 = static_cast<Index>(std::floor(sy));
        const Index x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const T fx = static_cast<T>(sx - x0), fy = static_cast<T>(sy - y0);
        Tap t{(y0 * w + x0) * c, (y0 * w + x1) * c, (y1 * w + x0) * c, (y1 * w + x1) * c,
              (T(1) - fy) * (T(1) - fx), (T(1) - fy) * fx, fy * (T(1) - fx), fy * fx};
        (*taps)[p] = t;
        for (Index j = 0; j < c; ++j)
            v[p * c + j] = t.w00 * x[t.i00 + j] + t.w01 * x[t.i01 + j] + t.w10 * x[t.i10 + j] + t.w11 * x[t.i11 + j];
    }
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output<T>({P, c}, std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node(), taps, c] {
            if (on->grad.empty()) return;
            T* g = xn->grad_data();
            for (std::size_t p = 0; p < taps->size(); ++p) {
                const auto& t = (*taps)[p];
                const T* go = on->grad.data() + p * c;
                for (Index j = 0; j < c; ++j) {
                    g[t.i00 + j] += t.w00 * go[j];
                    g[t.i01 + j] += t.w01 * go[j];
                    g[t.i10 + j] += t.w10 * go[j];
                    g[t.i11 + j] += t.w11 * go[j];
                }
            }
        });
    }
    return out;
}

/// Forward differences of a [H, W] map: axis 1 gives [H, W-1] (x), axis 0 gives [H-1, W] (y).
template <class T>
Tensor<T> forward_diff(Tape<T>& tape, const Tensor<T>& x, int axis) {
    require(x.rank() == 2, "forward_diff: expected [H, W], got ", x.shape());
    require(axis == 0 || axis == 1, "forward_diff: axis must be 0 or 1");
    const Index h = x.dim(0), w = x.dim(1);
    const Index oh = axis == 0 ? h - 1 : h, ow = axis == 1 ? w - 1 : w;
    require(oh > 0 && ow > 0, "forward_diff: map ", x.shape(), " too small");
    const Index step = axis == 0 ? w : 1;
    std::vector<T> v(static_cast<std::size_t>(oh * ow));
    for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) v[y * ow + xx] = x[y * w + xx + step] - x[y * w + xx];
    const bool track = detail::needs_grad(tape, x);
    auto out = detail::make_output<T>({oh, ow}, std::move(v), track);
    if (track) {
        tape.record([xn = x.node(), on = out.node(), oh, ow, w, step] {
            if (on->grad.empty()) return;
            T* g = xn->grad_data();
            for (Index y = 0; y < oh; ++y)
                for (Index xx = 0; xx < ow; ++xx) {
                    g[y * w + xx + step] += on->grad[y * ow + xx];
                    g[y * w + xx] -= on->grad[y * ow + xx];
                }
        });
    }
    return out;
}

/// Records an op whose backward is supplied by the caller: backward_fn receives
/// the output gradient and must accumulate into the input gradient pointers
/// (null for inputs that do not require grad).
template <class T, class Fn>
Tensor<T> custom(Tape<T>& tape, const std::vector<Tensor<T>>& inputs, Shape shape, std::vector<T> values,
                 Fn backward_fn) {
    bool track = tape.recording();
    if (track) {
        track = false;
        for (const auto& t : inputs) track = track || t.requires_grad();
    }
    auto out = detail::make_output(std::move(shape), std::move(values), track);
    if (track) {
        std::vector<std::shared_ptr<TensorNode<T>>> nodes;
        for (const auto& t : inputs) nodes.push_back(t.node());
        tape.record([nodes, on = out.node(), backward_fn] {
            if (on->grad.empty()) return;
            std::vector<T*> grads;
            for (const auto& n : nodes) grads.push_back(detail::grad_if(n));
            backward_fn(std::span<const T>(on->grad), grads);
        });
    }
    return out;
}

} // namespace resplat::ops
