#pragma once

// Dense row-major tensors and a single-use reverse-mode tape.
//
// A Tensor is a cheap handle onto shared storage. Values are fixed once an op
// produces them; only the gradient slot is written, and only during backward.
// Parameters are the one exception: the optimizer rewrites their values
// between tapes.

#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "resplat/core/error.hpp"

namespace resplat {

#ifdef RESPLAT_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

inline std::int64_t numel_of(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

namespace detail {
inline bool& finite_checks_flag() {
    static bool on = false;
    return on;
}
} // namespace detail

/// When enabled, every op output is scanned and a non-finite value throws.
inline void set_finite_checks(bool on) { detail::finite_checks_flag() = on; }
inline bool finite_checks() { return detail::finite_checks_flag(); }

template <class T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until a gradient reaches this node
    bool requires_grad = false;

    T* grad_data() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad.data();
    }
};

template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
    static Tensor full(Shape shape, T v) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<T>>();
        t.node_->value.assign(static_cast<std::size_t>(numel_of(shape)), v);
        t.node_->shape = std::move(shape);
        return t;
    }
    static Tensor from(Shape shape, std::vector<T> values) {
        require(numel_of(shape) == static_cast<std::int64_t>(values.size()), "tensor shape ", shape,
                " does not match ", values.size(), " values");
        Tensor t;
        t.node_ = std::make_shared<TensorNode<T>>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(values);
        return t;
    }
    static Tensor scalar(T v) { return from({1}, {v}); }

    /// A trainable leaf.
    static Tensor parameter(Shape shape, std::vector<T> values) {
        auto t = from(std::move(shape), std::move(values));
        t.node_->requires_grad = true;
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
    std::int64_t dim(std::int64_t i) const {
        if (i < 0) i += rank();
        return node_->shape.at(static_cast<std::size_t>(i));
    }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

    std::span<const T> values() const { return node_->value; }
    /// Direct write access; intended for leaves (initialization, optimizer updates).
    std::span<T> mutable_values() { return node_->value; }
    const T* data() const { return node_->value.data(); }
    T operator[](std::int64_t i) const { return node_->value[static_cast<std::size_t>(i)]; }
    T item() const {
        require(numel() == 1, "item() on tensor of shape ", shape());
        return node_->value[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    /// Fresh leaf with a copy of the values and no history.
    Tensor detach() const { return from(shape(), node_->value); }
    Tensor clone() const {
        auto t = from(shape(), node_->value);
        t.node_->requires_grad = node_->requires_grad;
        return t;
    }

    const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

/// Ordered record of backward closures. Replay runs in strict reverse order of
/// recording, which is a reverse topological order because every op records
/// after its inputs exist.
template <class T>
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape inference() { return Tape(false); }

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    void record(std::function<void()> fn) {
        require(!consumed_, "cannot record onto a tape after backward()");
        nodes_.push_back(std::move(fn));
    }

    void backward(const Tensor<T>& loss) {
        require(loss.defined() && loss.numel() == 1, "backward() needs a scalar loss, got shape ",
                loss.defined() ? loss.shape() : Shape{});
        require(!consumed_, "tape already consumed by a previous backward()");
        consumed_ = true;
        if (!loss.requires_grad()) return;
        loss.node()->grad_data()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        nodes_.clear();
    }

private:
    Tape(Tape&&) = default;
    std::vector<std::function<void()>> nodes_;
    bool recording_;
    bool consumed_ = false;
};

template <class T>
void backward(Tape<T>& tape, const Tensor<T>& loss) {
    tape.backward(loss);
}

namespace detail {

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
    if (!finite_checks()) return;
    for (T v : t.values())
        if (!std::isfinite(v)) fail("non-finite value produced by ", op);
}

/// True when the tape should record an op over these inputs.
template <class T, class... Ts>
bool needs_grad(const Tape<T>& tape, const Ts&... inputs) {
    return tape.recording() && (inputs.requires_grad() || ...);
}

} // namespace detail

} // namespace resplat
