#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "resplat/core/rng.hpp"
#include "resplat/tensor/tensor.hpp"

namespace resplat {

/// Named trainable tensors. Names are dotted paths whose first component is the
/// owning module: init.*, depth.*, prop.*, rec.*.
template <class T>
class ModelParams {
public:
    Tensor<T>& add(const std::string& name, Shape shape, std::vector<T> values) {
        require(!params_.count(name), "parameter '", name, "' registered twice");
        auto [it, _] = params_.emplace(name, Tensor<T>::parameter(std::move(shape), std::move(values)));
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) > 0; }

    const Tensor<T>& operator[](const std::string& name) const {
        auto it = params_.find(name);
        require(it != params_.end(), "unknown parameter '", name, "'");
        return it->second;
    }
    Tensor<T>& at(const std::string& name) {
        auto it = params_.find(name);
        require(it != params_.end(), "unknown parameter '", name, "'");
        return it->second;
    }

    /// Stops gradients into every parameter whose name starts with prefix.
    void freeze(const std::string& prefix) {
        for (auto& [name, t] : params_)
            if (name.rfind(prefix, 0) == 0) t.set_requires_grad(false);
    }

    void zero_grad() {
        for (auto& [_, t] : params_) t.zero_grad();
    }

    std::map<std::string, Tensor<T>>& all() { return params_; }
    const std::map<std::string, Tensor<T>>& all() const { return params_; }

    std::int64_t count(const std::string& prefix = "") const {
        std::int64_t n = 0;
        for (const auto& [name, t] : params_)
            if (name.rfind(prefix, 0) == 0) n += t.numel();
        return n;
    }

    /// Deep copy: fresh storage, same trainable flags.
    ModelParams clone() const {
        ModelParams out;
        for (const auto& [name, t] : params_) out.params_.emplace(name, t.clone());
        return out;
    }

private:
    std::map<std::string, Tensor<T>> params_;
};

namespace init {

template <class T>
std::vector<T> zeros(std::int64_t n) {
    return std::vector<T>(static_cast<std::size_t>(n), T(0));
}

template <class T>
std::vector<T> constant(std::int64_t n, T v) {
    return std::vector<T>(static_cast<std::size_t>(n), v);
}

/// Uniform Glorot initialization for a fan_in x fan_out matrix, times gain.
template <class T>
std::vector<T> xavier(Rng& rng, std::int64_t fan_in, std::int64_t fan_out, double gain = 1.0) {
    const double a = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<T> v(static_cast<std::size_t>(fan_in * fan_out));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-a, a));
    return v;
}

/// rows x cols matrix with orthonormal columns (or rows, when rows < cols),
/// from the QR factorization of a Gaussian matrix.
template <class T>
std::vector<T> orthogonal(Rng& rng, std::int64_t rows, std::int64_t cols, double gain = 1.0) {
    const std::int64_t big = std::max(rows, cols), small = std::min(rows, cols);
    Eigen::MatrixXd a(big, small);
    for (std::int64_t j = 0; j < small; ++j)
        for (std::int64_t i = 0; i < big; ++i) a(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
    const Eigen::VectorXd d = qr.matrixQR().diagonal();
    for (std::int64_t j = 0; j < small; ++j)
        if (d[j] < 0) q.col(j) = -q.col(j);
    std::vector<T> v(static_cast<std::size_t>(rows * cols));
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j)
            v[i * cols + j] = static_cast<T>(gain * (rows >= cols ? q(i, j) : q(j, i)));
    return v;
}

} // namespace init

} // namespace resplat
