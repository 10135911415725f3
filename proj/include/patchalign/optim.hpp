#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchalign/tensor.hpp"

namespace patchalign {

enum class OptimizerKind { sgd_momentum, adam };

/**
 * Auxiliary buffers and hyperparameters of one optimizer. `first` holds the
 * momentum buffer (SGD) or first-moment estimate (Adam); `second` is only
 * used by Adam. Buffers are laid out parameter by parameter in the order
 * the parameters are passed to the update.
 */
template <typename T>
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::sgd_momentum;
    double base_lr = 0.0;
    double momentum = 0.9;  // SGD momentum, or Adam beta1
    double beta2 = 0.99;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t step = 0;
    std::vector<std::vector<T>> first;
    std::vector<std::vector<T>> second;

    static OptimizerState sgd(double base_lr, double momentum, double weight_decay) {
        OptimizerState s;
        s.kind = OptimizerKind::sgd_momentum;
        s.base_lr = base_lr;
        s.momentum = momentum;
        s.weight_decay = weight_decay;
        return s;
    }

    static OptimizerState adam(double base_lr, double beta1, double beta2, double epsilon = 1e-8) {
        OptimizerState s;
        s.kind = OptimizerKind::adam;
        s.base_lr = base_lr;
        s.momentum = beta1;
        s.beta2 = beta2;
        s.epsilon = epsilon;
        return s;
    }

    bool operator==(const OptimizerState&) const = default;
};

namespace detail {

template <typename T>
void prepare_buffers(std::vector<std::vector<T>>& buffers, std::span<const Tensor<T>> params, const char* op) {
    if (buffers.empty()) {
        for (const auto& p : params) buffers.emplace_back(p.numel(), T(0));
        return;
    }
    if (buffers.size() != params.size())
        throw ShapeError(std::string(op) + ": optimizer state covers " + std::to_string(buffers.size()) +
                         " parameters, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i)
        if (buffers[i].size() != params[i].numel())
            throw ShapeError(std::string(op) + ": optimizer buffer " + std::to_string(i) +
                             " does not match its parameter shape " + to_string(params[i].shape()));
}

/// Gradient of a parameter, or nullptr when none was ever written (treated as zero).
template <typename T>
const T* grad_or_null(const Tensor<T>& p) {
    return p.has_grad() ? p.grad().data() : nullptr;
}

}  // namespace detail

/// Momentum SGD with weight decay folded into the gradient:
/// v <- mu * v + g + wd * p;  p <- p - lr * v.
template <typename T>
void sgd_update(std::span<Tensor<T>> params, OptimizerState<T>& state, T lr) {
    if (state.kind != OptimizerKind::sgd_momentum) throw std::logic_error("sgd_update: state is not sgd-momentum");
    detail::prepare_buffers(state.first, std::span<const Tensor<T>>(params), "sgd_update");
    const T mu = static_cast<T>(state.momentum);
    const T wd = static_cast<T>(state.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].mutable_data();
        const T* g = detail::grad_or_null(params[i]);
        auto& v = state.first[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            v[j] = mu * v[j] + (g ? g[j] : T(0)) + wd * p[j];
            p[j] -= lr * v[j];
        }
    }
    ++state.step;
}

/// Bias-corrected Adam.
template <typename T>
void adam_update(std::span<Tensor<T>> params, OptimizerState<T>& state, T lr) {
    if (state.kind != OptimizerKind::adam) throw std::logic_error("adam_update: state is not adam");
    detail::prepare_buffers(state.first, std::span<const Tensor<T>>(params), "adam_update");
    detail::prepare_buffers(state.second, std::span<const Tensor<T>>(params), "adam_update");
    const std::uint64_t t = state.step + 1;
    const T b1 = static_cast<T>(state.momentum);
    const T b2 = static_cast<T>(state.beta2);
    const T eps = static_cast<T>(state.epsilon);
    const T wd = static_cast<T>(state.weight_decay);
    const T correction1 = T(1) - static_cast<T>(std::pow(state.momentum, static_cast<double>(t)));
    const T correction2 = T(1) - static_cast<T>(std::pow(state.beta2, static_cast<double>(t)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].mutable_data();
        const T* g = detail::grad_or_null(params[i]);
        auto& m = state.first[i];
        auto& v = state.second[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const T gj = (g ? g[j] : T(0)) + wd * p[j];
            m[j] = b1 * m[j] + (T(1) - b1) * gj;
            v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
            const T m_hat = m[j] / correction1;
            const T v_hat = v[j] / correction2;
            p[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
    state.step = t;
}

/// base_lr * (1 - iter / max_iter)^power
inline double poly_decay_lr(double base_lr, std::uint64_t iter, std::uint64_t max_iter, double power) {
    if (max_iter == 0) throw std::invalid_argument("poly_decay_lr: max_iter must be positive");
    if (iter > max_iter)
        throw std::out_of_range("poly_decay_lr: iteration " + std::to_string(iter) + " exceeds max_iter " +
                                std::to_string(max_iter));
    return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

}  // namespace patchalign
