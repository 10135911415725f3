#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchalign/ops.hpp"
#include "patchalign/patchmodes.hpp"
#include "patchalign/synthdata.hpp"
#include "patchalign/tensor.hpp"

namespace patchalign {

struct LossWeights {
    double lambda_d = 0.01;
    double lambda_adv = 0.0005;

    void validate() const {
        if (!(lambda_d >= 0.0)) throw std::invalid_argument("lambda_d must be >= 0");
        if (!(lambda_adv >= 0.0)) throw std::invalid_argument("lambda_adv must be >= 0");
    }
};

struct EntropyConfig {
    double tau = 1.0;

    void validate() const {
        if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
    }
};

namespace detail {

template <typename T>
void require_probabilities(const Tensor<T>& t, const char* op) {
    for (T v : t.data())
        if (!(v >= T(0) && v <= T(1)))
            throw std::domain_error(std::string(op) + ": value outside [0, 1]");
}

}  // namespace detail

/// Supervised cross-entropy summed over non-void pixels.
template <typename T>
Tensor<T> seg_loss(const Tensor<T>& probs, const LabelMap& labels) {
    if (probs.rank() != 3 || probs.dim(1) != labels.height || probs.dim(2) != labels.width)
        throw ShapeError("seg_loss: prediction " + to_string(probs.shape()) + " does not match a " +
                         std::to_string(labels.height) + "x" + std::to_string(labels.width) + " label map");
    std::vector<std::int32_t> target(labels.values.size());
    bool any = false;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const auto v = labels.values[i];
        target[i] = v == LabelMap::kIgnore ? -1 : static_cast<std::int32_t>(v);
        any = any || v != LabelMap::kIgnore;
    }
    if (!any) throw std::invalid_argument("seg_loss: label map has no supervised pixels");
    return channel_nll(probs, std::span<const std::int32_t>(target));
}

/// Patch classification loss: -sum over valid sites of log F[gamma(u,v), u, v].
template <typename T>
Tensor<T> disc_cluster_loss(const Tensor<T>& features, const ClusterMap& gamma) {
    if (features.rank() != 3 || features.dim(1) != gamma.rows || features.dim(2) != gamma.cols)
        throw ShapeError("disc_cluster_loss: features " + to_string(features.shape()) + " do not match a " +
                         std::to_string(gamma.rows) + "x" + std::to_string(gamma.cols) + " cluster map");
    for (auto id : gamma.ids)
        if (id < 0 || static_cast<std::size_t>(id) >= features.dim(0))
            throw std::out_of_range("disc_cluster_loss: cluster id " + std::to_string(id) + " outside [0, " +
                                    std::to_string(features.dim(0)) + ")");
    const auto target = gamma.masked_ids();
    return channel_nll(features, std::span<const std::int32_t>(target));
}

/// -sum [log D_s + log(1 - D_t)]: source labeled 1, target 0.
template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& d_source, const Tensor<T>& d_target) {
    detail::require_same_shape(d_source, d_target, "discriminator_loss");
    detail::require_probabilities(d_source, "discriminator_loss");
    detail::require_probabilities(d_target, "discriminator_loss");
    const auto real = sum(log_clamped(d_source));
    const auto fake = sum(log_clamped(affine(d_target, T(-1), T(1))));
    return scale(add(real, fake), T(-1));
}

/// -sum log D_t: the target is labeled as source.
template <typename T>
Tensor<T> generator_adv_loss(const Tensor<T>& d_target) {
    detail::require_probabilities(d_target, "generator_adv_loss");
    return scale(sum(log_clamped(d_target)), T(-1));
}

/// L_s + lambda_d * L_d + lambda_adv * adv. Undefined components are skipped.
template <typename T>
Tensor<T> total_generator_loss(const Tensor<T>& seg, const Tensor<T>& disc, const Tensor<T>& adv,
                               const LossWeights& w) {
    Tensor<T> total = seg;
    if (disc.defined()) total = add(total, scale(disc, static_cast<T>(w.lambda_d)));
    if (adv.defined()) total = add(total, scale(adv, static_cast<T>(w.lambda_adv)));
    return total;
}

/// Sum over sites of the entropy of softmax(logits / tau).
template <typename T>
Tensor<T> entropy_loss(const Tensor<T>& logits, const EntropyConfig& cfg) {
    cfg.validate();
    const auto p = softmax_channel(affine(logits, static_cast<T>(1.0 / cfg.tau)));
    return scale(sum(mul(p, log_clamped(p))), T(-1));
}

/// Differentiable 2x2 spatial class histogram of every grid cell, 4C x U x V.
template <typename T>
Tensor<T> soft_histogram(const Tensor<T>& probs, const PatchGrid& grid) {
    if (probs.rank() != 3 || probs.dim(1) < grid.covered_height() || probs.dim(2) < grid.covered_width())
        throw ShapeError("soft_histogram: grid does not fit prediction " + to_string(probs.shape()));
    return quadrant_mean(crop2d(probs, grid.covered_height(), grid.covered_width()), grid.patch_h, grid.patch_w);
}

}  // namespace patchalign
