#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "patchalign/ops.hpp"
#include "patchalign/patchmodes.hpp"
#include "patchalign/rng.hpp"
#include "patchalign/tensor.hpp"

namespace patchalign {

/// Ordered, named parameter tensors of one network.
template <typename T>
class ParamSet {
public:
    void add(std::string name, Tensor<T> tensor) {
        for (const auto& [n, t] : entries_)
            if (n == name) throw std::invalid_argument("duplicate parameter name " + name);
        tensor.set_requires_grad(true);
        entries_.emplace_back(std::move(name), std::move(tensor));
    }

    const Tensor<T>& operator[](const std::string& name) const {
        for (const auto& [n, t] : entries_)
            if (n == name) return t;
        throw std::out_of_range("no parameter named " + name);
    }
    Tensor<T>& operator[](const std::string& name) {
        return const_cast<Tensor<T>&>(static_cast<const ParamSet&>(*this)[name]);
    }

    const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    /// Handles sharing storage with this set.
    std::vector<Tensor<T>> tensors() const {
        std::vector<Tensor<T>> out;
        for (const auto& [n, t] : entries_) out.push_back(t);
        return out;
    }

    void zero_grad() {
        for (auto& [n, t] : entries_) t.zero_grad();
    }

    /// Deep copy (fresh storage).
    ParamSet clone() const {
        ParamSet out;
        for (const auto& [n, t] : entries_) out.add(n, t.clone());
        return out;
    }

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& [n, t] : entries_) out.add(n, t.template cast<U>());
        return out;
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

template <typename T>
bool bit_equal(const ParamSet<T>& a, const ParamSet<T>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& [na, ta] = a.entries()[i];
        const auto& [nb, tb] = b.entries()[i];
        if (na != nb || ta.shape() != tb.shape()) return false;
        if (!std::equal(ta.data().begin(), ta.data().end(), tb.data().begin(),
                        [](T x, T y) { return std::memcmp(&x, &y, sizeof(T)) == 0; }))
            return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// configurations
// ---------------------------------------------------------------------------

struct ConvSpec {
    std::size_t out_channels;
    std::size_t kernel;
    std::size_t padding;
};

/// Segmentation network: stride-1 same-padded conv stack with ReLU, then a
/// 1x1 projection to C class logits and a per-pixel softmax.
struct GConfig {
    std::size_t in_channels = 1;
    std::vector<ConvSpec> hidden = {{16, 3, 1}, {32, 3, 1}};
    std::size_t num_classes = 4;

    void validate() const {
        if (in_channels == 0 || num_classes < 2) throw std::invalid_argument("G: bad channel counts");
        for (const auto& s : hidden)
            if (s.out_channels == 0 || s.kernel == 0 || s.kernel % 2 == 0 || s.padding != s.kernel / 2)
                throw std::invalid_argument("G: every hidden conv needs an odd kernel with same padding");
    }
};

/// Categorization module: pool O onto the patch grid, then two per-location
/// layers C -> hidden (leaky ReLU) -> K, softmax over K.
struct HConfig {
    std::size_t num_classes = 4;
    std::size_t hidden = 64;
    std::size_t num_clusters = 50;
    double slope = 0.2;

    void validate() const {
        if (num_classes < 1 || hidden == 0 || num_clusters == 0) throw std::invalid_argument("H: bad widths");
    }
};

/// Per-location discriminator MLP with leaky ReLU hidden layers and a
/// sigmoid on the final width-1 layer.
struct DConfig {
    std::size_t in_channels = 50;
    std::vector<std::size_t> widths = {64, 128, 1};
    double slope = 0.2;

    void validate() const {
        if (in_channels == 0 || widths.empty() || widths.back() != 1)
            throw std::invalid_argument("D: widths must be non-empty and end in 1");
        for (auto w : widths)
            if (w == 0) throw std::invalid_argument("D: zero-width layer");
    }
};

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

namespace detail {

/// Weights uniform in [-b, b] with b = sqrt(6 / fan_in); biases zero.
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, CounterRng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<T> data(numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>::from_data(std::move(shape), std::move(data));
}

inline constexpr std::uint64_t kInitG = 0;
inline constexpr std::uint64_t kInitH = 1;
inline constexpr std::uint64_t kInitD = 2;

}  // namespace detail

template <typename T>
ParamSet<T> init_g(const GConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CounterRng rng(stream_key(seed, stream_tag::kInit, detail::kInitG));
    ParamSet<T> p;
    std::size_t cin = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
        const auto& s = cfg.hidden[i];
        const std::string base = "g.conv" + std::to_string(i);
        p.add(base + ".weight",
              detail::fan_in_uniform<T>({s.out_channels, cin, s.kernel, s.kernel}, cin * s.kernel * s.kernel, rng));
        p.add(base + ".bias", Tensor<T>::zeros({s.out_channels}));
        cin = s.out_channels;
    }
    p.add("g.classifier.weight", detail::fan_in_uniform<T>({cfg.num_classes, cin, 1, 1}, cin, rng));
    p.add("g.classifier.bias", Tensor<T>::zeros({cfg.num_classes}));
    return p;
}

template <typename T>
ParamSet<T> init_h(const HConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CounterRng rng(stream_key(seed, stream_tag::kInit, detail::kInitH));
    ParamSet<T> p;
    p.add("h.fc0.weight", detail::fan_in_uniform<T>({cfg.hidden, cfg.num_classes}, cfg.num_classes, rng));
    p.add("h.fc0.bias", Tensor<T>::zeros({cfg.hidden}));
    p.add("h.fc1.weight", detail::fan_in_uniform<T>({cfg.num_clusters, cfg.hidden}, cfg.hidden, rng));
    p.add("h.fc1.bias", Tensor<T>::zeros({cfg.num_clusters}));
    return p;
}

template <typename T>
ParamSet<T> init_d(const DConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CounterRng rng(stream_key(seed, stream_tag::kInit, detail::kInitD));
    ParamSet<T> p;
    std::size_t cin = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
        const std::string base = "d.fc" + std::to_string(i);
        p.add(base + ".weight", detail::fan_in_uniform<T>({cfg.widths[i], cin}, cin, rng));
        p.add(base + ".bias", Tensor<T>::zeros({cfg.widths[i]}));
        cin = cfg.widths[i];
    }
    return p;
}

// ---------------------------------------------------------------------------
// forwards
// ---------------------------------------------------------------------------

/// Class logits, C x H x W.
template <typename T>
Tensor<T> g_logits(const Tensor<T>& image, const ParamSet<T>& p, const GConfig& cfg) {
    Tensor<T> x = image;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
        const std::string base = "g.conv" + std::to_string(i);
        x = relu(conv2d(x, p[base + ".weight"], p[base + ".bias"], 1, cfg.hidden[i].padding));
    }
    return conv2d(x, p["g.classifier.weight"], p["g.classifier.bias"], 1, 0);
}

/// O = G(I): per-pixel class distribution.
template <typename T>
Tensor<T> g_forward(const Tensor<T>& image, const ParamSet<T>& p, const GConfig& cfg) {
    return softmax_channel(g_logits(image, p, cfg));
}

/// Pre-softmax patch representation, K x U x V.
template <typename T>
Tensor<T> h_logits(const Tensor<T>& probs, const ParamSet<T>& p, const PatchGrid& grid, double slope = 0.2) {
    const auto cropped = crop2d(probs, grid.covered_height(), grid.covered_width());
    const auto pooled = adaptive_avg_pool2d(cropped, grid.rows, grid.cols);
    const auto hidden = leaky_relu(linear_per_location(pooled, p["h.fc0.weight"], p["h.fc0.bias"]), slope);
    return linear_per_location(hidden, p["h.fc1.weight"], p["h.fc1.bias"]);
}

/// F = H(O) in (0,1)^{K x U x V}.
template <typename T>
Tensor<T> h_forward(const Tensor<T>& probs, const ParamSet<T>& p, const PatchGrid& grid, double slope = 0.2) {
    return softmax_channel(h_logits(probs, p, grid, slope));
}

/// Per-location probability that the representation comes from the source, 1 x U x V.
template <typename T>
Tensor<T> d_forward(const Tensor<T>& features, const ParamSet<T>& p, double slope = 0.2) {
    const std::size_t layers = p.size() / 2;
    if (features.rank() != 3 || features.dim(0) != p["d.fc0.weight"].dim(1))
        throw ShapeError("d_forward: expected " + std::to_string(p["d.fc0.weight"].dim(1)) +
                         " input channels, got shape " + to_string(features.shape()));
    Tensor<T> x = features;
    for (std::size_t i = 0; i < layers; ++i) {
        const std::string base = "d.fc" + std::to_string(i);
        x = linear_per_location(x, p[base + ".weight"], p[base + ".bias"]);
        x = i + 1 < layers ? leaky_relu(x, slope) : sigmoid(x);
    }
    return x;
}

}  // namespace patchalign
