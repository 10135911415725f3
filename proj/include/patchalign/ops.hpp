#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchalign/tensor.hpp"

namespace patchalign {

namespace detail {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         to_string(t.shape()));
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* op) {
    for (T v : t.data())
        if (!std::isfinite(v)) throw std::domain_error(std::string(op) + ": non-finite input");
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    T acc = 0;
#pragma omp simd reduction(+ : acc)
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/**
 * Direct cross-correlation of a C_in x H x W input with C_out x C_in x kh x kw
 * kernels, plus a per-channel bias. Zero padding on all four sides.
 */
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t padding = 0) {
    detail::require_rank(input, 3, "conv2d input");
    detail::require_rank(kernels, 4, "conv2d kernels");
    detail::require_rank(bias, 1, "conv2d bias");
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    if (kernels.dim(1) != cin)
        throw ShapeError("conv2d: kernels expect " + std::to_string(kernels.dim(1)) + " input channels, input has " +
                         std::to_string(cin));
    if (bias.dim(0) != cout) throw ShapeError("conv2d: bias length does not match output channels");
    const std::size_t hp = h + 2 * padding, wp = w + 2 * padding;
    if (kh > hp || kw > wp) throw ShapeError("conv2d: kernel larger than padded input");
    const std::size_t ho = (hp - kh) / stride + 1, wo = (wp - kw) / stride + 1;

    // Padded copy of the input, kept for the weight gradient.
    auto padded = std::make_shared<std::vector<T>>(cin * hp * wp, T(0));
    {
        const T* src = input.data().data();
        for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t y = 0; y < h; ++y)
                std::copy_n(src + (c * h + y) * w, w, padded->data() + (c * hp + y + padding) * wp + padding);
    }

    std::vector<T> out(cout * ho * wo);
    const T* kdata = kernels.data().data();
    const T* pdata = padded->data();
    for (std::size_t co = 0; co < cout; ++co) {
        T* plane = out.data() + co * ho * wo;
        std::fill_n(plane, ho * wo, bias[co]);
        for (std::size_t y = 0; y < ho; ++y) {
            T* row = plane + y * wo;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const T* src_row = pdata + (ci * hp + y * stride + ky) * wp;
                    const T* krow = kdata + ((co * cin + ci) * kh + ky) * kw;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const T wv = krow[kx];
                        if (stride == 1) {
                            detail::axpy(wv, src_row + kx, row, wo);
                        } else {
                            for (std::size_t x = 0; x < wo; ++x) row[x] += wv * src_row[x * stride + kx];
                        }
                    }
                }
            }
        }
    }

    return detail::make_result<T>(
        {cout, ho, wo}, std::move(out), {&input, &kernels, &bias},
        [=](detail::Node<T>& self) {
            auto& in_node = self.inputs[0];
            auto& k_node = self.inputs[1];
            auto& b_node = self.inputs[2];
            const T* gout = self.grad.data();
            const T* pd = padded->data();
            if (b_node->requires_grad) {
                auto& gb = b_node->ensure_grad();
                for (std::size_t co = 0; co < cout; ++co) {
                    T acc = 0;
                    const T* plane = gout + co * ho * wo;
                    for (std::size_t i = 0; i < ho * wo; ++i) acc += plane[i];
                    gb[co] += acc;
                }
            }
            if (k_node->requires_grad) {
                auto& gk = k_node->ensure_grad();
                for (std::size_t co = 0; co < cout; ++co)
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t ky = 0; ky < kh; ++ky)
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                T acc = 0;
                                for (std::size_t y = 0; y < ho; ++y) {
                                    const T* grow = gout + (co * ho + y) * wo;
                                    const T* src_row = pd + (ci * hp + y * stride + ky) * wp + kx;
                                    if (stride == 1) {
                                        acc += detail::dot(grow, src_row, wo);
                                    } else {
                                        for (std::size_t x = 0; x < wo; ++x) acc += grow[x] * src_row[x * stride];
                                    }
                                }
                                gk[((co * cin + ci) * kh + ky) * kw + kx] += acc;
                            }
            }
            if (in_node->requires_grad) {
                std::vector<T> gpad(cin * hp * wp, T(0));
                const T* kd = k_node->data.data();
                for (std::size_t co = 0; co < cout; ++co)
                    for (std::size_t y = 0; y < ho; ++y) {
                        const T* grow = gout + (co * ho + y) * wo;
                        for (std::size_t ci = 0; ci < cin; ++ci)
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                T* dst_row = gpad.data() + (ci * hp + y * stride + ky) * wp;
                                const T* krow = kd + ((co * cin + ci) * kh + ky) * kw;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    if (stride == 1) {
                                        detail::axpy(krow[kx], grow, dst_row + kx, wo);
                                    } else {
                                        for (std::size_t x = 0; x < wo; ++x)
                                            dst_row[x * stride + kx] += krow[kx] * grow[x];
                                    }
                                }
                            }
                    }
                auto& gi = in_node->ensure_grad();
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t y = 0; y < h; ++y) {
                        const T* src = gpad.data() + (c * hp + y + padding) * wp + padding;
                        T* dst = gi.data() + (c * h + y) * w;
                        for (std::size_t x = 0; x < w; ++x) dst[x] += src[x];
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// pooling and cropping
// ---------------------------------------------------------------------------

/// Bin i of n over an extent of `size` covers [floor(i*size/n), floor((i+1)*size/n)).
inline std::pair<std::size_t, std::size_t> adaptive_bin(std::size_t i, std::size_t n, std::size_t size) {
    return {i * size / n, (i + 1) * size / n};
}

template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
    detail::require_rank(input, 3, "adaptive_avg_pool2d");
    if (out_h == 0 || out_w == 0) throw std::invalid_argument("adaptive_avg_pool2d: output size must be positive");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (out_h > h || out_w > w) throw ShapeError("adaptive_avg_pool2d: output larger than input");
    std::vector<T> out(c * out_h * out_w);
    const T* src = input.data().data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < out_h; ++i) {
            const auto [r0, r1] = adaptive_bin(i, out_h, h);
            for (std::size_t j = 0; j < out_w; ++j) {
                const auto [c0, c1] = adaptive_bin(j, out_w, w);
                T acc = 0;
                for (std::size_t y = r0; y < r1; ++y)
                    for (std::size_t x = c0; x < c1; ++x) acc += src[(ch * h + y) * w + x];
                out[(ch * out_h + i) * out_w + j] = acc / static_cast<T>((r1 - r0) * (c1 - c0));
            }
        }
    return detail::make_result<T>({c, out_h, out_w}, std::move(out), {&input}, [=](detail::Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < out_h; ++i) {
                const auto [r0, r1] = adaptive_bin(i, out_h, h);
                for (std::size_t j = 0; j < out_w; ++j) {
                    const auto [c0, c1] = adaptive_bin(j, out_w, w);
                    const T share =
                        self.grad[(ch * out_h + i) * out_w + j] / static_cast<T>((r1 - r0) * (c1 - c0));
                    for (std::size_t y = r0; y < r1; ++y)
                        for (std::size_t x = c0; x < c1; ++x) g[(ch * h + y) * w + x] += share;
                }
            }
    });
}

/// Top-left out_h x out_w window of every channel.
template <typename T>
Tensor<T> crop2d(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
    detail::require_rank(input, 3, "crop2d");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (out_h == 0 || out_w == 0 || out_h > h || out_w > w) throw ShapeError("crop2d: window outside input");
    if (out_h == h && out_w == w) return input;
    std::vector<T> out(c * out_h * out_w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < out_h; ++y)
            std::copy_n(input.data().data() + (ch * h + y) * w, out_w, out.data() + (ch * out_h + y) * out_w);
    return detail::make_result<T>({c, out_h, out_w}, std::move(out), {&input}, [=](detail::Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < out_h; ++y)
                for (std::size_t x = 0; x < out_w; ++x) g[(ch * h + y) * w + x] += self.grad[(ch * out_h + y) * out_w + x];
    });
}

// ---------------------------------------------------------------------------
// softmax and activations
// ---------------------------------------------------------------------------

/// Softmax over the channel axis of a C x H x W tensor, independently per site.
template <typename T>
Tensor<T> softmax_channel(const Tensor<T>& input) {
    detail::require_rank(input, 3, "softmax_channel");
    detail::require_finite(input, "softmax_channel");
    const std::size_t c = input.dim(0), sites = input.dim(1) * input.dim(2);
    std::vector<T> out(input.numel());
    const T* src = input.data().data();
    std::vector<T> peak(sites, -std::numeric_limits<T>::infinity());
    std::vector<T> norm(sites, T(0));
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t s = 0; s < sites; ++s) peak[s] = std::max(peak[s], src[k * sites + s]);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t s = 0; s < sites; ++s) {
            const T e = std::exp(src[k * sites + s] - peak[s]);
            out[k * sites + s] = e;
            norm[s] += e;
        }
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t s = 0; s < sites; ++s) out[k * sites + s] /= norm[s];

    return detail::make_result<T>(input.shape(), std::move(out), {&input}, [c, sites](detail::Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        const T* p = self.data.data();
        const T* go = self.grad.data();
        std::vector<T> inner(sites, T(0));
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t s = 0; s < sites; ++s) inner[s] += go[k * sites + s] * p[k * sites + s];
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t s = 0; s < sites; ++s) {
                const std::size_t i = k * sites + s;
                g[i] += p[i] * (go[i] - inner[s]);
            }
    });
}

struct Activation {
    enum class Kind { relu, leaky_relu, sigmoid };
    Kind kind = Kind::relu;
    double slope = 0.0;

    static Activation relu() { return {Kind::relu, 0.0}; }
    static Activation leaky_relu(double slope) {
        if (!(slope > 0.0 && slope < 1.0)) throw std::invalid_argument("leaky_relu slope must lie in (0, 1)");
        return {Kind::leaky_relu, slope};
    }
    static Activation sigmoid() { return {Kind::sigmoid, 0.0}; }
};

namespace detail {
template <typename T>
T stable_sigmoid(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}
}  // namespace detail

/// Elementwise nonlinearity. At exactly 0 the relu family uses the negative-side slope.
template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation act) {
    const T slope = static_cast<T>(act.kind == Activation::Kind::leaky_relu ? act.slope : 0.0);
    std::vector<T> out(input.numel());
    const auto src = input.data();
    switch (act.kind) {
        case Activation::Kind::relu:
        case Activation::Kind::leaky_relu:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i] > 0 ? src[i] : slope * src[i];
            break;
        case Activation::Kind::sigmoid:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_sigmoid(src[i]);
            break;
    }
    const bool is_sigmoid = act.kind == Activation::Kind::sigmoid;
    return detail::make_result<T>(input.shape(), std::move(out), {&input}, [slope, is_sigmoid](detail::Node<T>& self) {
        auto& in = self.inputs[0];
        auto& g = in->ensure_grad();
        if (is_sigmoid) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.data[i] * (T(1) - self.data[i]);
        } else {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += in->data[i] > 0 ? self.grad[i] : slope * self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return activation(x, Activation::relu());
}
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope) {
    return activation(x, Activation::leaky_relu(slope));
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return activation(x, Activation::sigmoid());
}

// ---------------------------------------------------------------------------
// per-location linear layer
// ---------------------------------------------------------------------------

/// out(:, u, v) = weight * input(:, u, v) + bias, i.e. a 1x1 convolution.
template <typename T>
Tensor<T> linear_per_location(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    detail::require_rank(input, 3, "linear_per_location input");
    detail::require_rank(weight, 2, "linear_per_location weight");
    detail::require_rank(bias, 1, "linear_per_location bias");
    const std::size_t cin = input.dim(0), sites = input.dim(1) * input.dim(2), cout = weight.dim(0);
    if (weight.dim(1) != cin)
        throw ShapeError("linear_per_location: weight has " + std::to_string(weight.dim(1)) +
                         " columns, input has " + std::to_string(cin) + " channels");
    if (bias.dim(0) != cout) throw ShapeError("linear_per_location: bias length does not match weight rows");
    std::vector<T> out(cout * sites);
    const T* x = input.data().data();
    const T* wd = weight.data().data();
    for (std::size_t o = 0; o < cout; ++o) {
        T* row = out.data() + o * sites;
        std::fill_n(row, sites, bias[o]);
        for (std::size_t i = 0; i < cin; ++i) detail::axpy(wd[o * cin + i], x + i * sites, row, sites);
    }
    return detail::make_result<T>(
        {cout, input.dim(1), input.dim(2)}, std::move(out), {&input, &weight, &bias},
        [cin, cout, sites](detail::Node<T>& self) {
            auto& in = self.inputs[0];
            auto& wn = self.inputs[1];
            auto& bn = self.inputs[2];
            const T* go = self.grad.data();
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (std::size_t o = 0; o < cout; ++o) {
                    T acc = 0;
                    for (std::size_t s = 0; s < sites; ++s) acc += go[o * sites + s];
                    gb[o] += acc;
                }
            }
            if (wn->requires_grad) {
                auto& gw = wn->ensure_grad();
                for (std::size_t o = 0; o < cout; ++o)
                    for (std::size_t i = 0; i < cin; ++i)
                        gw[o * cin + i] += detail::dot(go + o * sites, in->data.data() + i * sites, sites);
            }
            if (in->requires_grad) {
                auto& gi = in->ensure_grad();
                for (std::size_t o = 0; o < cout; ++o)
                    for (std::size_t i = 0; i < cin; ++i)
                        detail::axpy(wn->data[o * cin + i], go + o * sites, gi.data() + i * sites, sites);
            }
        });
}

// ---------------------------------------------------------------------------
// losses building blocks
// ---------------------------------------------------------------------------

/**
 * -sum over sites s with target[s] >= 0 of log(max(probs[target[s], s], 1e-12)),
 * where probs is C x H x W and `target` holds one class index per site
 * (negative entries are skipped).
 */
template <typename T>
Tensor<T> channel_nll(const Tensor<T>& probs, std::span<const std::int32_t> target) {
    detail::require_rank(probs, 3, "channel_nll");
    const std::size_t c = probs.dim(0), sites = probs.dim(1) * probs.dim(2);
    if (target.size() != sites)
        throw ShapeError("channel_nll: " + std::to_string(target.size()) + " targets for " + std::to_string(sites) +
                         " sites");
    for (std::int32_t t : target)
        if (t >= static_cast<std::int32_t>(c))
            throw std::out_of_range("channel_nll: target index " + std::to_string(t) + " >= channel count " +
                                    std::to_string(c));
    const T floor_value = static_cast<T>(kLogClamp);
    std::vector<std::int32_t> idx(target.begin(), target.end());
    double total = 0;  // a float accumulator drifts by ~1e-5 over a 64x64 map
    const T* p = probs.data().data();
    for (std::size_t s = 0; s < sites; ++s)
        if (idx[s] >= 0) total -= std::log(std::max(p[idx[s] * sites + s], floor_value));
    return detail::make_result<T>({}, {static_cast<T>(total)}, {&probs}, [idx = std::move(idx), sites, floor_value](detail::Node<T>& self) {
        auto& in = self.inputs[0];
        auto& g = in->ensure_grad();
        const T seed = self.grad[0];
        for (std::size_t s = 0; s < sites; ++s) {
            if (idx[s] < 0) continue;
            const std::size_t i = static_cast<std::size_t>(idx[s]) * sites + s;
            if (in->data[i] >= floor_value) g[i] -= seed / in->data[i];
        }
    });
}

/**
 * Quadrant means of every patch_h x patch_w grid cell. Output channel
 * q * C + c holds class c averaged over quadrant q of the cell, quadrants
 * ordered top-left, top-right, bottom-left, bottom-right and split at
 * floor(patch_h / 2), floor(patch_w / 2).
 */
template <typename T>
Tensor<T> quadrant_mean(const Tensor<T>& input, std::size_t patch_h, std::size_t patch_w) {
    detail::require_rank(input, 3, "quadrant_mean");
    if (patch_h < 2 || patch_w < 2) throw std::invalid_argument("quadrant_mean: patch must be at least 2x2");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t u_count = h / patch_h, v_count = w / patch_w;
    if (u_count == 0 || v_count == 0) throw ShapeError("quadrant_mean: patch larger than input");
    const std::size_t half_h = patch_h / 2, half_w = patch_w / 2;
    const std::size_t rows[3] = {0, half_h, patch_h};
    const std::size_t cols[3] = {0, half_w, patch_w};

    auto for_each_cell = [=](auto&& fn) {
        for (std::size_t q = 0; q < 4; ++q) {
            const std::size_t qr = q / 2, qc = q % 2;
            const T area = static_cast<T>((rows[qr + 1] - rows[qr]) * (cols[qc + 1] - cols[qc]));
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t u = 0; u < u_count; ++u)
                    for (std::size_t v = 0; v < v_count; ++v) {
                        const std::size_t out_index = ((q * c + ch) * u_count + u) * v_count + v;
                        for (std::size_t y = u * patch_h + rows[qr]; y < u * patch_h + rows[qr + 1]; ++y)
                            for (std::size_t x = v * patch_w + cols[qc]; x < v * patch_w + cols[qc + 1]; ++x)
                                fn(out_index, (ch * h + y) * w + x, area);
                    }
        }
    };

    std::vector<T> out(4 * c * u_count * v_count, T(0));
    std::vector<T> areas(out.size(), T(1));
    const T* src = input.data().data();
    for_each_cell([&](std::size_t o, std::size_t i, T area) {
        out[o] += src[i];
        areas[o] = area;
    });
    for (std::size_t o = 0; o < out.size(); ++o) out[o] /= areas[o];
    return detail::make_result<T>({4 * c, u_count, v_count}, std::move(out), {&input},
                                  [for_each_cell](detail::Node<T>& self) {
                                      auto& g = self.inputs[0]->ensure_grad();
                                      for_each_cell([&](std::size_t o, std::size_t i, T area) {
                                          g[i] += self.grad[o] / area;
                                      });
                                  });
}

}  // namespace patchalign
