#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace patchalign {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename T>
class Tensor;

namespace detail {

inline thread_local bool grad_mode_enabled = true;

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient is written
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this->grad and accumulates into the inputs' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
    ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/**
 * Dense row-major array with optional reverse-mode gradient tracking.
 *
 * A Tensor is a shared handle: copies alias the same storage, the same way
 * parameters are shared between a network and its optimizer. Use clone() or
 * detach() for an independent copy.
 */
template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T(0), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        const std::size_t n = patchalign::numel(shape);
        return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        for (std::size_t d : shape)
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
        if (patchalign::numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                             to_string(shape));
        auto node = std::make_shared<detail::Node<T>>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(T value, bool requires_grad = false) { return from_data({}, {value}, requires_grad); }

    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node().shape; }
    std::size_t dim(std::size_t i) const { return node().shape.at(i); }
    std::size_t rank() const { return node().shape.size(); }
    std::size_t numel() const { return node().data.size(); }

    std::span<const T> data() const { return node().data; }
    /// Direct write access; meant for leaves (parameters, inputs).
    std::span<T> mutable_data() { return node().data; }
    T operator[](std::size_t i) const { return node().data[i]; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
        return node().data[0];
    }

    bool requires_grad() const { return node().requires_grad; }
    Tensor& set_requires_grad(bool value) {
        node().requires_grad = value;
        return *this;
    }

    bool has_grad() const { return !node().grad.empty(); }
    std::span<const T> grad() const { return node().grad; }
    std::span<T> mutable_grad() { return node().ensure_grad(); }
    void zero_grad() { std::fill(node().grad.begin(), node().grad.end(), T(0)); }
    void clear_grad() { node().grad.clear(); }

    /// Copy of the values, cut off from any graph and not tracking gradients.
    Tensor detach() const { return from_data(shape(), node().data, false); }

    /// Independent copy with the same requires_grad flag and no history.
    Tensor clone() const { return from_data(shape(), node().data, requires_grad()); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(node().data.begin(), node().data.end());
        return Tensor<U>::from_data(shape(), std::move(out), requires_grad());
    }

    detail::Node<T>& node() const {
        if (!node_) throw std::logic_error("use of an undefined Tensor");
        return *node_;
    }
    const NodePtr& node_ptr() const { return node_; }

private:
    NodePtr node_;
};

namespace detail {

template <typename T>
bool needs_graph(std::initializer_list<const Tensor<T>*> inputs) {
    if (!grad_mode_enabled) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>* t) { return t->requires_grad(); });
}

/// Wraps freshly computed values as an op output, recording `backward` when
/// any input tracks gradients.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (needs_graph<T>(inputs)) {
        node->requires_grad = true;
        for (const Tensor<T>* t : inputs) node->inputs.push_back(t->node_ptr());
        node->backward_fn = std::move(backward);
    }
    return Tensor<T>(std::move(node));
}

/// Nodes reachable from `root` through gradient-tracking edges, inputs first.
template <typename T>
std::vector<Node<T>*> topological_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace detail

/**
 * Reverse-mode sweep from a scalar loss. Gradients accumulate into every
 * reachable leaf that requires them; intermediate gradients are released
 * once propagated, so the same graph may be swept again.
 */
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    if (!loss.requires_grad()) throw std::logic_error("backward() on a loss that does not track gradients");
    auto* root = &loss.node();
    const auto order = detail::topological_order(root);
    if (root->is_leaf()) {
        root->ensure_grad()[0] += T(1);
        return;
    }
    root->grad.assign(1, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node<T>* node = *it;
        if (node->is_leaf()) continue;
        if (!node->grad.empty()) node->backward_fn(*node);
        node->grad.clear();
        node->grad.shrink_to_fit();
    }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

inline constexpr double kLogClamp = 1e-12;

namespace detail {
template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename T>
void accumulate(const std::shared_ptr<Node<T>>& input, std::size_t i, T value) {
    input->ensure_grad()[i] += value;
}
}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            auto& g = in->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
        const T sign[2] = {T(1), T(-1)};
        for (std::size_t k = 0; k < 2; ++k) {
            auto& in = self.inputs[k];
            if (!in->requires_grad) continue;
            auto& g = in->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
        auto& lhs = self.inputs[0];
        auto& rhs = self.inputs[1];
        if (lhs->requires_grad) {
            auto& g = lhs->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * rhs->data[i];
        }
        if (rhs->requires_grad) {
            auto& g = rhs->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * lhs->data[i];
        }
    });
}

/// alpha * a + beta
template <typename T>
Tensor<T> affine(const Tensor<T>& a, T alpha, T beta = T(0)) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * a[i] + beta;
    return detail::make_result<T>(a.shape(), std::move(out), {&a}, [alpha](detail::Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += alpha * self.grad[i];
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T alpha) {
    return affine(a, alpha, T(0));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    double total = 0;
    for (T v : a.data()) total += v;
    return detail::make_result<T>({}, {static_cast<T>(total)}, {&a}, [](detail::Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        const T seed = self.grad[0];
        for (T& v : g) v += seed;
    });
}

/// log(max(x, 1e-12)); the clamped region has zero gradient.
template <typename T>
Tensor<T> log_clamped(const Tensor<T>& a) {
    const T floor_value = static_cast<T>(kLogClamp);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(a[i], floor_value));
    return detail::make_result<T>(a.shape(), std::move(out), {&a}, [floor_value](detail::Node<T>& self) {
        auto& in = self.inputs[0];
        auto& g = in->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in->data[i] >= floor_value) g[i] += self.grad[i] / in->data[i];
    });
}

/// Reinterprets the shape; element order is unchanged.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    std::vector<T> out(a.data().begin(), a.data().end());
    return detail::make_result<T>(std::move(shape), std::move(out), {&a}, [](detail::Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

}  // namespace patchalign
