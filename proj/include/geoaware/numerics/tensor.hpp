#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "geoaware/errors.hpp"

namespace geoaware::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until something accumulates into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) {
            grad.assign(value.size(), T{0});
        }
        return grad;
    }
};

/// Dense row-major tensor handle. Copies share the underlying node, so a
/// parameter fetched from a ParamStore and used twice accumulates both
/// gradient contributions into the same buffer.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<Node<T>>()) {
        for (auto extent : shape) {
            if (extent == 0) {
                throw DimensionError("tensor extents must be positive, got " + to_string(shape));
            }
        }
        if (values.size() != numel(shape)) {
            throw DimensionError("value count " + std::to_string(values.size()) +
                                 " does not match shape " + to_string(shape));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
    }

    static Tensor full(Shape shape, T fill) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, fill));
    }

    static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

    static Tensor from_node(std::shared_ptr<Node<T>> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->value.size(); }

    std::span<const T> values() const { return node_->value; }
    std::span<T> mutable_values() { return node_->value; }
    T at(std::size_t i) const { return node_->value.at(i); }

    T item() const {
        if (size() != 1) {
            throw DimensionError("item() on tensor of shape " + to_string(shape()));
        }
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T{0}); }
    void clear_grad() { node_->grad.clear(); }

    /// Reverse-mode sweep from a single-element tensor. Gradients add into
    /// whatever the leaves already hold.
    void backward() const {
        if (size() != 1) {
            throw DimensionError("backward() requires a scalar, got " + to_string(shape()));
        }
        std::vector<Node<T>*> order;
        std::unordered_set<Node<T>*> seen;
        std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node<T>* parent = node->parents[next++].get();
                if (parent->requires_grad && seen.insert(parent).second) {
                    stack.emplace_back(parent, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        node_->grad_buffer()[0] += T{1};
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<T>* node = *it;
            if (node->backward_fn && !node->grad.empty()) {
                node->backward_fn(*node);
            }
        }
    }

    /// Same values, no history, no grad.
    Tensor detach() const { return Tensor(shape(), node_->value, false); }

    /// Independent copy including the requires_grad flag (leaf).
    Tensor clone() const { return Tensor(shape(), node_->value, requires_grad()); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

template <typename T>
void ensure_finite(std::span<const T> values, const char* where) {
    for (const T v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + where);
        }
    }
}

/// Builds an op result. History is attached only when an input needs it and
/// recording is enabled.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
    ensure_finite<T>(values, op);
    Tensor<T> out(std::move(shape), std::move(values));
    if (!grad_enabled()) {
        return out;
    }
    bool needs = false;
    for (const auto& p : parents) {
        needs = needs || p->requires_grad;
    }
    if (needs) {
        out.node()->requires_grad = true;
        out.node()->parents = std::move(parents);
        out.node()->backward_fn = std::move(backward_fn);
    }
    return out;
}

} // namespace geoaware::nn
