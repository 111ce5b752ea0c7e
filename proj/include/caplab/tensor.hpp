#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "caplab/error.hpp"

namespace caplab {

template <typename T>
struct NodeT;

template <typename T>
using NodePtr = std::shared_ptr<NodeT<T>>;

// One recorded operation (or leaf) in the autodiff graph. Tensors are handles
// onto these nodes; the graph is the DAG of parent links.
template <typename T>
struct NodeT {
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized lazily, only when gradients flow here
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr<T>> parents;
    std::function<void(NodeT<T>&)> backward;  // accumulates into parents' grad

    size_t numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }

    void accumulate(const std::vector<T>& g) {
        ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
};

// Per-thread gradient-recording switch. Evaluation paths disable recording so
// forward passes do not retain graphs.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
    bool saved;
    NoGradGuard() : saved(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = saved; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
class TensorT {
  public:
    TensorT() = default;
    explicit TensorT(NodePtr<T> n) : n_(std::move(n)) {}

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static TensorT filled(std::vector<int> shape, T v, bool requires_grad = false) {
        auto n = std::make_shared<NodeT<T>>();
        size_t total = 1;
        for (int d : shape) {
            if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
            total *= size_t(d);
        }
        n->shape = std::move(shape);
        n->value.assign(total, v);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    static TensorT from(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
        size_t total = 1;
        for (int d : shape) total *= size_t(d);
        if (total != data.size())
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<NodeT<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    static TensorT scalar(T v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    const std::vector<int>& shape() const { return n_->shape; }
    int rank() const { return int(n_->shape.size()); }
    int dim(int i) const { return n_->shape[size_t(i)]; }
    size_t numel() const { return n_->value.size(); }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) {
        n_->requires_grad = rg;
        if (!rg) n_->grad.clear();
    }

    T* data() { return n_->value.data(); }
    const T* data() const { return n_->value.data(); }
    std::vector<T>& values() { return n_->value; }
    const std::vector<T>& values() const { return n_->value; }

    T& at(int i) { return n_->value[size_t(i)]; }
    T at(int i) const { return n_->value[size_t(i)]; }
    T& at(int i, int j) { return n_->value[size_t(i) * dim(1) + j]; }
    T at(int i, int j) const { return n_->value[size_t(i) * dim(1) + j]; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return n_->value[0];
    }

    std::vector<T>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    const std::vector<T>& grad_view() const { return n_->grad; }
    bool has_grad() const { return !n_->grad.empty(); }

    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    NodePtr<T> node() const { return n_; }

    // Reverse-mode pass from this (scalar) tensor. Visits each reachable node
    // exactly once in reverse topological order, summing gradients at joins.
    void backward() {
        if (numel() != 1)
            throw ShapeError("backward() requires a scalar tensor, got " + shape_str(shape()));
        std::vector<NodeT<T>*> order;
        topo_order(order);
        n_->ensure_grad();
        n_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            NodeT<T>* node = *it;
            if (node->backward && !node->grad.empty()) node->backward(*node);
        }
    }

  private:
    void topo_order(std::vector<NodeT<T>*>& order) const {
        // iterative post-order DFS over parent links
        std::unordered_set<const NodeT<T>*> visited;
        std::vector<std::pair<NodeT<T>*, size_t>> stack;
        stack.emplace_back(n_.get(), 0);
        visited.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                NodeT<T>* p = node->parents[next++].get();
                if (p && !visited.count(p)) {
                    visited.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    NodePtr<T> n_;
};

using Tensor = TensorT<float>;

}  // namespace caplab
