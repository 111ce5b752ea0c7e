#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "caplab/error.hpp"
#include "caplab/tensor.hpp"

namespace caplab {

// Global L2 norm over every listed gradient; grads without storage count as 0.
template <typename T>
double grad_global_norm(const std::vector<TensorT<T>>& params) {
    double acc = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (T g : p.grad_view()) acc += double(g) * double(g);
    }
    return std::sqrt(acc);
}

// Scale all gradients so the global norm is at most max_norm. Returns the
// pre-clip norm.
template <typename T>
double clip_grad_norm(std::vector<TensorT<T>>& params, double max_norm) {
    const double total = grad_global_norm(params);
    if (total > max_norm && total > 0.0) {
        const double s = max_norm / total;
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            auto* n = p.node().get();
            for (auto& g : n->grad) g = T(double(g) * s);
        }
    }
    return total;
}

// Adam with bias correction. Moment slots are keyed by parameter name so they
// can be written into and read back from checkpoints.
template <typename T>
class AdamT {
  public:
    struct Slot {
        std::vector<T> m, v;
    };

    AdamT(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    int64_t step_count() const { return step_; }
    void set_step_count(int64_t s) { step_ = s; }

    // One update over named parameters. Parameters without gradient storage
    // are treated as zero-gradient (moments still decay).
    void step(const std::vector<std::pair<std::string, TensorT<T>>>& params) {
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, double(step_));
        const double bc2 = 1.0 - std::pow(beta2_, double(step_));
        for (const auto& [name, p] : params) {
            auto& slot = slots_[name];
            const size_t n = p.numel();
            if (slot.m.empty()) {
                slot.m.assign(n, T(0));
                slot.v.assign(n, T(0));
            } else if (slot.m.size() != n) {
                throw ShapeError("adam: moment size mismatch for " + name);
            }
            auto* node = p.node().get();
            T* w = node->value.data();
            const bool has_g = !node->grad.empty();
            for (size_t i = 0; i < n; ++i) {
                const double g = has_g ? double(node->grad[i]) : 0.0;
                const double m = beta1_ * double(slot.m[i]) + (1.0 - beta1_) * g;
                const double v = beta2_ * double(slot.v[i]) + (1.0 - beta2_) * g * g;
                slot.m[i] = T(m);
                slot.v[i] = T(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                w[i] = T(double(w[i]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    bool has_slot(const std::string& name) const { return slots_.count(name) > 0; }
    const Slot& slot(const std::string& name) const {
        auto it = slots_.find(name);
        if (it == slots_.end()) throw ValueError("adam: no moment slot for " + name);
        return it->second;
    }
    void set_slot(const std::string& name, std::vector<T> m, std::vector<T> v) {
        if (m.size() != v.size()) throw ShapeError("adam: m/v size mismatch for " + name);
        slots_[name] = Slot{std::move(m), std::move(v)};
    }
    std::vector<std::string> slot_names() const {
        std::vector<std::string> out;
        out.reserve(slots_.size());
        for (const auto& [k, _] : slots_) out.push_back(k);
        return out;
    }

  private:
    double lr_, beta1_, beta2_, eps_;
    int64_t step_ = 0;
    std::unordered_map<std::string, Slot> slots_;
};

using Adam = AdamT<float>;

}  // namespace caplab
