#pragma once
#include <cstddef>
#include <vector>

#include "rpk/net.hpp"

namespace rpk {

// ============================================================================
// SGD with momentum and weight decay
// ============================================================================

struct SgdConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;
};

template <class S>
struct SgdState {
    WeightStore<S> velocity; // lazily created, zero-initialized per entry
};

// v <- momentum*v + grad + weight_decay*w ; w <- w - lr*v
template <class S>
void sgd_step(WeightStore<S>& ws, const GradStore<S>& grads, SgdState<S>& state,
              const SgdConfig& cfg) {
    for (auto& [name, g] : grads.entries) {
        Tensor<S>& w = ws.entries.at(name);
        if (w.shape() != g.shape())
            throw ShapeError("sgd_step: gradient shape " + shape_str(g.shape()) +
                             " does not match weight " + name + " " + shape_str(w.shape()));
        if (!state.velocity.has(name)) state.velocity.set(name, Tensor<S>(w.shape()));
        Tensor<S>& v = state.velocity.entries.at(name);
        const S mu = static_cast<S>(cfg.momentum);
        const S wd = static_cast<S>(cfg.weight_decay);
        const S lr = static_cast<S>(cfg.lr);
        for (std::size_t i = 0; i < w.size(); ++i) {
            v.data()[i] = mu * v.data()[i] + g.data()[i] + wd * w.data()[i];
            w.data()[i] -= lr * v.data()[i];
        }
        ensure_finite(w, "weights " + name + " after sgd step");
    }
}

// Step-decay schedule: the base rate is multiplied by `decay` once for every
// milestone epoch at or below the current one.
inline double scheduled_lr(double base_lr, double decay,
                           const std::vector<std::size_t>& milestones, std::size_t epoch) {
    double lr = base_lr;
    for (std::size_t m : milestones)
        if (epoch >= m) lr *= decay;
    return lr;
}

} // namespace rpk
