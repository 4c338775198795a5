#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "primer/error.hpp"
#include "primer/parameter.hpp"

namespace primer {

enum class OptimizerKind { SGD, AdamW };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::AdamW;
    double learning_rate = 1e-3;
    double weight_decay = 0.01;
    std::function<bool(std::string_view)> decay_exclusion = default_decay_exclusion;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    /// Per-kind learning rates; kinds not listed fall back to learning_rate.
    std::map<ElementKind, double> lr_by_kind;

    void validate() const {
        detail::require(learning_rate > 0.0, "OptimizerConfig: learning_rate must be positive");
        for (const auto& [kind, lr] : lr_by_kind) {
            detail::require(lr > 0.0, "OptimizerConfig: learning rate for " + std::string(to_string(kind)) +
                                          " must be positive");
        }
        detail::require(weight_decay >= 0.0 && weight_decay < 1.0, "OptimizerConfig: weight_decay must be in [0,1)");
        detail::require(adam_beta1 > 0.0 && adam_beta1 < 1.0, "OptimizerConfig: adam_beta1 must be in (0,1)");
        detail::require(adam_beta2 > 0.0 && adam_beta2 < 1.0, "OptimizerConfig: adam_beta2 must be in (0,1)");
        detail::require(adam_epsilon > 0.0, "OptimizerConfig: adam_epsilon must be positive");
    }

    double lr_for(const Parameter& p) const {
        if (p.kind) {
            if (auto it = lr_by_kind.find(*p.kind); it != lr_by_kind.end()) return it->second;
        }
        return learning_rate;
    }
};

/// v <- v - lr * grad(v). Gradients are left in place.
inline void sgd_step(std::span<const Parameter> params, double lr) {
    detail::require(lr >= 0.0, "sgd_step: negative learning rate");
    for (const auto& p : params) {
        Tensor t = p.value;
        detail::require(t.has_grad(), "sgd_step: parameter '" + p.name + "' has no gradient");
        auto data = t.data_mut();
        const auto grad = t.grad();
        for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * grad[i];
    }
}

/// SGD with a learning rate chosen per element kind (kinds absent from the map are skipped).
inline void sgd_step(std::span<const Parameter> params, const std::map<ElementKind, double>& lr_by_kind) {
    for (const auto& p : params) {
        detail::require(p.kind.has_value(), "sgd_step: parameter '" + p.name + "' has no element kind");
        auto it = lr_by_kind.find(*p.kind);
        if (it == lr_by_kind.end()) continue;
        sgd_step(std::span<const Parameter>(&p, 1), it->second);
    }
}

struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;
};

/// First/second moments and step counters keyed by parameter name.
struct AdamWState {
    std::map<std::string, AdamMoments> moments;
};

/// Decoupled-weight-decay Adam with bias correction:
///   p <- p * (1 - lr*wd)            (wd = 0 for names matching decay_exclusion)
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
inline void adamw_step(std::span<const Parameter> params, AdamWState& state, const OptimizerConfig& cfg) {
    cfg.validate();
    for (const auto& p : params) {
        Tensor t = p.value;
        detail::require(t.has_grad(), "adamw_step: parameter '" + p.name + "' has no gradient");
        auto& mom = state.moments[p.name];
        if (mom.step == 0 && mom.m.empty()) {
            mom.m.assign(t.size(), 0.0);
            mom.v.assign(t.size(), 0.0);
        }
        detail::require(mom.m.size() == t.size() && mom.v.size() == t.size(),
                        "adamw_step: optimizer state for '" + p.name + "' does not match parameter shape");
        ++mom.step;
        const double lr = cfg.lr_for(p);
        const bool excluded = cfg.decay_exclusion && cfg.decay_exclusion(p.name);
        const double decay = excluded ? 0.0 : cfg.weight_decay;
        const double b1 = cfg.adam_beta1;
        const double b2 = cfg.adam_beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(mom.step));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(mom.step));
        auto data = t.data_mut();
        const auto grad = t.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            if (decay != 0.0) data[i] *= 1.0 - lr * decay;
            mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g;
            mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g * g;
            const double m_hat = mom.m[i] / bc1;
            const double v_hat = mom.v[i] / bc2;
            data[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
        }
    }
}

inline void zero_grads(std::span<const Parameter> params) {
    for (const auto& p : params) {
        Tensor t = p.value;
        t.zero_grad();
    }
}

}  // namespace primer
