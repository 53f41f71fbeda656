#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fsad/params.hpp"

namespace fsad {

enum class OptimizerKind { SgdMomentum, AdamW };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::SgdMomentum ? "sgd-momentum" : "adamw"; }

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
    if (s == "sgd-momentum") return OptimizerKind::SgdMomentum;
    if (s == "adamw") return OptimizerKind::AdamW;
    fail(ErrorKind::ConfigError, "unknown optimizer '" + s + "' (expected sgd-momentum or adamw)");
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::SgdMomentum;
    double learning_rate = 1e-4;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    double eps = 1e-8;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail(ErrorKind::ConfigError, "learning rate must be finite and non-negative");
        if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::ConfigError, "momentum must lie in [0,1)");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail(ErrorKind::ConfigError, "betas must lie in [0,1)");
        if (!(weight_decay >= 0.0)) fail(ErrorKind::ConfigError, "weight decay must be non-negative");
    }
};

// v' = mu v + g;  p' = p - lr v'.  A non-zero weight decay is added to the
// gradient (coupled L2) before the momentum update.
template <typename T>
void sgd_momentum_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, const OptimizerConfig& cfg) {
    require_same_shape(param, grad, "sgd_momentum_update grad");
    require_same_shape(param, velocity, "sgd_momentum_update velocity");
    const T mu = static_cast<T>(cfg.momentum), lr = static_cast<T>(cfg.learning_rate), wd = static_cast<T>(cfg.weight_decay);
    for (std::size_t i = 0; i < param.size(); ++i) {
        T g = grad[i];
        if (wd != T(0)) g += wd * param[i];
        velocity[i] = mu * velocity[i] + g;
        param[i] -= lr * velocity[i];
    }
}

// Decoupled weight decay:
//   m' = b1 m + (1-b1) g;  v' = b2 v + (1-b2) g^2;  t' = t + 1
//   p' = p - lr (m_hat / (sqrt(v_hat) + eps) + wd p),  m_hat = m'/(1-b1^t'), v_hat = v'/(1-b2^t')
template <typename T>
void adamw_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v, std::uint64_t& step, const OptimizerConfig& cfg) {
    require_same_shape(param, grad, "adamw_update grad");
    require_same_shape(param, m, "adamw_update m");
    require_same_shape(param, v, "adamw_update v");
    ++step;
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T lr = static_cast<T>(cfg.learning_rate), wd = static_cast<T>(cfg.weight_decay), eps = static_cast<T>(cfg.eps);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(step)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(step)));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const T m_hat = m[i] / c1;
        const T v_hat = v[i] / c2;
        param[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * param[i]);
    }
}

template <typename T>
struct OptimizerState {
    std::vector<Tensor<T>> first;   // velocity (sgd) or m (adamw)
    std::vector<Tensor<T>> second;  // v (adamw only)
    std::uint64_t step = 0;

    static OptimizerState zeros_like(const ParameterSet<T>& params) {
        OptimizerState s;
        for (const auto& t : params.tensors()) {
            s.first.emplace_back(t.shape);
            s.second.emplace_back(t.shape);
        }
        return s;
    }

    bool operator==(const OptimizerState& o) const {
        if (step != o.step || first.size() != o.first.size()) return false;
        for (std::size_t i = 0; i < first.size(); ++i)
            if (first[i].data != o.first[i].data || second[i].data != o.second[i].data) return false;
        return true;
    }
};

// Applies one optimizer step to every non-frozen parameter; returns the L2 norm of the update.
template <typename T>
double apply_update(ParameterSet<T>& params, const std::vector<Tensor<T>>& grads, OptimizerState<T>& state, const OptimizerConfig& cfg) {
    if (grads.size() != params.size() || state.first.size() != params.size()) fail(ErrorKind::ShapeError, "optimizer: parameter/gradient/state counts differ");
    double sq = 0.0;
    const std::uint64_t step_before = state.step;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params.frozen(i)) continue;
        Tensor<T> before = params[i];
        if (cfg.kind == OptimizerKind::SgdMomentum) {
            sgd_momentum_update(params[i], grads[i], state.first[i], cfg);
        } else {
            std::uint64_t t = step_before;
            adamw_update(params[i], grads[i], state.first[i], state.second[i], t, cfg);
        }
        for (std::size_t j = 0; j < before.size(); ++j) {
            const double d = static_cast<double>(params[i][j]) - static_cast<double>(before[j]);
            sq += d * d;
        }
    }
    ++state.step;
    return std::sqrt(sq);
}

}  // namespace fsad
