#pragma once

// Adversarial feature-pair training.
//
//   L_DT = L_D(f0, 0) + L_D(f1, 1)          (discriminator objective)
//   L_MT = L_M + L_D(f0, 1)                 (main-model objective)
//   theta_M <- theta_M - lr grad_M L_MT     (model_step, discriminator frozen)
//   theta_D <- theta_D - lr grad_D L_DT     (discriminator_step, features detached)
//
// Within each batch the model step always runs first.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fsad/models.hpp"
#include "fsad/optim.hpp"

namespace fsad {

inline constexpr double kBceEps = 1e-7;

// -[y ln p + (1-y) ln(1-p)], p clamped to [eps, 1-eps].
inline double bce_label(double p, int y, double eps = kBceEps) {
    if (y != 0 && y != 1) fail(ErrorKind::InvalidInput, "bce label must be 0 or 1");
    const double pc = std::min(std::max(p, eps), 1.0 - eps);
    return y == 1 ? -std::log(pc) : -std::log(1.0 - pc);
}

struct TrainerConfig {
    bool adversarial = true;
    bool symmetric_adversarial = false;  // also push D(f1) toward 0 in L_MT
    int batch_size = 8;
    int pairs_per_epoch = 128;
    int disc_steps = 1;       // discriminator steps per model step
    double grad_clip = 0.0;   // global L2 clip threshold; 0 disables
    double bce_eps = kBceEps;
    OptimizerConfig model_optimizer;
    OptimizerConfig disc_optimizer;

    int batches_per_epoch() const { return (pairs_per_epoch + batch_size - 1) / batch_size; }

    void validate() const {
        if (batch_size < 1) fail(ErrorKind::ConfigError, "batch size must be positive");
        if (pairs_per_epoch < 1) fail(ErrorKind::ConfigError, "pairs per epoch must be positive");
        if (disc_steps < 1) fail(ErrorKind::ConfigError, "discriminator steps per model step must be positive");
        if (!(grad_clip >= 0.0)) fail(ErrorKind::ConfigError, "gradient clip threshold must be non-negative");
        model_optimizer.validate();
        disc_optimizer.validate();
    }
};

template <typename T>
struct FeaturePair {
    Tensor<T> f0, f1;
};

template <typename T>
struct TrainState {
    ParameterSet<T> model;
    ParameterSet<T> disc;
    OptimizerState<T> model_opt;
    OptimizerState<T> disc_opt;
    int epoch = 0;
    Rng pair_rng;
    Rng mask_rng;
    // Instrumentation: bumped by each update, and an 'M'/'D' log in update order.
    std::uint64_t model_version = 0;
    std::uint64_t disc_version = 0;
    std::string update_log;
};

struct StepReport {
    double loss_model = 0;   // L_M
    double loss_adv = 0;     // L_D(f0, 1)
    double loss_total = 0;   // L_MT
    double loss_disc = 0;    // L_DT
    double grad_norm_model = 0;
    double grad_norm_disc = 0;
    double update_norm_model = 0;
    double update_norm_disc = 0;
};

struct EpochMetrics {
    int epoch = 0;
    int batches = 0;
    StepReport mean;
    double wall_time_s = 0;
};

template <typename T>
struct ImagePairT {
    Tensor<T> i0, i1;
};

template <typename T>
using PairSampler = std::function<ImagePairT<T>(Rng&)>;

// Numerical failure with enough context to identify the offending step.
[[noreturn]] inline void numerical_failure(const std::string& where, const StepReport& r, std::uint64_t version) {
    fail(ErrorKind::NumericalError, where + " produced a non-finite value (version " + std::to_string(version) + ", L_M=" + std::to_string(r.loss_model) +
                                        ", L_adv=" + std::to_string(r.loss_adv) + ", L_DT=" + std::to_string(r.loss_disc) + ")");
}

template <typename T>
double global_norm(const std::vector<Tensor<T>>& grads) {
    double s = 0;
    for (const auto& g : grads)
        for (T v : g.data) s += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(s);
}

template <typename T>
bool all_finite(const std::vector<Tensor<T>>& ts) {
    for (const auto& t : ts)
        if (!t.all_finite()) return false;
    return true;
}

template <typename T>
void clip_gradients(std::vector<Tensor<T>>& grads, double norm, double threshold) {
    if (threshold <= 0.0 || norm <= threshold) return;
    const T k = static_cast<T>(threshold / norm);
    for (auto& g : grads)
        for (auto& v : g.data) v *= k;
}

template <typename T>
class AdversarialTrainer {
public:
    AdversarialTrainer(const HostModel<T>& host, const Discriminator<T>& disc, TrainerConfig cfg) : host_(host), disc_(disc), cfg_(std::move(cfg)) {
        cfg_.validate();
    }

    const TrainerConfig& config() const { return cfg_; }

    TrainState<T> initial_state(Rng run_rng) const {
        TrainState<T> s;
        s.model = host_.initial_params();
        s.disc = disc_.initial_params();
        s.model_opt = OptimizerState<T>::zeros_like(s.model);
        s.disc_opt = OptimizerState<T>::zeros_like(s.disc);
        s.pair_rng = run_rng.split("pairs");
        s.mask_rng = run_rng.split("mask");
        return s;
    }

    // L_DT = L_D(f0,0) + L_D(f1,1); features enter as constants.
    ag::Var<T> discriminator_objective(const Binding<T>& dp, const FeaturePair<T>& pair) const {
        require_same_shape(pair.f0, pair.f1, "discriminator_objective");
        const T eps = static_cast<T>(cfg_.bce_eps);
        auto l0 = ag::bce(disc_.forward(dp, ag::constant(pair.f0)), 0, eps);
        auto l1 = ag::bce(disc_.forward(dp, ag::constant(pair.f1)), 1, eps);
        return ag::add(l0, l1);
    }

    // Fooling term of L_MT: L_D(f0, 1), plus L_D(f1, 0) in the symmetric variant.
    ag::Var<T> adversarial_term(const Binding<T>& dp, const ag::Var<T>& f0, const ag::Var<T>& f1) const {
        const T eps = static_cast<T>(cfg_.bce_eps);
        auto adv = ag::bce(disc_.forward(dp, f0), 1, eps);
        if (cfg_.symmetric_adversarial) adv = ag::add(adv, ag::bce(disc_.forward(dp, f1), 0, eps));
        return adv;
    }

    // L_MT = L_M + L_D(f0, 1)
    ag::Var<T> model_objective(const ag::Var<T>& loss_model, const Binding<T>& dp, const ag::Var<T>& f0) const {
        if (!std::isfinite(static_cast<double>(loss_model.item()))) fail(ErrorKind::NumericalError, "L_M is not finite");
        return ag::add(loss_model, ag::bce(disc_.forward(dp, f0), 1, static_cast<T>(cfg_.bce_eps)));
    }

    struct ModelStepResult {
        StepReport report;
        std::vector<FeaturePair<T>> pairs;
    };

    // Updates theta_M only. The discriminator participates as a constant.
    ModelStepResult model_step(TrainState<T>& s, const std::vector<ImagePairT<T>>& batch) const {
        if (batch.empty()) fail(ErrorKind::InvalidInput, "model_step: empty batch");
        Binding<T> mp(s.model, true);
        std::vector<ag::Var<T>> model_losses, adv_losses;
        ModelStepResult res;
        const Binding<T> dp(s.disc, false);
        for (const auto& sample : batch) {
            for (auto& fw : host_.forward_sample(mp, sample.i0, sample.i1, s.mask_rng)) {
                require_same_shape(fw.f0.value(), fw.f1.value(), "feature pair");
                model_losses.push_back(fw.loss);
                if (cfg_.adversarial) adv_losses.push_back(adversarial_term(dp, fw.f0, fw.f1));
                res.pairs.push_back({fw.f0.value(), fw.f1.value()});
            }
        }
        auto loss_model = ag::mean_of(model_losses);
        ag::Var<T> total = loss_model;
        StepReport& r = res.report;
        r.loss_model = loss_model.item();
        if (cfg_.adversarial) {
            auto adv = ag::mean_of(adv_losses);
            total = ag::add(loss_model, adv);
            r.loss_adv = adv.item();
        }
        r.loss_total = total.item();
        if (!std::isfinite(r.loss_total)) numerical_failure("model_step loss", r, s.model_version);
        ag::backward(total);
        auto grads = mp.grads();
        r.grad_norm_model = global_norm(grads);
        if (!std::isfinite(r.grad_norm_model)) numerical_failure("model_step gradient", r, s.model_version);
        clip_gradients(grads, r.grad_norm_model, cfg_.grad_clip);
        r.update_norm_model = apply_update(s.model, grads, s.model_opt, cfg_.model_optimizer);
        ++s.model_version;
        s.update_log.push_back('M');
        return res;
    }

    // Updates theta_D only, on features detached from the main model.
    StepReport discriminator_step(TrainState<T>& s, const std::vector<FeaturePair<T>>& pairs) const {
        if (pairs.empty()) fail(ErrorKind::InvalidInput, "discriminator_step: no feature pairs");
        Binding<T> dp(s.disc, true);
        std::vector<ag::Var<T>> losses;
        for (const auto& pr : pairs) losses.push_back(discriminator_objective(dp, pr));
        auto loss = ag::mean_of(losses);
        StepReport r;
        r.loss_disc = loss.item();
        if (!std::isfinite(r.loss_disc)) numerical_failure("discriminator_step loss", r, s.disc_version);
        ag::backward(loss);
        auto grads = dp.grads();
        r.grad_norm_disc = global_norm(grads);
        if (!std::isfinite(r.grad_norm_disc)) numerical_failure("discriminator_step gradient", r, s.disc_version);
        clip_gradients(grads, r.grad_norm_disc, cfg_.grad_clip);
        r.update_norm_disc = apply_update(s.disc, grads, s.disc_opt, cfg_.disc_optimizer);
        ++s.disc_version;
        s.update_log.push_back('D');
        return r;
    }

    // One epoch = ceil(pairs_per_epoch / batch_size) batches drawn from `sampler`.
    EpochMetrics train_epoch(TrainState<T>& s, const PairSampler<T>& sampler) const {
        const auto start = std::chrono::steady_clock::now();
        EpochMetrics m;
        m.batches = cfg_.batches_per_epoch();
        int remaining = cfg_.pairs_per_epoch;
        StepReport acc;
        for (int b = 0; b < m.batches; ++b) {
            const int n = std::min(cfg_.batch_size, remaining);
            remaining -= n;
            std::vector<ImagePairT<T>> batch;
            batch.reserve(n);
            for (int i = 0; i < n; ++i) batch.push_back(sampler(s.pair_rng));
            auto ms = model_step(s, batch);
            StepReport r = ms.report;
            if (cfg_.adversarial) {
                for (int k = 0; k < cfg_.disc_steps; ++k) {
                    const StepReport d = discriminator_step(s, ms.pairs);
                    r.loss_disc = d.loss_disc;
                    r.grad_norm_disc = d.grad_norm_disc;
                    r.update_norm_disc = d.update_norm_disc;
                }
            }
            acc.loss_model += r.loss_model;
            acc.loss_adv += r.loss_adv;
            acc.loss_total += r.loss_total;
            acc.loss_disc += r.loss_disc;
            acc.grad_norm_model += r.grad_norm_model;
            acc.grad_norm_disc += r.grad_norm_disc;
            acc.update_norm_model += r.update_norm_model;
            acc.update_norm_disc += r.update_norm_disc;
        }
        const double inv = 1.0 / m.batches;
        m.mean = {acc.loss_model * inv, acc.loss_adv * inv, acc.loss_total * inv, acc.loss_disc * inv,
                  acc.grad_norm_model * inv, acc.grad_norm_disc * inv, acc.update_norm_model * inv, acc.update_norm_disc * inv};
        m.epoch = ++s.epoch;
        m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return m;
    }

private:
    const HostModel<T>& host_;
    const Discriminator<T>& disc_;
    TrainerConfig cfg_;
};

}  // namespace fsad
