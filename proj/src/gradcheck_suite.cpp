#include <memory>

#include "fsad/gradcheck_suite.hpp"
#include "fsad/trainer.hpp"

namespace fsad {

ModelConfig tiny_model_config(Host host) {
    ModelConfig m;
    m.host = host;
    m.resolution = 16;
    m.encoder_channels = {4, 4, 6};
    m.stn_channels = 3;
    m.predictor_hidden = 5;
    m.decoder_blocks = 2;
    m.decoder_ffn = 5;
    m.disc_channels = {4, 4};
    m.disc_strides = {1, 1};
    return m;
}

namespace {

enum class Objective { LM, LMT, LDT };

struct CaseSpec {
    Objective objective;
    Host host;
    std::string name;
};

template <typename T>
struct Fixture {
    std::unique_ptr<HostModel<T>> host;
    std::unique_ptr<Discriminator<T>> disc;
};

template <typename T>
Fixture<T> make_fixture(Host h) {
    const ModelConfig cfg = tiny_model_config(h);
    Fixture<T> f;
    f.host = make_host<T>(cfg, Rng(11).split("model"));
    f.disc = std::make_unique<Discriminator<T>>(cfg, Rng(11).split("disc"));
    return f;
}

// Inputs shared by every precision, held in double.
struct Inputs {
    ParameterSet<double> model, disc;
    Tensor<double> i0, i1;
    Tensor<double> f0, f1;  // fixed features for L_DT
    Rng mask_rng;
};

Inputs make_inputs(Host h, std::uint64_t seed) {
    auto fx = make_fixture<double>(h);
    Inputs in;
    in.model = fx.host->initial_params();
    in.disc = fx.disc->initial_params();
    Rng rng = Rng(seed).split("gradcheck-inputs", static_cast<std::uint64_t>(h));
    if (h == Host::Siamese) {
        // Move the STN off the identity so sampling points avoid pixel centers,
        // where bilinear interpolation has kinks.
        for (auto& v : in.model.at("stn.fc.weight").data) v = rng.uniform(-0.05, 0.05);
        auto& b = in.model.at("stn.fc.bias").data;
        const double bias[6] = {0.97, 0.03, 0.011, -0.02, 1.02, -0.013};
        for (int i = 0; i < 6; ++i) b[static_cast<std::size_t>(i)] = bias[i];
    }
    const int R = fx.host->config().resolution;
    in.i0 = Tensor<double>({3, R, R});
    in.i1 = Tensor<double>({3, R, R});
    for (auto& v : in.i0.data) v = static_cast<float>(rng.uniform());
    for (auto& v : in.i1.data) v = static_cast<float>(rng.uniform());
    const Shape fs = fx.host->config().feature_shape();
    in.f0 = Tensor<double>(fs);
    in.f1 = Tensor<double>(fs);
    for (auto& v : in.f0.data) v = static_cast<float>(rng.normal());
    for (auto& v : in.f1.data) v = static_cast<float>(0.5 + rng.normal());
    in.mask_rng = rng.split("mask");
    return in;
}

// Evaluates the objective; `grads` (optional) receives the gradient w.r.t.
// the varying parameter set (the discriminator for L_DT, the model otherwise).
template <typename T>
double evaluate(const CaseSpec& cs, const Fixture<T>& fx, const ParameterSet<T>& model, const ParameterSet<T>& disc, const Tensor<T>& i0,
                const Tensor<T>& i1, const Tensor<T>& f0, const Tensor<T>& f1, Rng mask_rng, const FrozenTargets<T>* frozen_in,
                FrozenTargets<T>* frozen_out, std::vector<Tensor<T>>* grads) {
    const T eps = static_cast<T>(kBceEps);
    const bool disc_varies = cs.objective == Objective::LDT;
    const Binding<T> mb(model, !disc_varies && grads);
    const Binding<T> db(disc, disc_varies && grads);
    ag::Var<T> loss;
    if (cs.objective == Objective::LDT) {
        loss = ag::add(ag::bce(fx.disc->forward(db, ag::constant(f0)), 0, eps), ag::bce(fx.disc->forward(db, ag::constant(f1)), 1, eps));
    } else {
        std::vector<ag::Var<T>> lm, adv;
        for (auto& fw : fx.host->forward_sample(mb, i0, i1, mask_rng, frozen_in, frozen_out)) {
            lm.push_back(fw.loss);
            if (cs.objective == Objective::LMT) adv.push_back(ag::bce(fx.disc->forward(db, fw.f0), 1, eps));
        }
        loss = ag::mean_of(lm);
        if (cs.objective == Objective::LMT) loss = ag::add(loss, ag::mean_of(adv));
    }
    if (grads) {
        ag::backward(loss);
        *grads = disc_varies ? db.grads() : mb.grads();
    }
    return static_cast<double>(loss.item());
}

template <typename T>
std::vector<Tensor<double>> analytic_gradient(const CaseSpec& cs, const Inputs& in, bool corrupt) {
    auto fx = make_fixture<T>(cs.host);
    std::vector<Tensor<T>> g;
    evaluate<T>(cs, fx, in.model.template cast<T>(), in.disc.template cast<T>(), in.i0.template cast<T>(), in.i1.template cast<T>(),
                in.f0.template cast<T>(), in.f1.template cast<T>(), in.mask_rng, nullptr, nullptr, &g);
    std::vector<Tensor<double>> out;
    for (auto& t : g) {
        out.push_back(t.template cast<double>());
        if (corrupt)
            for (auto& v : out.back().data) v *= 1.05;
    }
    return out;
}

GradcheckCase run_case(const CaseSpec& cs, int bits, const GradcheckSuiteOptions& opt) {
    Inputs in = make_inputs(cs.host, opt.seed);
    if (bits == 32) {
        // The 32-bit implementation is checked at parameters it can represent.
        in.model = in.model.cast<float>().cast<double>();
        in.disc = in.disc.cast<float>().cast<double>();
    }
    const auto analytic = bits == 32 ? analytic_gradient<float>(cs, in, opt.corrupt_gradient) : analytic_gradient<double>(cs, in, opt.corrupt_gradient);

    auto fx = make_fixture<double>(cs.host);
    FrozenTargets<double> frozen;
    evaluate<double>(cs, fx, in.model, in.disc, in.i0, in.i1, in.f0, in.f1, in.mask_rng, nullptr, &frozen, nullptr);
    const bool disc_varies = cs.objective == Objective::LDT;
    std::function<double(const ParameterSet<double>&)> objective = [&](const ParameterSet<double>& ps) {
        const auto& model = disc_varies ? in.model : ps;
        const auto& disc = disc_varies ? ps : in.disc;
        return evaluate<double>(cs, fx, model, disc, in.i0, in.i1, in.f0, in.f1, in.mask_rng, &frozen, nullptr, nullptr);
    };
    GradcheckOptions go;
    go.step = 1e-6;
    go.abs_floor = kGradAbsFloor;
    go.coords_per_tensor = opt.coords_per_tensor;
    go.seed = opt.seed;
    GradcheckCase c;
    c.objective = cs.name;
    c.bits = bits;
    c.tolerance = bits == 32 ? kGradTolerance32 : kGradTolerance64;
    c.result = finite_difference_gradcheck<double>(objective, disc_varies ? in.disc : in.model, analytic, go);
    return c;
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(const GradcheckSuiteOptions& opt) {
    const std::vector<CaseSpec> specs = {
        {Objective::LM, Host::Siamese, "L_M siamese"},
        {Objective::LM, Host::MaskedRecon, "L_M masked-recon"},
        {Objective::LMT, Host::Siamese, "L_MT siamese"},
        {Objective::LMT, Host::MaskedRecon, "L_MT masked-recon"},
        {Objective::LDT, Host::Siamese, "L_DT"},
    };
    std::vector<GradcheckCase> out;
    for (int bits : opt.precisions)
        for (const auto& s : specs) out.push_back(run_case(s, bits, opt));
    return out;
}

}  // namespace fsad
