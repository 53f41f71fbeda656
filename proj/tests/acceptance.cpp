// Acceptance checks: one PASS/FAIL line per criterion, tolerances pinned here.
// Exit status is 0 only if every criterion passes.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <regex>
#include <sstream>

#include "fsad/experiment.hpp"
#include "fsad/gradcheck_suite.hpp"
#include "reference_ops.hpp"

using namespace fsad;
namespace fs = std::filesystem;

namespace {

// ------------------------------------------------------------------ tolerances and budgets

constexpr double kLn2Tol = 1e-9;
constexpr double kDecompositionTol = 1e-6;
constexpr int kDecompositionBatches = 100;
constexpr int kIsolationSteps = 50;
constexpr double kAdamTol = 1e-10;
constexpr double kAurocTol = 1e-12;
constexpr int kAurocSets = 200;
constexpr int kPixelCases = 20;
constexpr int kDiscSteps = 100;
constexpr double kDiscReduction = 0.5;
constexpr double kMedianAuroc = 0.80;
constexpr double kPaperTol = 0.05;
constexpr double kAttentionTol = 1e-6;
constexpr double kNormMeanTol = 1e-5;
constexpr double kNormExactTol = 1e-5;
constexpr double kNormVarTol = 1e-3;

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Tensor<double> noise(Shape s, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data) v = scale * rng.normal();
    return t;
}

template <typename T>
Tensor<T> image(int r, Rng& rng) {
    Tensor<T> t({3, r, r});
    for (auto& v : t.data) v = static_cast<T>(rng.uniform());
    return t;
}

// ------------------------------------------------------------------ 1. loss analytics

Outcome loss_analytics() {
    double worst_ln2 = std::max(std::abs(bce_label(0.5, 0) - std::log(2.0)), std::abs(bce_label(0.5, 1) - std::log(2.0)));

    const ModelConfig sc = tiny_model_config(Host::Siamese);
    SiameseModel<double> neutral_host(sc, Rng(1));
    Discriminator<double> neutral(sc, Rng(2));
    ParameterSet<double> half = neutral.initial_params();
    half.at("disc.head.weight") = Tensor<double>(half.at("disc.head.weight").shape);
    half.at("disc.head.bias") = Tensor<double>(half.at("disc.head.bias").shape);
    AdversarialTrainer<double> nt(neutral_host, neutral, TrainerConfig{});
    Rng frng(3);
    const FeaturePair<double> fp{noise(sc.feature_shape(), frng), noise(sc.feature_shape(), frng)};
    const double ldt = nt.discriminator_objective(Binding<double>(half, false), fp).item();
    const double err_ldt = std::abs(ldt - 2 * std::log(2.0));

    // L_MT = L_M + L_D(f0, 1) against an independent recomputation: host
    // forward for L_M, reference discriminator for the adversarial term.
    double worst_dec = 0;
    for (int b = 0; b < kDecompositionBatches; ++b) {
        const Host h = b % 2 ? Host::MaskedRecon : Host::Siamese;
        const ModelConfig cfg = tiny_model_config(h);
        auto host = make_host<double>(cfg, Rng(100 + b));
        Discriminator<double> disc(cfg, Rng(200 + b));
        AdversarialTrainer<double> tr(*host, disc, TrainerConfig{});
        auto s = tr.initial_state(Rng(300 + b));
        Rng irng(400 + b);
        std::vector<ImagePairT<double>> batch;
        for (int i = 0; i < 2; ++i) batch.push_back({image<double>(cfg.resolution, irng), image<double>(cfg.resolution, irng)});

        Rng mask_copy = s.mask_rng;
        Binding<double> mp(s.model, false);
        double lm = 0, adv = 0;
        int n = 0;
        for (const auto& p : batch)
            for (const auto& fw : host->forward_sample(mp, p.i0, p.i1, mask_copy)) {
                lm += fw.loss.item();
                const double d = ref::discriminator(s.disc, cfg.disc_channels, cfg.disc_strides, cfg.disc_slope, cfg.norm_eps, ref::Map(fw.f0.value()));
                adv += ref::bce(d, 1);
                ++n;
            }
        const auto rep = tr.model_step(s, batch).report;
        worst_dec = std::max({worst_dec, std::abs(rep.loss_total - (lm + adv) / n), std::abs(rep.loss_model - lm / n), std::abs(rep.loss_adv - adv / n)});
    }
    const bool pass = worst_ln2 < kLn2Tol && err_ldt < kLn2Tol && worst_dec < kDecompositionTol;
    return {pass, "bce(0.5) err " + fmt("%.1e", worst_ln2) + ", L_DT(0.5,0.5) err " + fmt("%.1e", err_ldt) + ", L_MT decomposition max err " +
                      fmt("%.1e", worst_dec) + " over " + std::to_string(kDecompositionBatches) + " batches"};
}

// ------------------------------------------------------------------ 2. gradients

Outcome gradients() {
    bool pass = true;
    double worst64 = 0, worst32 = 0;
    std::size_t cases = 0;
    for (const auto& c : run_gradcheck_suite()) {
        pass = pass && c.pass() && c.result.coords_checked > 0;
        (c.bits == 64 ? worst64 : worst32) = std::max(c.bits == 64 ? worst64 : worst32, c.result.max_rel_error);
        ++cases;
    }
    pass = pass && worst64 < kGradTolerance64 && worst32 < kGradTolerance32;
    return {pass, std::to_string(cases) + " cases; max rel err 64-bit " + fmt("%.2e", worst64) + " (< 1e-5), 32-bit " + fmt("%.2e", worst32) + " (< 1e-3)"};
}

// ------------------------------------------------------------------ 3. update isolation

Outcome isolation() {
    int violations = 0, steps = 0;
    for (Host h : {Host::Siamese, Host::MaskedRecon}) {
        const ModelConfig cfg = tiny_model_config(h);
        auto host = make_host<float>(cfg, Rng(5));
        Discriminator<float> disc(cfg, Rng(6));
        TrainerConfig tc = default_config(h, true).trainer;
        tc.batch_size = 2;
        AdversarialTrainer<float> tr(*host, disc, tc);
        auto s = tr.initial_state(Rng(7));
        for (int i = 0; i < kIsolationSteps / 2; ++i, ++steps) {
            std::vector<ImagePairT<float>> batch{{image<float>(cfg.resolution, s.pair_rng), image<float>(cfg.resolution, s.pair_rng)},
                                                 {image<float>(cfg.resolution, s.pair_rng), image<float>(cfg.resolution, s.pair_rng)}};
            const auto d0 = s.disc;
            auto ms = tr.model_step(s, batch);
            violations += !(s.disc == d0);
            const auto m0 = s.model;
            tr.discriminator_step(s, ms.pairs);
            violations += !(s.model == m0);
        }
    }

    // Adversarial off vs a loop that never constructs discriminator terms.
    int diverged = 0;
    for (Host h : {Host::Siamese, Host::MaskedRecon}) {
        const ModelConfig cfg = tiny_model_config(h);
        auto host = make_host<float>(cfg, Rng(8));
        Discriminator<float> disc(cfg, Rng(9));
        TrainerConfig tc = default_config(h, true).trainer;
        tc.adversarial = false;
        tc.batch_size = 2;
        AdversarialTrainer<float> tr(*host, disc, tc);
        auto s = tr.initial_state(Rng(10));
        ParameterSet<float> params = host->initial_params();
        auto opt = OptimizerState<float>::zeros_like(params);
        Rng pair_rng = Rng(10).split("pairs"), mask_rng = Rng(10).split("mask");
        for (int i = 0; i < kIsolationSteps / 2; ++i) {
            std::vector<ImagePairT<float>> batch{{image<float>(cfg.resolution, s.pair_rng), image<float>(cfg.resolution, s.pair_rng)},
                                                 {image<float>(cfg.resolution, s.pair_rng), image<float>(cfg.resolution, s.pair_rng)}};
            tr.model_step(s, batch);
            std::vector<ImagePairT<float>> ref_batch{{image<float>(cfg.resolution, pair_rng), image<float>(cfg.resolution, pair_rng)},
                                                     {image<float>(cfg.resolution, pair_rng), image<float>(cfg.resolution, pair_rng)}};
            Binding<float> mp(params, true);
            std::vector<ag::Var<float>> losses;
            for (const auto& p : ref_batch)
                for (auto& fw : host->forward_sample(mp, p.i0, p.i1, mask_rng)) losses.push_back(fw.loss);
            ag::backward(ag::mean_of(losses));
            apply_update(params, mp.grads(), opt, tc.model_optimizer);
            diverged += !(s.model == params);
        }
    }
    return {violations == 0 && diverged == 0, std::to_string(steps) + " model+disc steps, " + std::to_string(violations) +
                                                  " cross-updates; adversarial-off trajectory mismatches " + std::to_string(diverged) + "/" +
                                                  std::to_string(kIsolationSteps)};
}

// ------------------------------------------------------------------ 4. optimizers

Outcome optimizers() {
    OptimizerConfig sgd;
    sgd.learning_rate = 0.1;
    sgd.momentum = 0.9;
    Tensor<double> p({1}, 1.0), v({1}), g({1}, 1.0);
    sgd_momentum_update(p, g, v, sgd);
    sgd_momentum_update(p, g, v, sgd);
    // v1 = 1, p1 = 1 - 0.1; v2 = 0.9 * 1 + 1, p2 = p1 - 0.1 * v2.
    const double p1 = 1.0 - 0.1 * 1.0, recurrence = p1 - 0.1 * (0.9 * 1.0 + 1.0);
    const bool sgd_ok = p[0] == recurrence && std::abs(p[0] - 0.71) < 1e-15;

    OptimizerConfig aw;
    aw.kind = OptimizerKind::AdamW;
    aw.learning_rate = 1e-3;
    aw.weight_decay = 1e-2;
    Tensor<double> q({3}, std::vector<double>{0.5, -1.5, 2.0}), gq({3}, std::vector<double>{0.3, -2.0, 1e-3}), m({3}), vv({3});
    const Tensor<double> q0 = q;
    std::uint64_t step = 0;
    adamw_update(q, gq, m, vv, step, aw);
    double worst = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double gi = gq[i];
        const double mh = (0.1 * gi) / (1 - 0.9), vh = (0.001 * gi * gi) / (1 - 0.999);
        const double want = q0[i] - 1e-3 * (mh / (std::sqrt(vh) + 1e-8) + 1e-2 * q0[i]);
        worst = std::max(worst, std::abs(q[i] - want));
    }
    return {sgd_ok && worst < kAdamTol, "sgd two-step p = " + fmt("%.17g", p[0]) + ", adamw closed-form max err " + fmt("%.1e", worst)};
}

// ------------------------------------------------------------------ 5. AUROC

Outcome auroc_oracle() {
    Rng rng(11);
    double worst = 0;
    for (int t = 0; t < kAurocSets; ++t) {
        const std::size_t n = 2 + rng.below(49);
        std::vector<double> s(n);
        std::vector<int> y(n);
        const std::uint64_t levels = 2 + rng.below(10);  // few levels inject ties
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = t % 3 == 0 ? rng.normal() : static_cast<double>(rng.below(levels)) / 3.0;
            y[i] = i == 0 ? 0 : i == 1 ? 1 : static_cast<int>(rng.below(2));
        }
        worst = std::max(worst, std::abs(auroc(s, y) - ref::pairwise_auroc(s, y)));
    }
    double worst_px = 0;
    for (int t = 0; t < kPixelCases; ++t) {
        std::vector<AnomalyMap> maps;
        std::vector<Mask> masks;
        std::vector<double> s;
        std::vector<int> y;
        const int count = 1 + static_cast<int>(rng.below(3));
        for (int m = 0; m < count; ++m) {
            const int h = 2 + static_cast<int>(rng.below(7)), w = 2 + static_cast<int>(rng.below(7));
            Grid g(h, w);
            Mask k{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0)};
            for (std::size_t i = 0; i < g.values.size(); ++i) {
                k.cells[i] = static_cast<std::uint8_t>(rng.below(4) == 0);
                g.values[i] = static_cast<double>(rng.below(6)) + 0.5 * k.cells[i];
                s.push_back(g.values[i]);
                y.push_back(k.cells[i]);
            }
            maps.push_back(g);
            masks.push_back(k);
        }
        masks[0].cells[0] = 1;
        masks[0].cells[1] = 0;
        y[0] = 1;
        y[1] = 0;
        worst_px = std::max(worst_px, std::abs(pixel_auroc(maps, masks) - ref::pairwise_auroc(s, y)));
    }
    return {worst < kAurocTol && worst_px < kAurocTol,
            std::to_string(kAurocSets) + " score sets max err " + fmt("%.1e", worst) + "; " + std::to_string(kPixelCases) + " pixel cases max err " + fmt("%.1e", worst_px)};
}

// ------------------------------------------------------------------ 6. discriminator learning

Outcome discriminator_learning() {
    const ModelConfig cfg;  // toy-scale 8x8x64 features
    // AdamW (toy betas and weight decay) at lr 1e-2 on the discriminator alone.
    TrainerConfig tc = default_config(Host::MaskedRecon, true).trainer;
    tc.disc_optimizer.learning_rate = 1e-2;
    std::string detail;
    bool pass = true;
    for (std::uint64_t seed : {1, 2, 3}) {
        SiameseModel<double> host(cfg, Rng(seed));
        Discriminator<double> disc(cfg, Rng(seed).split("disc"));
        AdversarialTrainer<double> tr(host, disc, tc);
        auto s = tr.initial_state(Rng(seed));
        Rng rng = Rng(seed).split("features");
        // f0 = +u + noise, f1 = -u + noise: separable by the sign of <f, u>.
        const auto u = noise(cfg.feature_shape(), rng);
        std::vector<FeaturePair<double>> pairs;
        for (int i = 0; i < 8; ++i) {
            FeaturePair<double> p{noise(cfg.feature_shape(), rng, 0.3), noise(cfg.feature_shape(), rng, 0.3)};
            for (std::size_t j = 0; j < u.size(); ++j) {
                p.f0[j] += u[j];
                p.f1[j] -= u[j];
            }
            pairs.push_back(std::move(p));
        }
        double first = 0;
        for (const auto& p : pairs) first += tr.discriminator_objective(Binding<double>(s.disc, false), p).item() / pairs.size();
        for (int k = 0; k < kDiscSteps; ++k) tr.discriminator_step(s, pairs);
        double last = 0;
        for (const auto& p : pairs) last += tr.discriminator_objective(Binding<double>(s.disc, false), p).item() / pairs.size();
        pass = pass && last < kDiscReduction * first;
        detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": L_DT " + fmt("%.3f", first) + " -> " + fmt("%.3f", last);
    }
    return {pass, detail};
}

// ------------------------------------------------------------------ 7. synthetic end-to-end

std::string mask_volatile(const std::string& text) {
    static const std::regex created("\"created_at\"\\s*:\\s*\"[^\"]*\"");
    static const std::regex wall("\"wall_time_s\"\\s*:\\s*[-+0-9.eE]+");
    return std::regex_replace(std::regex_replace(text, created, "\"created_at\":\"*\""), wall, "\"wall_time_s\":*");
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        files[fs::relative(e.path(), root).string()] = mask_volatile(ss.str());
    }
    return files;
}

Outcome synthetic_end_to_end() {
    const fs::path out = fs::temp_directory_path() / "fsad-acceptance";
    const int workers = worker_count();
    bool pass = true;
    std::string detail;
    std::size_t files_compared = 0;
    for (Host h : {Host::Siamese, Host::MaskedRecon})
        for (bool adv : {false, true}) {
            ConfigOverrides ov;
            ov.toy = true;
            ov.host = h;
            ov.adversarial = adv;
            ov.shots = std::vector<int>{2};
            ov.runs = 3;
            ov.seed = 0;
            ov.output = out.string();
            const auto cfg = parse_config("dataset:\n  synthetic: {categories: 5}\n", ov, "<acceptance>");

            std::map<std::string, std::string> first;
            std::vector<double> per_seed;
            for (int rep = 0; rep < 2; ++rep) {
                fs::remove_all(out);
                const auto index = prepare_dataset(cfg);
                train_all(cfg, index, workers);
                const auto runs = evaluate_all(cfg, index, workers);
                if (rep == 0) {
                    for (const auto& r : runs) {
                        double s = 0;
                        for (const auto& c : r.categories) s += c.image_auc;
                        per_seed.push_back(s / static_cast<double>(r.categories.size()));
                    }
                    first = snapshot(out);
                } else {
                    const auto second = snapshot(out);
                    const bool same = first == second;
                    files_compared += first.size();
                    pass = pass && same;
                    if (!same) detail += "[" + cfg.method() + " not byte-reproducible] ";
                }
            }
            std::sort(per_seed.begin(), per_seed.end());
            const double median = per_seed[per_seed.size() / 2];
            pass = pass && per_seed.size() == 3 && median >= kMedianAuroc;
            detail += cfg.method() + " median " + fmt("%.3f", median) + " (seeds";
            for (double v : per_seed) detail += " " + fmt("%.3f", v);
            detail += "); ";
        }
    fs::remove_all(out);
    return {pass, detail + std::to_string(files_compared) + " files byte-identical across reruns (timestamps masked)"};
}

// ------------------------------------------------------------------ 8. paper arithmetic

Outcome paper_arithmetic() {
    struct Row {
        std::string label;
        std::vector<double> values;
        double average;
    };
    const std::vector<Row> rows{
        {"Table 1 K=2 +Ours", {99.8, 65.9, 70.2, 96.9, 77.0, 96.3, 100.0, 94.9, 80.7, 66.0, 99.4, 83.2, 82.6, 99.7, 86.6}, 86.6},
        {"Table 2 K=2 RegAD+Ours", {98.6, 93.9, 97.5, 98.9, 80.0, 98.4, 99.4, 97.8, 97.8, 94.8, 96.3, 96.6, 94.3, 96.8, 97.4}, 95.9},
        {"Table 3 K=2 RegAD image", {56.1, 67.6, 76.8, 93.5, 73.7}, 73.5},
    };
    bool pass = true;
    std::string detail;
    for (const auto& row : rows) {
        RunResult r{"m", 2, 0, {}};
        for (std::size_t i = 0; i < row.values.size(); ++i) r.categories.push_back({"c" + std::to_string(100 + i), row.values[i] / 100.0, 0.0});
        const double avg = aggregate({r}, Metric::Image).average;
        const double rounded = std::stod(format_percent(avg));
        pass = pass && std::abs(rounded - row.average) <= kPaperTol;
        detail += (detail.empty() ? "" : "; ") + row.label + " " + format_percent(avg) + " vs " + fmt("%.1f", row.average);
    }
    return {pass, detail};
}

// ------------------------------------------------------------------ 9. structural invariants

Outcome structure() {
    ModelConfig cfg;  // toy architecture, R = 64
    Rng rng(21);
    int shape_failures = 0, forwards = 0;
    bool swap_exact = true;
    for (Host h : {Host::Siamese, Host::MaskedRecon}) {
        cfg.host = h;
        auto host = make_host<float>(cfg, Rng(22));
        Binding<float> p(host->initial_params(), false);
        for (int i = 0; i < 3; ++i) {
            const auto a = image<float>(64, rng), b = image<float>(64, rng);
            for (const auto& fw : host->forward_sample(p, a, b, rng)) {
                ++forwards;
                shape_failures += fw.f0.shape() != fw.f1.shape() || fw.f0.shape() != cfg.feature_shape();
            }
            if (h == Host::Siamese) {
                Rng unused;
                const auto ab = host->forward_sample(p, a, b, unused)[0];
                const auto ba = host->forward_sample(p, b, a, unused)[0];
                swap_exact = swap_exact && ab.loss.item() == ba.loss.item() && ab.f0.value().data == ba.f1.value().data &&
                             ab.f1.value().data == ba.f0.value().data;
            }
        }
    }

    // Post-norm variance is exactly s2 / (s2 + eps) for pre-norm variance s2;
    // |var - 1| < 1e-3 is only reachable when s2 >= 1e3 * eps, which is the
    // non-degenerate regime. Every channel is checked against the exact form.
    double worst_mean = 0, worst_var = 0, worst_exact = 0;
    int channels = 0, eps_dominated = 0;
    Discriminator<float> disc(cfg, Rng(23));
    Binding<float> dp(disc.initial_params(), false);
    const auto stats = [](const Tensor<float>& t, int c) {
        const int n = t.shape[1] * t.shape[2];
        double mu = 0, var = 0;
        for (int k = 0; k < n; ++k) mu += t[static_cast<std::size_t>(c) * n + k];
        mu /= n;
        for (int k = 0; k < n; ++k) var += std::pow(t[static_cast<std::size_t>(c) * n + k] - mu, 2);
        return std::pair{mu, var / n};
    };
    for (int i = 0; i < 5; ++i) {
        Tensor<float> f(cfg.feature_shape());
        for (auto& v : f.data) v = static_cast<float>(2.0 * rng.normal() + 1.0);
        DiscriminatorTrace<float> trace;
        disc.forward(dp, ag::constant(f), &trace);
        for (std::size_t l = 0; l < trace.normalized.size(); ++l)
            for (int c = 0; c < trace.normalized[l].shape[0]; ++c) {
                const auto [mu, var] = stats(trace.normalized[l], c);
                const double s2 = stats(trace.pre_norm[l], c).second;
                ++channels;
                worst_mean = std::max(worst_mean, std::abs(mu));
                worst_exact = std::max(worst_exact, std::abs(var - s2 / (s2 + cfg.norm_eps)));
                if (s2 >= 1e3 * cfg.norm_eps)
                    worst_var = std::max(worst_var, std::abs(var - 1.0));
                else
                    ++eps_dominated;
            }
    }

    cfg.host = Host::MaskedRecon;
    MaskedReconModel<float> recon(cfg, Rng(24));
    Binding<float> rp(recon.initial_params(), false);
    double worst_row = 0;
    for (int i = 0; i < 3; ++i) {
        const auto out = recon.forward(rp, image<float>(64, rng), recon.draw_mask(rng));
        for (const auto& a : out.attention) {
            const int P = a.shape[0];
            for (int r = 0; r < P; ++r) {
                double s = 0;
                for (int c = 0; c < P; ++c) s += a[static_cast<std::size_t>(r) * P + c];
                worst_row = std::max(worst_row, std::abs(s - 1.0));
            }
        }
    }

    cfg.host = Host::Siamese;
    SiameseModel<float> siamese(cfg, Rng(25));
    Binding<float> sp(siamese.initial_params(), false);
    double stn_err = 0;
    for (int i = 0; i < 3; ++i) {
        const auto img = image<float>(64, rng);
        const auto warped = siamese.stn(sp, ag::constant(img)).second.value();
        for (std::size_t k = 0; k < img.size(); ++k) stn_err = std::max(stn_err, static_cast<double>(std::abs(warped[k] - img[k])));
    }

    const bool pass = shape_failures == 0 && swap_exact && worst_mean < kNormMeanTol && worst_var < kNormVarTol && worst_exact < kNormExactTol && worst_row < kAttentionTol && stn_err == 0.0;
    return {pass, std::to_string(forwards) + " forwards with equal f0/f1 shapes (" + std::to_string(shape_failures) + " mismatches); swap " +
                      (swap_exact ? "exact" : "NOT exact") + "; instance-norm over " + std::to_string(channels) + " channels |mean| " + fmt("%.1e", worst_mean) + ", |var-s2/(s2+eps)| " +
                      fmt("%.1e", worst_exact) + ", |var-1| " + fmt("%.1e", worst_var) + " (" + std::to_string(eps_dominated) + " eps-dominated channels excluded)" +
                      "; attention row-sum err " + fmt("%.1e", worst_row) + "; STN identity max err " + fmt("%.1e", stn_err)};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "loss analytics", 10, loss_analytics},
        {2, "gradient correctness", 120, gradients},
        {3, "update isolation", 60, isolation},
        {4, "optimizer rules", 1, optimizers},
        {5, "AUROC oracle", 30, auroc_oracle},
        {6, "discriminator learning", 30, discriminator_learning},
        {7, "synthetic end-to-end", 600, synthetic_end_to_end},
        {8, "report arithmetic", 1, paper_arithmetic},
        {9, "structural invariants", 30, structure},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = o.pass && secs < c.budget_s;
        failed += !pass;
        std::printf("%s criterion %d (%s): %s [%.2fs, budget %.0fs]\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(), secs, c.budget_s);
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
