// fsad command-line interface.
//
// Exit codes: 0 ok, 1 verification failure, 2 usage/config error,
// 3 numerical failure, 4 undefined metric.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fsad/config.hpp"
#include "fsad/experiment.hpp"
#include "fsad/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace fsad;

namespace {

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::NumericalError: return 3;
        case ErrorKind::UndefinedMetric: return 4;
        case ErrorKind::OracleError: return 1;
        default: return 2;
    }
}

struct Globals {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool toy = false;
    std::optional<std::string> adversarial;
    std::optional<std::string> host;
    std::optional<std::string> shots;
    std::optional<int> runs;

    ConfigOverrides overrides() const {
        ConfigOverrides o;
        o.seed = seed;
        o.output = out;
        o.toy = toy;
        if (adversarial) o.adversarial = *adversarial == "on";
        if (host) o.host = parse_host(*host);
        if (shots) o.shots = parse_int_list(*shots);
        o.runs = runs;
        return o;
    }

    ExperimentConfig resolve() const {
        return load_config(config ? std::optional<fs::path>(*config) : std::nullopt, overrides());
    }
};

void print_index(const DatasetIndex& index) {
    std::printf("dataset %s: %zu categories\n", index.root.string().c_str(), index.categories.size());
    for (const auto& c : index.categories) {
        std::size_t anomalous = 0;
        for (const auto& t : c.test_items) anomalous += t.label == Label::Anomalous;
        std::printf("  %-16s train %zu  test %zu (%zu anomalous)\n", c.name.c_str(), c.train_normals.size(), c.test_items.size(), anomalous);
    }
}

void print_tables(const std::vector<RunResult>& runs, const std::string& format) {
    for (const auto& t : build_report(runs)) {
        std::printf("K=%d %s AUROC\n", t.shots, to_string(t.metric));
        std::fputs((format == "csv" ? render_csv(t) : render_markdown(t)).c_str(), stdout);
        std::printf("\n");
    }
}

int cmd_make_synthetic(const std::string& spec_path, const Globals& g, const std::optional<std::string>& out_dir) {
    const SyntheticSpec spec = load_synthetic_spec(spec_path);
    const fs::path out = out_dir ? fs::path(*out_dir) : fs::path(g.out.value_or("synthetic"));
    print_index(generate_synthetic(spec, out));
    return 0;
}

int cmd_train(const Globals& g) {
    const ExperimentConfig cfg = g.resolve();
    const DatasetIndex index = prepare_dataset(cfg);
    const auto cells = enumerate_cells(cfg, index);
    std::printf("training %zu cells (%s) under %s\n", cells.size(), cfg.method().c_str(), config_root(cfg).string().c_str());
    train_all(cfg, index, worker_count());
    return 0;
}

int cmd_evaluate(const Globals& g, bool export_maps, const std::string& format) {
    ExperimentConfig cfg = g.resolve();
    cfg.scoring.export_maps = cfg.scoring.export_maps || export_maps;
    const DatasetIndex index = prepare_dataset(cfg);
    const auto runs = evaluate_all(cfg, index, worker_count());
    print_tables(runs, format);
    return 0;
}

int cmd_report(const std::string& dir, const std::string& format, const std::optional<std::string>& write_dir) {
    const auto runs = load_results(dir);
    if (write_dir) {
        fs::create_directories(*write_dir);
        for (const auto& t : build_report(runs)) {
            const std::string stem = "K" + std::to_string(t.shots) + "_" + to_string(t.metric);
            std::ofstream(fs::path(*write_dir) / (stem + ".csv")) << render_csv(t);
            std::ofstream(fs::path(*write_dir) / (stem + ".md")) << render_markdown(t);
        }
    }
    print_tables(runs, format);
    return 0;
}

int cmd_dump_features(const Globals& g, const std::string& checkpoint, const std::optional<std::string>& dataset, const std::string& layout,
                      const std::optional<std::string>& output) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const auto host = host_from_checkpoint(ck);
    DatasetIndex index;
    bool standardize = false;
    if (dataset) {
        index = scan_dataset(*dataset, parse_layout(layout));
    } else {
        const ExperimentConfig cfg = g.resolve();
        index = prepare_dataset(cfg);
        standardize = cfg.standardize;
    }
    const PreprocessConfig pre{ck.model.resolution, standardize};
    const std::string csv = embeddings_csv(dump_embeddings(*host, ck.main, index, pre));
    if (output) {
        std::ofstream out(*output, std::ios::binary);
        out << csv;
        if (!out) fail(ErrorKind::IoError, "cannot write " + *output);
    } else {
        std::fputs(csv.c_str(), stdout);
    }
    return 0;
}

bool print_gradcheck(const std::vector<GradcheckCase>& cases) {
    bool ok = true;
    for (const auto& c : cases) {
        std::printf("%-4s %-20s %d-bit  max_rel_err %.3e  tol %.0e  coords %zu  worst %s\n", c.pass() ? "PASS" : "FAIL", c.objective.c_str(), c.bits,
                    c.result.max_rel_error, c.tolerance, c.result.coords_checked, c.result.worst_param.c_str());
        ok = ok && c.pass();
    }
    return ok;
}

int cmd_gradcheck(const Globals& g, bool corrupt) {
    GradcheckSuiteOptions opt;
    opt.seed = g.seed.value_or(0);
    opt.corrupt_gradient = corrupt;
    return print_gradcheck(run_gradcheck_suite(opt)) ? 0 : 1;
}

// Quick internal consistency checks: gradients, AUROC vs the pairwise
// definition, checkpoint round trip.
int cmd_selftest() {
    bool ok = print_gradcheck(run_gradcheck_suite());

    Rng rng(7);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(30));
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<int> y(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = static_cast<double>(rng.below(6));
            y[static_cast<std::size_t>(i)] = i < 1 ? 0 : i < 2 ? 1 : static_cast<int>(rng.below(2));
        }
        double num = 0, den = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (y[static_cast<std::size_t>(i)] == 1 && y[static_cast<std::size_t>(j)] == 0) {
                    const double a = s[static_cast<std::size_t>(i)], b = s[static_cast<std::size_t>(j)];
                    num += a > b ? 1.0 : a == b ? 0.5 : 0.0;
                    den += 1;
                }
        worst = std::max(worst, std::abs(auroc(s, y) - num / den));
    }
    const bool auc_ok = worst < 1e-12;
    std::printf("%-4s auroc vs pairwise oracle  max_abs_err %.3e\n", auc_ok ? "PASS" : "FAIL", worst);
    ok = ok && auc_ok;

    const ModelConfig m = tiny_model_config(Host::MaskedRecon);
    Checkpoint ck;
    ck.model = m;
    ck.main = make_host<float>(m, Rng(1).split("model-init"))->initial_params();
    ck.disc = Discriminator<float>(m, Rng(1).split("disc-init")).initial_params();
    const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(ck));
    const bool ck_ok = back.main == ck.main && back.disc == ck.disc && serialize_checkpoint(back) == serialize_checkpoint(ck);
    std::printf("%-4s checkpoint round trip\n", ck_ok ? "PASS" : "FAIL");
    ok = ok && ck_ok;
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot anomaly detection with an adversarial feature-pair loss"};
    app.require_subcommand(1);
    Globals g;
    auto* gopts = &app;
    gopts->add_option("--config", g.config, "YAML experiment config");
    gopts->add_option("--seed", g.seed, "base seed (run i uses seed + i)");
    gopts->add_option("--out", g.out, "output directory");
    gopts->add_flag("--toy", g.toy, "toy profile: R=64, 5 epochs, 32 pairs per epoch");
    gopts->add_option("--adversarial", g.adversarial, "enable the adversarial loss")->check(CLI::IsMember({"on", "off"}));
    gopts->add_option("--host", g.host, "host model")->check(CLI::IsMember({"siamese", "masked-recon"}));
    gopts->add_option("--shots", g.shots, "comma-separated K values, e.g. 2,4,8");
    gopts->add_option("--runs", g.runs, "runs per K")->check(CLI::PositiveNumber);
    app.fallthrough();

    auto* synth = app.add_subcommand("make-synthetic", "generate a synthetic mvtec-style dataset");
    std::string spec_path;
    std::optional<std::string> synth_out;
    synth->add_option("spec", spec_path, "synthetic spec (YAML)")->required();
    synth->add_option("dir", synth_out, "output directory (default: --out)");

    auto* train = app.add_subcommand("train", "train every (K, seed, target) cell");

    auto* evaluate = app.add_subcommand("evaluate", "score every cell from its checkpoint and write results");
    bool export_maps = false;
    std::string eval_format = "markdown";
    evaluate->add_flag("--export-maps", export_maps, "write 16-bit anomaly map PNGs");
    evaluate->add_option("--format", eval_format)->check(CLI::IsMember({"markdown", "csv"}));

    auto* report = app.add_subcommand("report", "render tables from results records");
    std::string results_dir;
    std::string report_format = "markdown";
    std::optional<std::string> report_write;
    report->add_option("results", results_dir, "results directory or file")->required();
    report->add_option("--format", report_format)->check(CLI::IsMember({"markdown", "csv"}));
    report->add_option("--write", report_write, "also write CSV and Markdown files here");

    auto* dump = app.add_subcommand("dump-features", "write pooled f0 embeddings of every test image as CSV");
    std::string dump_ckpt;
    std::optional<std::string> dump_dataset, dump_output;
    std::string dump_layout = "mvtec";
    dump->add_option("--checkpoint", dump_ckpt, "checkpoint.fsad")->required();
    dump->add_option("--dataset", dump_dataset, "dataset root (default: the config's dataset)");
    dump->add_option("--layout", dump_layout)->check(CLI::IsMember({"mvtec", "dagm"}));
    dump->add_option("--output", dump_output, "CSV path (default: stdout)");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks of L_M, L_MT and L_DT");
    bool corrupt = false;
    gradcheck->add_flag("--corrupt-gradient", corrupt)->group("");

    auto* selftest = app.add_subcommand("selftest", "quick internal consistency checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) return cmd_make_synthetic(spec_path, g, synth_out);
        if (*train) return cmd_train(g);
        if (*evaluate) return cmd_evaluate(g, export_maps, eval_format);
        if (*report) return cmd_report(results_dir, report_format, report_write);
        if (*dump) return cmd_dump_features(g, dump_ckpt, dump_dataset, dump_layout, dump_output);
        if (*gradcheck) return cmd_gradcheck(g, corrupt);
        if (*selftest) return cmd_selftest();
    } catch (const Error& e) {
        std::fprintf(stderr, "fsad: %s\n", e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "fsad: %s\n", e.what());
        return 2;
    }
    return 2;
}
