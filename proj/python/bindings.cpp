// Python bindings for the main operations: config resolution, synthetic data,
// training and evaluation sweeps, reports, metrics and gradient checks.

#include <fstream>
#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fsad/config.hpp"
#include "fsad/experiment.hpp"
#include "fsad/gradcheck_suite.hpp"

namespace py = pybind11;
using namespace fsad;

namespace {

ExperimentConfig make_config(const std::string& yaml, bool toy, std::optional<std::string> host, std::optional<bool> adversarial,
                             std::optional<std::uint64_t> seed, std::optional<std::string> output, std::optional<std::vector<int>> shots,
                             std::optional<int> runs) {
    ConfigOverrides o;
    o.toy = toy;
    if (host) o.host = parse_host(*host);
    o.adversarial = adversarial;
    o.seed = seed;
    o.output = std::move(output);
    o.shots = std::move(shots);
    o.runs = runs;
    return parse_config(yaml, o);
}

// Every sweep entry point accepts the same override keywords as the CLI flags.
#define FSAD_CONFIG_ARGS                                                                                                      \
    py::arg("yaml") = "", py::kw_only(), py::arg("toy") = false, py::arg("host") = py::none(), py::arg("adversarial") = py::none(), \
        py::arg("seed") = py::none(), py::arg("output") = py::none(), py::arg("shots") = py::none(), py::arg("runs") = py::none()

py::dict index_summary(const DatasetIndex& index) {
    py::list cats;
    for (const auto& c : index.categories) {
        int anomalous = 0;
        for (const auto& t : c.test_items) anomalous += t.label == Label::Anomalous;
        py::dict d;
        d["name"] = c.name;
        d["train"] = c.train_normals.size();
        d["test"] = c.test_items.size();
        d["anomalous"] = anomalous;
        cats.append(d);
    }
    py::dict out;
    out["root"] = index.root.string();
    out["categories"] = cats;
    return out;
}

py::list run_records(const std::vector<RunResult>& runs) {
    py::list out;
    for (const auto& r : runs)
        for (const auto& c : r.categories) {
            py::dict d;
            d["method"] = r.method;
            d["seed"] = r.seed;
            d["K"] = r.shots;
            d["category"] = c.category;
            d["image_auc"] = c.image_auc;
            d["pixel_auc"] = c.pixel_auc;
            out.append(d);
        }
    return out;
}

}  // namespace

PYBIND11_MODULE(_fsad, m) {
    m.doc() = "Few-shot anomaly detection with an adversarial feature-pair loss";
    m.attr("__version__") = kSoftwareVersion;
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

    m.def(
        "resolve_config",
        [](const std::string& yaml, bool toy, std::optional<std::string> host, std::optional<bool> adv, std::optional<std::uint64_t> seed,
           std::optional<std::string> output, std::optional<std::vector<int>> shots, std::optional<int> runs) {
            return to_yaml(make_config(yaml, toy, host, adv, seed, output, shots, runs));
        },
        FSAD_CONFIG_ARGS, "Resolved config as canonical YAML (defaults < yaml < keyword overrides).");

    m.def(
        "config_hash",
        [](const std::string& yaml, bool toy, std::optional<std::string> host, std::optional<bool> adv, std::optional<std::uint64_t> seed,
           std::optional<std::string> output, std::optional<std::vector<int>> shots, std::optional<int> runs) {
            return config_hash(make_config(yaml, toy, host, adv, seed, output, shots, runs));
        },
        FSAD_CONFIG_ARGS);

    m.def(
        "generate_synthetic",
        [](const std::filesystem::path& out, int categories, std::uint64_t seed, int resolution, int train_per_category, int test_normal,
           int test_anomalous, double defect_area_fraction, double noise, double defect_contrast) {
            SyntheticSpec s;
            s.n_categories = categories;
            s.seed = seed;
            s.resolution = resolution;
            s.train_per_category = train_per_category;
            s.test_normal_per_category = test_normal;
            s.test_anomalous_per_category = test_anomalous;
            s.defect_area_fraction = defect_area_fraction;
            s.noise = noise;
            s.defect_contrast = defect_contrast;
            return index_summary(generate_synthetic(s, out));
        },
        py::arg("out"), py::kw_only(), py::arg("categories") = 5, py::arg("seed") = 0, py::arg("resolution") = 64, py::arg("train_per_category") = 10,
        py::arg("test_normal") = 5, py::arg("test_anomalous") = 5, py::arg("defect_area_fraction") = 0.05, py::arg("noise") = 0.02,
        py::arg("defect_contrast") = 1.0);

    m.def(
        "scan_dataset", [](const std::filesystem::path& root, const std::string& layout) { return index_summary(scan_dataset(root, parse_layout(layout))); },
        py::arg("root"), py::arg("layout") = "mvtec");

    m.def(
        "train",
        [](const std::string& yaml, bool toy, std::optional<std::string> host, std::optional<bool> adv, std::optional<std::uint64_t> seed,
           std::optional<std::string> output, std::optional<std::vector<int>> shots, std::optional<int> runs) {
            const auto cfg = make_config(yaml, toy, host, adv, seed, output, shots, runs);
            py::gil_scoped_release nogil;
            train_all(cfg, prepare_dataset(cfg), worker_count());
            return config_root(cfg).string();
        },
        FSAD_CONFIG_ARGS, "Trains every cell; returns the run root directory.");

    m.def(
        "evaluate",
        [](const std::string& yaml, bool toy, std::optional<std::string> host, std::optional<bool> adv, std::optional<std::uint64_t> seed,
           std::optional<std::string> output, std::optional<std::vector<int>> shots, std::optional<int> runs) {
            const auto cfg = make_config(yaml, toy, host, adv, seed, output, shots, runs);
            std::vector<RunResult> res;
            {
                py::gil_scoped_release nogil;
                res = evaluate_all(cfg, prepare_dataset(cfg), worker_count());
            }
            return run_records(res);
        },
        FSAD_CONFIG_ARGS, "Scores every trained cell; returns one record per (K, seed, category).");

    m.def(
        "build_report",
        [](const std::filesystem::path& results, const std::string& format) {
            if (format != "markdown" && format != "csv") fail(ErrorKind::InvalidInput, "format must be 'markdown' or 'csv'");
            std::string out;
            for (const auto& t : build_report(load_results(results))) out += (format == "csv" ? render_csv(t) : render_markdown(t)) + "\n";
            return out;
        },
        py::arg("results"), py::arg("format") = "markdown");

    m.def(
        "auroc", [](const std::vector<double>& scores, const std::vector<int>& labels) { return auroc(scores, labels); }, py::arg("scores"),
        py::arg("labels"));

    m.def(
        "pixel_auroc",
        [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& maps,
           const std::vector<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>>& masks, std::size_t budget, std::uint64_t seed) {
            if (maps.size() != masks.size()) fail(ErrorKind::ShapeError, "maps and masks differ in count");
            std::vector<AnomalyMap> gm;
            std::vector<Mask> mm;
            for (std::size_t i = 0; i < maps.size(); ++i) {
                const auto& a = maps[i];
                const auto& b = masks[i];
                if (a.ndim() != 2 || b.ndim() != 2 || a.shape(0) != b.shape(0) || a.shape(1) != b.shape(1))
                    fail(ErrorKind::ShapeError, "map and mask " + std::to_string(i) + " must be 2-D with equal shapes");
                const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
                Grid g(h, w);
                g.values.assign(a.data(), a.data() + a.size());
                gm.push_back(std::move(g));
                Mask k{h, w, std::vector<std::uint8_t>(b.data(), b.data() + b.size())};
                for (auto& v : k.cells) v = v != 0;
                mm.push_back(std::move(k));
            }
            return pixel_auroc(gm, mm, budget, seed);
        },
        py::arg("maps"), py::arg("masks"), py::arg("budget") = kPixelBudget, py::arg("seed") = 0);

    m.def(
        "gradcheck",
        [](std::uint64_t seed, bool corrupt, std::vector<int> precisions) {
            GradcheckSuiteOptions opt;
            opt.seed = seed;
            opt.corrupt_gradient = corrupt;
            opt.precisions = std::move(precisions);
            py::list out;
            for (const auto& c : run_gradcheck_suite(opt)) {
                py::dict d;
                d["objective"] = c.objective;
                d["bits"] = c.bits;
                d["max_rel_error"] = c.result.max_rel_error;
                d["tolerance"] = c.tolerance;
                d["coords_checked"] = c.result.coords_checked;
                d["worst_param"] = c.result.worst_param;
                d["passed"] = c.pass();
                out.append(d);
            }
            return out;
        },
        py::arg("seed") = 0, py::arg("corrupt_gradient") = false, py::arg("precisions") = std::vector<int>{64, 32});

    m.def(
        "checkpoint_info",
        [](const std::filesystem::path& path) {
            const Checkpoint ck = load_checkpoint(path);
            py::dict params, disc;
            for (std::size_t i = 0; i < ck.main.size(); ++i) params[py::str(ck.main.name(i))] = ck.main[i].shape;
            for (std::size_t i = 0; i < ck.disc.size(); ++i) disc[py::str(ck.disc.name(i))] = ck.disc[i].shape;
            py::dict d;
            d["host"] = std::string(to_string(ck.model.host));
            d["resolution"] = ck.model.resolution;
            d["meta"] = ck.meta;
            d["params"] = params;
            d["disc_params"] = disc;
            return d;
        },
        py::arg("path"));

    m.def(
        "dump_features",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& dataset, const std::string& layout, bool standardize) {
            const Checkpoint ck = load_checkpoint(checkpoint);
            const auto host = host_from_checkpoint(ck);
            const DatasetIndex index = scan_dataset(dataset, parse_layout(layout));
            return embeddings_csv(dump_embeddings(*host, ck.main, index, {ck.model.resolution, standardize}));
        },
        py::arg("checkpoint"), py::arg("dataset"), py::arg("layout") = "mvtec", py::arg("standardize") = false,
        "Pooled f0 embeddings of every test image as CSV text.");
}
