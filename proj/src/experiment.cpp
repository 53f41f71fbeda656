#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "fsad/experiment.hpp"

namespace fs = std::filesystem;

namespace fsad {

fs::path config_root(const ExperimentConfig& cfg) { return fs::path(cfg.output) / "runs" / config_hash(cfg); }

fs::path run_dir(const ExperimentConfig& cfg, int shots, std::uint64_t seed) {
    return config_root(cfg) / ("K" + std::to_string(shots)) / ("seed" + std::to_string(seed));
}

fs::path cell_dir(const ExperimentConfig& cfg, const CellSpec& cell) { return run_dir(cfg, cell.shots, cell.seed) / cell.target; }

namespace {

std::string synthetic_key(const SyntheticSpec& s) {
    std::ostringstream os;
    os.precision(17);
    os << s.n_categories << ' ' << s.train_per_category << ' ' << s.test_normal_per_category << ' ' << s.test_anomalous_per_category << ' ' << s.resolution
       << ' ' << s.defect_area_fraction << ' ' << s.noise << ' ' << s.defect_contrast << ' ' << s.seed;
    return sha256_hex(os.str()).substr(0, 12);
}

void write_text(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) fail(ErrorKind::IoError, "cannot write " + tmp);
    }
    fs::rename(tmp, path);
}

std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string cell_label(const CellSpec& c) { return "K=" + std::to_string(c.shots) + " seed=" + std::to_string(c.seed) + " target=" + c.target; }

// Re-raises an error with the offending cell named, keeping its kind.
[[noreturn]] void rethrow_for_cell(const Error& e, const CellSpec& c) { fail(e.kind(), "[" + cell_label(c) + "] " + e.message()); }

Rng cell_rng(const CellSpec& c) { return Rng(c.seed).split("cell", static_cast<std::uint64_t>(c.shots)).split(c.target); }

nlohmann::ordered_json metrics_json(const EpochMetrics& m) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["batches"] = m.batches;
    j["L_M"] = m.mean.loss_model;
    j["L_adv"] = m.mean.loss_adv;
    j["L_MT"] = m.mean.loss_total;
    j["L_DT"] = m.mean.loss_disc;
    j["grad_norm_model"] = m.mean.grad_norm_model;
    j["grad_norm_disc"] = m.mean.grad_norm_disc;
    j["update_norm_model"] = m.mean.update_norm_model;
    j["update_norm_disc"] = m.mean.update_norm_disc;
    j["wall_time_s"] = m.wall_time_s;
    return j;
}

std::string sanitize(const std::string& id) {
    std::string s = id;
    for (auto& ch : s)
        if (ch == '/' || ch == '\\' || ch == ' ') ch = '_';
    return s;
}

}  // namespace

DatasetIndex prepare_dataset(const ExperimentConfig& cfg) {
    if (!cfg.dataset.root.empty()) return scan_dataset(cfg.dataset.root, cfg.dataset.layout);
    const auto& spec = *cfg.dataset.synthetic;
    const fs::path dir = fs::path(cfg.output) / "data" / synthetic_key(spec);
    if (fs::is_directory(dir) && !fs::is_empty(dir)) return scan_dataset(dir, Layout::MVTec);
    return generate_synthetic(spec, dir);
}

std::vector<std::uint64_t> run_seeds(const ExperimentConfig& cfg) {
    std::vector<std::uint64_t> s;
    for (int i = 0; i < cfg.runs; ++i) s.push_back(cfg.seed + static_cast<std::uint64_t>(i));
    return s;
}

std::vector<std::string> target_categories(const ExperimentConfig& cfg, const DatasetIndex& index) {
    if (cfg.targets.empty()) return index.category_names();
    for (const auto& t : cfg.targets) index.category(t);  // NotFound on unknown names
    return cfg.targets;
}

std::vector<CellSpec> enumerate_cells(const ExperimentConfig& cfg, const DatasetIndex& index) {
    std::vector<CellSpec> cells;
    for (int k : cfg.shots)
        for (auto seed : run_seeds(cfg))
            for (const auto& t : target_categories(cfg, index)) cells.push_back({k, seed, t});
    return cells;
}

PreprocessConfig preprocess_config(const ExperimentConfig& cfg) { return {cfg.model.resolution, cfg.standardize}; }

int worker_count() {
    if (const char* env = std::getenv("FSAD_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) fail(ErrorKind::ConfigError, "FSAD_WORKERS must be a positive integer");
        return static_cast<int>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (threads <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

CellTraining train_cell(const ExperimentConfig& cfg, const DatasetIndex& index, const CellSpec& cell, std::shared_ptr<ImageCache> cache) {
    try {
        const fs::path dir = cell_dir(cfg, cell);
        const Episode ep = build_episode(index, {cell.target, cell.shots, cell.seed}, preprocess_config(cfg), cache);

        nlohmann::ordered_json manifest;
        manifest["software"] = kSoftwareVersion;
        manifest["created_at"] = utc_timestamp();
        manifest["config_hash"] = config_hash(cfg);
        manifest["config"] = to_yaml(cfg);
        manifest["cell"] = {{"K", cell.shots}, {"seed", cell.seed}, {"target", cell.target}, {"method", cfg.method()}};
        manifest["support"] = ep.support_ids;
        nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
        for (const auto& id : ep.support_ids) inputs[id] = sha256_file(index.root / id);
        manifest["support_sha256"] = inputs;
        std::string pool_listing;
        for (const auto& c : ep.train_pool.categories)
            for (const auto& id : c.images) pool_listing += id + '\n';
        manifest["train_pool_sha256"] = sha256_hex(pool_listing);
        write_text(dir / "manifest.json", manifest.dump(2) + '\n');

        const Rng rng = cell_rng(cell);
        auto host = make_host<float>(cfg.model, rng.split("model-init"));
        Discriminator<float> disc(cfg.model, rng.split("disc-init"));
        TrainerConfig tc = cfg.trainer;
        tc.adversarial = cfg.adversarial;
        AdversarialTrainer<float> trainer(*host, disc, tc);
        TrainState<float> state = trainer.initial_state(rng.split("train"));
        const PairSampler<float> sampler = [&ep](Rng& r) {
            auto p = sample_pair(ep.train_pool, r);
            return ImagePairT<float>{std::move(p.i0), std::move(p.i1)};
        };

        CellTraining out;
        auto snapshot = [&](int epoch) {
            Checkpoint ck;
            ck.model = host->config();
            ck.meta["epoch"] = std::to_string(epoch);
            ck.meta["method"] = cfg.method();
            ck.main = state.model;
            ck.disc = state.disc;
            return ck;
        };
        std::string metrics;
        for (int e = 0; e < cfg.epochs; ++e) {
            out.metrics.push_back(trainer.train_epoch(state, sampler));
            metrics += metrics_json(out.metrics.back()).dump() + '\n';
            if (cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0 && e + 1 < cfg.epochs) {
                char name[40];
                std::snprintf(name, sizeof name, "checkpoint_e%04d.fsad", e + 1);
                save_checkpoint(snapshot(e + 1), dir / name);
            }
        }
        if (!state.model.all_finite() || !state.disc.all_finite()) fail(ErrorKind::NumericalError, "parameters became non-finite");
        write_text(dir / "metrics.jsonl", metrics);
        out.checkpoint = snapshot(cfg.epochs);
        save_checkpoint(out.checkpoint, dir / "checkpoint.fsad");
        return out;
    } catch (const Error& e) {
        rethrow_for_cell(e, cell);
    }
}

std::unique_ptr<HostModel<float>> host_from_checkpoint(const Checkpoint& ckpt) {
    auto host = make_host<float>(ckpt.model, Rng(0));
    const auto& ref = host->initial_params();
    if (ref.names() != ckpt.main.names()) fail(ErrorKind::SchemaViolation, "checkpoint parameters do not match the model architecture");
    for (std::size_t i = 0; i < ref.size(); ++i)
        if (ref[i].shape != ckpt.main[i].shape) fail(ErrorKind::SchemaViolation, "checkpoint parameter '" + ref.name(i) + "' has the wrong shape");
    return host;
}

ScoredTestSet score_episode(const HostModel<float>& host, const ParameterSet<float>& params, const Episode& episode, const ScoringConfig& scoring) {
    const int R = host.config().resolution;
    const Binding<float> p(params, false);
    ScoredTestSet out;
    std::function<Grid(const ImageTensor&)> grid_of;
    GaussianStats stats;
    if (host.host() == Host::Siamese) {
        const auto& model = static_cast<const SiameseModel<float>&>(host);
        std::vector<Tensor<float>> feats;
        for (const auto& img : episode.support)
            for (const auto& aug : dihedral_augment(img)) feats.push_back(model.features(p, aug));
        stats = fit_support_stats(feats, scoring.shrinkage);
        grid_of = [&](const ImageTensor& img) { return mahalanobis_map(stats, model.features(p, img)); };
    } else {
        const auto& model = static_cast<const MaskedReconModel<float>&>(host);
        grid_of = [&](const ImageTensor& img) {
            auto [z, z_hat] = model.reconstruct_for_scoring(p, img);
            return recon_error_map(z, z_hat);
        };
    }
    for (const auto& t : episode.test) {
        AnomalyMap map = upsample_map(grid_of(t.image), R, scoring.sigma);
        for (double v : map.values)
            if (!std::isfinite(v)) fail(ErrorKind::NumericalError, "non-finite anomaly score for " + t.id);
        out.ids.push_back(t.id);
        out.scores.push_back(image_score(map, scoring.top_k));
        out.labels.push_back(t.label == Label::Anomalous ? 1 : 0);
        out.masks.push_back(t.mask ? *t.mask : Mask{R, R, std::vector<std::uint8_t>(static_cast<std::size_t>(R) * R, 0)});
        out.maps.push_back(std::move(map));
    }
    return out;
}

CategoryResult evaluate_cell(const ExperimentConfig& cfg, const DatasetIndex& index, const CellSpec& cell, std::shared_ptr<ImageCache> cache) {
    try {
        const fs::path dir = cell_dir(cfg, cell);
        if (!fs::is_regular_file(dir / "checkpoint.fsad")) fail(ErrorKind::NotFound, "missing checkpoint " + (dir / "checkpoint.fsad").string());
        const Checkpoint ck = load_checkpoint(dir / "checkpoint.fsad");
        auto host = host_from_checkpoint(ck);
        const Episode ep = build_episode(index, {cell.target, cell.shots, cell.seed}, preprocess_config(cfg), cache);
        const ScoredTestSet s = score_episode(*host, ck.main, ep, cfg.scoring);
        CategoryResult r;
        r.category = cell.target;
        try {
            r.image_auc = auroc(s.scores, s.labels);
            r.pixel_auc = pixel_auroc(s.maps, s.masks, cfg.scoring.pixel_budget, cell.seed);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::UndefinedMetric) fail(ErrorKind::UndefinedMetric, "category '" + cell.target + "': " + e.message());
            throw;
        }
        if (cfg.scoring.export_maps) {
            for (std::size_t i = 0; i < s.ids.size(); ++i) write_anomaly_png(s.maps[i], dir / "maps" / (sanitize(s.ids[i]) + ".png"));
        }
        return r;
    } catch (const Error& e) {
        rethrow_for_cell(e, cell);
    }
}

void train_all(const ExperimentConfig& cfg, const DatasetIndex& index, int workers) {
    const auto cells = enumerate_cells(cfg, index);
    write_text(config_root(cfg) / "config.yaml", to_yaml(cfg));
    auto cache = std::make_shared<ImageCache>(preprocess_config(cfg));
    parallel_for(cells.size(), workers, [&](std::size_t i) { train_cell(cfg, index, cells[i], cache); });
}

std::vector<RunResult> evaluate_all(const ExperimentConfig& cfg, const DatasetIndex& index, int workers) {
    const auto cells = enumerate_cells(cfg, index);
    auto cache = std::make_shared<ImageCache>(preprocess_config(cfg));
    std::vector<CategoryResult> results(cells.size());
    parallel_for(cells.size(), workers, [&](std::size_t i) { results[i] = evaluate_cell(cfg, index, cells[i], cache); });

    std::vector<RunResult> runs;
    std::size_t i = 0;
    const auto targets = target_categories(cfg, index);
    for (int k : cfg.shots)
        for (auto seed : run_seeds(cfg)) {
            RunResult r;
            r.method = cfg.method();
            r.shots = k;
            r.seed = seed;
            for (std::size_t t = 0; t < targets.size(); ++t) r.categories.push_back(results[i++]);
            write_text(run_dir(cfg, k, seed) / "results.jsonl", result_records(r));
            runs.push_back(std::move(r));
        }
    return runs;
}

std::vector<EmbeddingRecord> dump_embeddings(const HostModel<float>& host, const ParameterSet<float>& params, const DatasetIndex& index,
                                             const PreprocessConfig& pre) {
    const Binding<float> p(params, false);
    std::vector<EmbeddingRecord> out;
    for (const auto& c : index.categories)
        for (const auto& t : c.test_items) {
            const ImageTensor img = load_image(index.root / t.image, pre);
            out.push_back({t.image, c.name, t.label == Label::Anomalous ? 1 : 0, global_pool(host.embed(p, img))});
        }
    return out;
}

}  // namespace fsad
