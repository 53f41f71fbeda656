#pragma once

// Experiment orchestration: (K, run seed, target) cells, training, scoring.
//
// Directory scheme, a pure function of the resolved config and the cell:
//   <output>/runs/<config hash>/config.yaml
//   <output>/runs/<config hash>/K<k>/seed<s>/results.jsonl
//   <output>/runs/<config hash>/K<k>/seed<s>/<target>/{manifest.json,metrics.jsonl,checkpoint.fsad}
//
// Run i of a sweep uses seed = config.seed + i. The run seed drives both the
// support draw and the cell's initialization/training streams.

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fsad/checkpoint.hpp"
#include "fsad/config.hpp"
#include "fsad/evaluation.hpp"

namespace fsad {

struct CellSpec {
    int shots = 0;
    std::uint64_t seed = 0;
    std::string target;
};

std::filesystem::path config_root(const ExperimentConfig& cfg);
std::filesystem::path run_dir(const ExperimentConfig& cfg, int shots, std::uint64_t seed);
std::filesystem::path cell_dir(const ExperimentConfig& cfg, const CellSpec& cell);

// Scans dataset.root, or generates dataset.synthetic under <output>/data.
DatasetIndex prepare_dataset(const ExperimentConfig& cfg);

std::vector<std::uint64_t> run_seeds(const ExperimentConfig& cfg);
std::vector<std::string> target_categories(const ExperimentConfig& cfg, const DatasetIndex& index);
std::vector<CellSpec> enumerate_cells(const ExperimentConfig& cfg, const DatasetIndex& index);

PreprocessConfig preprocess_config(const ExperimentConfig& cfg);

// Worker count from FSAD_WORKERS (default: hardware concurrency, at least 1).
int worker_count();

// Runs fn(0..n-1) on up to `workers` threads. If any call throws, the
// exception of the lowest failing index is rethrown after all calls finish.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

struct CellTraining {
    std::vector<EpochMetrics> metrics;
    Checkpoint checkpoint;
};

// Trains one cell and writes manifest.json, metrics.jsonl and checkpoint.fsad.
CellTraining train_cell(const ExperimentConfig& cfg, const DatasetIndex& index, const CellSpec& cell, std::shared_ptr<ImageCache> cache);

struct ScoredTestSet {
    std::vector<std::string> ids;
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<AnomalyMap> maps;
    std::vector<Mask> masks;  // all-zero for normal images
};

// Siamese host: Gaussian fit on dihedral-augmented support features, then
// Mahalanobis maps. Reconstruction host: parity-masked reconstruction error.
ScoredTestSet score_episode(const HostModel<float>& host, const ParameterSet<float>& params, const Episode& episode, const ScoringConfig& scoring);

// Image and pixel AUROC of one cell from its saved checkpoint.
CategoryResult evaluate_cell(const ExperimentConfig& cfg, const DatasetIndex& index, const CellSpec& cell, std::shared_ptr<ImageCache> cache);

// Whole sweeps. train_all writes config.yaml; evaluate_all writes one
// results.jsonl per (K, seed) and returns the runs.
void train_all(const ExperimentConfig& cfg, const DatasetIndex& index, int workers);
std::vector<RunResult> evaluate_all(const ExperimentConfig& cfg, const DatasetIndex& index, int workers);

// Rebuilds the host and loads its parameters from a checkpoint.
std::unique_ptr<HostModel<float>> host_from_checkpoint(const Checkpoint& ckpt);

// One record per test image of every category: pooled f0 vector.
std::vector<EmbeddingRecord> dump_embeddings(const HostModel<float>& host, const ParameterSet<float>& params, const DatasetIndex& index,
                                             const PreprocessConfig& pre);

}  // namespace fsad
