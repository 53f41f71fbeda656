#pragma once

// Experiment configuration: YAML file + CLI overrides -> validated, resolved config.
//
// Resolution order: host defaults (standard or toy profile) < config file < CLI
// flags. The discriminator optimizer inherits every field it does not set
// from the resolved model optimizer.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fsad/data.hpp"
#include "fsad/models.hpp"
#include "fsad/trainer.hpp"

namespace fsad {

inline constexpr const char* kSoftwareVersion = "fsad 0.1.0";

struct ScoringConfig {
    double shrinkage = 0.01;
    double sigma = 4.0;
    int top_k = 0;  // 0 = max
    std::size_t pixel_budget = 1000000;
    bool export_maps = false;
};

struct DatasetConfig {
    std::string root;                       // empty: generate `synthetic` under <output>/data
    Layout layout = Layout::MVTec;
    std::optional<SyntheticSpec> synthetic;
};

struct ExperimentConfig {
    std::string profile = "standard";  // or "toy"
    bool adversarial = true;
    std::vector<int> shots{2, 4, 8};
    int runs = 10;
    std::uint64_t seed = 0;
    int epochs = 50;
    bool standardize = false;
    std::vector<std::string> targets;  // empty = every category
    int checkpoint_every = 0;          // 0 = only at the end
    std::string output = "out";
    ModelConfig model;                 // model.host selects the host; model.resolution is R
    TrainerConfig trainer;
    ScoringConfig scoring;
    DatasetConfig dataset;

    Host host() const { return model.host; }
    int resolution() const { return model.resolution; }
    std::string method() const;  // e.g. "siamese" or "siamese+adv"
    void validate() const;
};

struct ConfigOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
    bool toy = false;
    std::optional<bool> adversarial;
    std::optional<Host> host;
    std::optional<std::vector<int>> shots;
    std::optional<int> runs;
};

// Paper-faithful defaults for a host (standard profile) or the toy profile.
ExperimentConfig default_config(Host host, bool toy);

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path, const ConfigOverrides& overrides = {});
ExperimentConfig parse_config(const std::string& yaml_text, const ConfigOverrides& overrides = {}, const std::string& source = "<config>");

// Canonical YAML for the resolved config; reloading it yields the same config.
std::string to_yaml(const ExperimentConfig& cfg);

// Hash over everything that affects a single cell (excludes shots, runs,
// seed, targets, output directory and map export), 12 hex chars of SHA-256.
std::string config_hash(const ExperimentConfig& cfg);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

std::vector<int> parse_int_list(const std::string& s);

}  // namespace fsad
