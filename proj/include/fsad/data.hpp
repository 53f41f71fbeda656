#pragma once

// Dataset ingestion, synthetic dataset generation, and leave-one-out episodes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fsad/rng.hpp"
#include "fsad/tensor.hpp"

namespace fsad {

using ImageTensor = Tensor<float>;  // [3, R, R], raw values in [0,1]

enum class Layout { MVTec, DAGM };

Layout parse_layout(const std::string& s);
const char* to_string(Layout l);

enum class Label { Normal = 0, Anomalous = 1 };

struct TestItem {
    std::string image;                // path relative to the dataset root
    Label label = Label::Normal;
    std::optional<std::string> mask;  // present iff anomalous
};

struct CategoryIndex {
    std::string name;
    std::vector<std::string> train_normals;  // relative paths, sorted
    std::vector<TestItem> test_items;        // sorted by image path
};

struct DatasetIndex {
    std::filesystem::path root;
    std::vector<CategoryIndex> categories;  // sorted by name

    const CategoryIndex& category(const std::string& name) const;
    std::vector<std::string> category_names() const;
    // Throws SchemaViolation on the first broken invariant.
    void validate() const;
};

// mvtec: <root>/<cat>/train/good/*.png, <root>/<cat>/test/<defect>/*.png,
//        <root>/<cat>/ground_truth/<defect>/<stem>_mask.png
// dagm:  <root>/<Class>/{Train,Test}/*.png, masks in <split>/Label/<stem>_label.png;
//        labeled Train images are excluded, labeled Test images are anomalous.
DatasetIndex scan_dataset(const std::filesystem::path& root, Layout layout);

// ------------------------------------------------------------------ images

struct RawImage {
    int height = 0, width = 0, channels = 0;
    std::vector<std::uint8_t> pixels;  // HWC, RGB order for 3 channels
};

RawImage decode_image(const std::filesystem::path& path);

struct PreprocessConfig {
    int resolution = 224;
    bool standardize = false;  // (x - mean) / std with the ImageNet constants below
};

inline constexpr float kChannelMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kChannelStd[3] = {0.229f, 0.224f, 0.225f};

// Bilinear resize (half-pixel centers, edge clamp) of [C,H,W] floats.
Tensor<float> resize_bilinear(const Tensor<float>& src, int out_h, int out_w);

// Bytes -> [3,R,R] floats in [0,1]; grayscale is replicated to 3 channels.
ImageTensor preprocess(const RawImage& raw, const PreprocessConfig& cfg);
ImageTensor load_image(const std::filesystem::path& path, const PreprocessConfig& cfg);

// Binary mask at R x R by nearest-neighbor resampling (nonzero -> 1).
struct Mask {
    int height = 0, width = 0;
    std::vector<std::uint8_t> cells;
};
Mask resize_mask_nearest(const RawImage& raw, int out_h, int out_w);
Mask load_mask(const std::filesystem::path& path, int resolution);

// ------------------------------------------------------------------ synthetic

struct SyntheticSpec {
    int n_categories = 5;
    int train_per_category = 10;
    int test_normal_per_category = 5;
    int test_anomalous_per_category = 5;
    int resolution = 64;
    double defect_area_fraction = 0.05;
    double noise = 0.02;
    double defect_contrast = 1.0;  // stain opacity: 1 = saturated off-palette color; smaller = subtler
    std::uint64_t seed = 0;

    void validate() const;
};

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

// Writes an mvtec-style tree under `out` and returns its index.
DatasetIndex generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out);

// ------------------------------------------------------------------ episodes

struct EpisodeSpec {
    std::string target_category;
    int shots = 2;
    std::uint64_t seed = 0;
};

// Thread-safe preprocessing cache keyed by absolute path.
class ImageCache {
public:
    explicit ImageCache(PreprocessConfig cfg) : cfg_(cfg) {}
    std::shared_ptr<const ImageTensor> get(const std::filesystem::path& path);
    const PreprocessConfig& config() const { return cfg_; }

private:
    PreprocessConfig cfg_;
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<const ImageTensor>> cache_;
};

struct PoolCategory {
    std::string name;
    std::vector<std::string> images;  // relative paths
};

// All normal training images of the non-target categories.
struct TrainPool {
    std::filesystem::path root;
    std::vector<PoolCategory> categories;
    std::shared_ptr<ImageCache> cache;

    std::size_t size() const;
    bool contains_category(const std::string& name) const;
    ImageTensor load(const std::string& rel) const;
};

struct EpisodeTestItem {
    std::string id;
    Label label = Label::Normal;
    ImageTensor image;
    std::optional<Mask> mask;  // resized to the anomaly-map resolution
};

struct Episode {
    std::string target_category;
    std::vector<std::string> support_ids;
    std::vector<ImageTensor> support;
    TrainPool train_pool;
    std::vector<EpisodeTestItem> test;
};

// Support: partial Fisher-Yates over the target's sorted train_normals using
// Rng(spec.seed).split("support").
Episode build_episode(const DatasetIndex& index, const EpisodeSpec& spec, const PreprocessConfig& cfg,
                      std::shared_ptr<ImageCache> cache = nullptr);

struct ImagePair {
    std::string category;
    std::string id0, id1;
    ImageTensor i0, i1;
};

// One category uniformly (rng.below), then two distinct images (rng.choose(n, 2)).
ImagePair sample_pair(const TrainPool& pool, Rng& rng);

}  // namespace fsad
