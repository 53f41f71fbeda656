#pragma once

// Anomaly scoring, AUROC, multi-run aggregation, and feature dumps.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fsad/data.hpp"
#include "fsad/tensor.hpp"

namespace fsad {

// Row-major 2-D score grid (low-res feature grid or R x R anomaly map).
struct Grid {
    int height = 0, width = 0;
    std::vector<double> values;

    Grid() = default;
    Grid(int h, int w, double fill = 0.0) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

using AnomalyMap = Grid;

inline constexpr double kCovShrinkage = 0.01;
inline constexpr double kSmoothingSigma = 4.0;
inline constexpr std::size_t kPixelBudget = 1000000;

// ------------------------------------------------------------------ Gaussian scoring

// The 8 symmetries of the square applied to a [C,H,W] image (H = W):
// rotations by 0/90/180/270 degrees, each with and without a horizontal flip.
std::vector<ImageTensor> dihedral_augment(const ImageTensor& image);

struct GaussianStats {
    int channels = 0, height = 0, width = 0;
    double shrinkage = kCovShrinkage;
    std::vector<Eigen::VectorXd> mean;  // one per position
    std::vector<Eigen::MatrixXd> cov;   // sample covariance + shrinkage * I
};

// Per-position mean and unbiased covariance (n - 1; zero for n = 1) over the
// given feature maps, then cov += shrinkage * I.
GaussianStats fit_support_stats(const std::vector<Tensor<float>>& features, double shrinkage = kCovShrinkage);

// d = sqrt((f - mu)^T cov^-1 (f - mu)) per position.
Grid mahalanobis_map(const GaussianStats& stats, const Tensor<float>& f);

// Sum over channels of squared differences per position.
Grid recon_error_map(const Tensor<float>& z, const Tensor<float>& z_hat);

// Bilinear (half-pixel centers) upsample to R x R, then separable Gaussian
// smoothing (radius ceil(4 sigma), symmetric reflection at the border,
// normalized kernel). sigma <= 0 skips smoothing.
AnomalyMap upsample_map(const Grid& grid, int resolution, double sigma = kSmoothingSigma);

std::vector<double> gaussian_kernel(double sigma);
Grid gaussian_smooth(const Grid& g, double sigma);

// max over pixels; top_k > 0 gives the mean of the k largest values.
double image_score(const AnomalyMap& map, int top_k = 0);

// ------------------------------------------------------------------ AUROC

// Mann-Whitney statistic via midranks: ties credit 1/2.
// Throws UndefinedMetric unless both labels are present.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// All pixels of all maps pooled into one score set. Above `budget` pixels a
// uniform subset is drawn with Rng(seed).split("pixel-subsample").
double pixel_auroc(const std::vector<AnomalyMap>& maps, const std::vector<Mask>& masks, std::size_t budget = kPixelBudget,
                   std::uint64_t seed = 0);

// ------------------------------------------------------------------ results and reports

struct CategoryResult {
    std::string category;
    double image_auc = 0;
    double pixel_auc = 0;
};

struct RunResult {
    std::string method;
    int shots = 0;
    std::uint64_t seed = 0;
    std::vector<CategoryResult> categories;
};

enum class Metric { Image, Pixel };
const char* to_string(Metric m);

struct ReportRow {
    std::string method;
    std::vector<double> percent;  // per-category mean over runs, in percent
    double average = 0;           // mean of `percent`
    int runs = 0;
};

struct ReportTable {
    int shots = 0;
    Metric metric = Metric::Image;
    std::vector<std::string> categories;
    std::vector<ReportRow> rows;
};

// One row: mean over runs per category, then the mean over categories.
// All runs must cover the same category set (SchemaViolation otherwise).
ReportRow aggregate(const std::vector<RunResult>& runs, Metric metric);

// Groups results by (K, method) into one table per (K, metric).
std::vector<ReportTable> build_report(const std::vector<RunResult>& runs);

std::string format_percent(double v);  // one decimal
std::string render_csv(const ReportTable& t);
std::string render_markdown(const ReportTable& t);

// Line-delimited result records: one JSON object per (run, category).
std::string result_records(const RunResult& r);
std::vector<RunResult> parse_result_records(std::istream& in, const std::string& source);
// Reads every *.jsonl file under `dir` (recursively, sorted by path).
std::vector<RunResult> load_results(const std::filesystem::path& dir);

// ------------------------------------------------------------------ embeddings and exports

struct EmbeddingRecord {
    std::string id;
    std::string category;
    int label = 0;
    std::vector<float> values;
};

// Spatial mean of a [C,H,W] map.
std::vector<float> global_pool(const Tensor<float>& f);

// Header id,category,label,e_0..e_{C-1}; floats printed with %.9g.
std::string embeddings_csv(const std::vector<EmbeddingRecord>& records);

// 16-bit grayscale PNG, min-max normalized per map (constant maps -> 0).
void write_anomaly_png(const AnomalyMap& map, const std::filesystem::path& path);

}  // namespace fsad
