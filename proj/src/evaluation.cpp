#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Cholesky>
#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "fsad/evaluation.hpp"

namespace fsad {

// ------------------------------------------------------------------ Gaussian scoring

std::vector<ImageTensor> dihedral_augment(const ImageTensor& image) {
    if (image.shape.size() != 3 || image.shape[1] != image.shape[2]) fail(ErrorKind::ShapeError, "dihedral_augment expects a square [C,H,W] image");
    const int C = image.shape[0], N = image.shape[1];
    std::vector<ImageTensor> out;
    out.reserve(8);
    for (int flip = 0; flip < 2; ++flip)
        for (int rot = 0; rot < 4; ++rot) {
            ImageTensor t(image.shape);
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < N; ++y)
                    for (int x = 0; x < N; ++x) {
                        int sy = y, sx = flip ? N - 1 - x : x;
                        for (int r = 0; r < rot; ++r) {  // one quarter turn: (y, x) <- (x, N-1-y)
                            const int ny = sx, nx = N - 1 - sy;
                            sy = ny;
                            sx = nx;
                        }
                        t.at(c, y, x) = image.at(c, sy, sx);
                    }
            out.push_back(std::move(t));
        }
    return out;
}

GaussianStats fit_support_stats(const std::vector<Tensor<float>>& features, double shrinkage) {
    if (features.empty()) fail(ErrorKind::InvalidInput, "fit_support_stats: no support features");
    if (!(shrinkage >= 0.0)) fail(ErrorKind::ConfigError, "covariance shrinkage must be non-negative");
    const Shape& shape = features[0].shape;
    if (shape.size() != 3) fail(ErrorKind::ShapeError, "support features must be [C,H,W]");
    for (const auto& f : features) require_same_shape(f, features[0], "support features");

    GaussianStats s;
    s.channels = shape[0];
    s.height = shape[1];
    s.width = shape[2];
    s.shrinkage = shrinkage;
    const int C = s.channels, P = s.height * s.width;
    const auto n = static_cast<Eigen::Index>(features.size());
    Eigen::MatrixXd samples(C, n);
    for (int pos = 0; pos < P; ++pos) {
        for (Eigen::Index i = 0; i < n; ++i)
            for (int c = 0; c < C; ++c) samples(c, i) = features[static_cast<std::size_t>(i)].data[static_cast<std::size_t>(c) * P + pos];
        Eigen::VectorXd mu = samples.rowwise().mean();
        Eigen::MatrixXd centered = samples.colwise() - mu;
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(C, C);
        if (n > 1) cov = (centered * centered.transpose()) / static_cast<double>(n - 1);
        cov = 0.5 * (cov + cov.transpose());
        cov.diagonal().array() += shrinkage;
        s.mean.push_back(std::move(mu));
        s.cov.push_back(std::move(cov));
    }
    return s;
}

Grid mahalanobis_map(const GaussianStats& stats, const Tensor<float>& f) {
    if (f.shape != Shape{stats.channels, stats.height, stats.width}) {
        fail(ErrorKind::ShapeError, "mahalanobis_map: feature " + shape_str(f.shape) + " vs stats " + shape_str({stats.channels, stats.height, stats.width}));
    }
    const int C = stats.channels, P = stats.height * stats.width;
    Grid g(stats.height, stats.width);
    Eigen::VectorXd d(C);
    for (int pos = 0; pos < P; ++pos) {
        Eigen::LLT<Eigen::MatrixXd> llt(stats.cov[static_cast<std::size_t>(pos)]);
        if (llt.info() != Eigen::Success) fail(ErrorKind::NumericalError, "covariance at position " + std::to_string(pos) + " is not positive definite");
        for (int c = 0; c < C; ++c) d(c) = static_cast<double>(f.data[static_cast<std::size_t>(c) * P + pos]) - stats.mean[static_cast<std::size_t>(pos)](c);
        const Eigen::VectorXd y = llt.matrixL().solve(d);
        g.values[static_cast<std::size_t>(pos)] = std::sqrt(y.squaredNorm());
    }
    return g;
}

Grid recon_error_map(const Tensor<float>& z, const Tensor<float>& z_hat) {
    require_same_shape(z, z_hat, "recon_error_map");
    if (z.shape.size() != 3) fail(ErrorKind::ShapeError, "recon_error_map expects [C,H,W]");
    const int C = z.shape[0], H = z.shape[1], W = z.shape[2];
    Grid g(H, W);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double d = static_cast<double>(z.at(c, y, x)) - static_cast<double>(z_hat.at(c, y, x));
                g.at(y, x) += d * d;
            }
    return g;
}

std::vector<double> gaussian_kernel(double sigma) {
    const int r = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0;
    for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= sum;
    return k;
}

namespace {

// Symmetric (half-sample) reflection: ... c b a | a b c ... | c b a ...
int reflect(int i, int n) {
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

}  // namespace

Grid gaussian_smooth(const Grid& g, double sigma) {
    if (sigma <= 0) return g;
    const auto k = gaussian_kernel(sigma);
    const int r = static_cast<int>(k.size() / 2);
    Grid tmp(g.height, g.width), out(g.height, g.width);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
            double s = 0;
            for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * g.at(y, reflect(x + i, g.width));
            tmp.at(y, x) = s;
        }
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
            double s = 0;
            for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp.at(reflect(y + i, g.height), x);
            out.at(y, x) = s;
        }
    return out;
}

AnomalyMap upsample_map(const Grid& grid, int resolution, double sigma) {
    if (grid.height <= 0 || grid.width <= 0) fail(ErrorKind::ShapeError, "upsample_map: empty grid");
    if (resolution <= 0) fail(ErrorKind::ConfigError, "upsample_map: resolution must be positive");
    const int H = grid.height, W = grid.width, R = resolution;
    auto axis = [R](int n, int i, int& i0, int& i1, double& w) {
        const double s = std::clamp((i + 0.5) * n / R - 0.5, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<int>(std::floor(s));
        i1 = std::min(i0 + 1, n - 1);
        w = s - i0;
    };
    Grid up(R, R);
    for (int y = 0; y < R; ++y) {
        int y0, y1;
        double wy;
        axis(H, y, y0, y1, wy);
        for (int x = 0; x < R; ++x) {
            int x0, x1;
            double wx;
            axis(W, x, x0, x1, wx);
            const double top = (1 - wx) * grid.at(y0, x0) + wx * grid.at(y0, x1);
            const double bot = (1 - wx) * grid.at(y1, x0) + wx * grid.at(y1, x1);
            up.at(y, x) = (1 - wy) * top + wy * bot;
        }
    }
    return gaussian_smooth(up, sigma);
}

double image_score(const AnomalyMap& map, int top_k) {
    if (map.values.empty()) fail(ErrorKind::InvalidInput, "image_score: empty map");
    if (top_k <= 0) return *std::max_element(map.values.begin(), map.values.end());
    std::vector<double> v = map.values;
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(top_k), v.size());
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), std::greater<>());
    return std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / static_cast<double>(k);
}

// ------------------------------------------------------------------ AUROC

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) fail(ErrorKind::ShapeError, "auroc: score and label counts differ");
    std::size_t n_pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) fail(ErrorKind::InvalidInput, "auroc: labels must be 0 or 1");
        n_pos += static_cast<std::size_t>(l);
    }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) fail(ErrorKind::UndefinedMetric, "AUROC needs both normal and anomalous samples");
    for (double s : scores)
        if (std::isnan(s)) fail(ErrorKind::NumericalError, "auroc: NaN score");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Sum of positive midranks (1-based), tie groups share their mean rank.
    double rank_sum = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]] == 1) rank_sum += mid;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum - np * (np + 1) / 2) / (np * nn);
}

double pixel_auroc(const std::vector<AnomalyMap>& maps, const std::vector<Mask>& masks, std::size_t budget, std::uint64_t seed) {
    if (maps.size() != masks.size()) fail(ErrorKind::ShapeError, "pixel_auroc: map and mask counts differ");
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        if (maps[i].height != masks[i].height || maps[i].width != masks[i].width) fail(ErrorKind::ShapeError, "pixel_auroc: map/mask size mismatch");
        scores.insert(scores.end(), maps[i].values.begin(), maps[i].values.end());
        for (auto c : masks[i].cells) labels.push_back(c ? 1 : 0);
    }
    if (budget > 0 && scores.size() > budget) {
        Rng rng = Rng(seed).split("pixel-subsample");
        auto idx = rng.choose(scores.size(), budget);
        std::sort(idx.begin(), idx.end());
        std::vector<double> s;
        std::vector<int> l;
        s.reserve(budget);
        l.reserve(budget);
        for (auto i : idx) {
            s.push_back(scores[i]);
            l.push_back(labels[i]);
        }
        scores.swap(s);
        labels.swap(l);
    }
    return auroc(scores, labels);
}

// ------------------------------------------------------------------ results and reports

const char* to_string(Metric m) { return m == Metric::Image ? "image" : "pixel"; }

ReportRow aggregate(const std::vector<RunResult>& runs, Metric metric) {
    if (runs.empty()) fail(ErrorKind::InvalidInput, "aggregate: no runs");
    std::vector<std::string> cats;
    for (const auto& c : runs[0].categories) cats.push_back(c.category);
    if (cats.empty()) fail(ErrorKind::SchemaViolation, "aggregate: run without categories");
    ReportRow row;
    row.method = runs[0].method;
    row.runs = static_cast<int>(runs.size());
    row.percent.assign(cats.size(), 0.0);
    for (const auto& r : runs) {
        if (r.categories.size() != cats.size()) fail(ErrorKind::SchemaViolation, "aggregate: runs cover different category sets");
        for (std::size_t i = 0; i < cats.size(); ++i) {
            if (r.categories[i].category != cats[i]) fail(ErrorKind::SchemaViolation, "aggregate: runs cover different category sets");
            const double v = metric == Metric::Image ? r.categories[i].image_auc : r.categories[i].pixel_auc;
            row.percent[i] += 100.0 * v;
        }
    }
    for (auto& v : row.percent) v /= static_cast<double>(runs.size());
    row.average = std::accumulate(row.percent.begin(), row.percent.end(), 0.0) / static_cast<double>(row.percent.size());
    return row;
}

std::vector<ReportTable> build_report(const std::vector<RunResult>& runs) {
    if (runs.empty()) fail(ErrorKind::InvalidInput, "no results to report");
    std::map<int, std::map<std::string, std::vector<RunResult>>> grouped;
    for (const auto& r : runs) {
        RunResult sorted = r;
        std::sort(sorted.categories.begin(), sorted.categories.end(), [](const auto& a, const auto& b) { return a.category < b.category; });
        grouped[r.shots][r.method].push_back(std::move(sorted));
    }
    std::vector<ReportTable> tables;
    for (const auto& [shots, methods] : grouped) {
        for (Metric metric : {Metric::Image, Metric::Pixel}) {
            ReportTable t;
            t.shots = shots;
            t.metric = metric;
            for (const auto& [method, rs] : methods) {
                std::vector<std::string> cats;
                for (const auto& c : rs[0].categories) cats.push_back(c.category);
                if (t.categories.empty()) t.categories = cats;
                else if (t.categories != cats) fail(ErrorKind::SchemaViolation, "methods at K=" + std::to_string(shots) + " cover different category sets");
                t.rows.push_back(aggregate(rs, metric));
            }
            tables.push_back(std::move(t));
        }
    }
    return tables;
}

std::string format_percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

std::string render_csv(const ReportTable& t) {
    std::ostringstream os;
    os << "method";
    for (const auto& c : t.categories) os << ',' << c;
    os << ",Average\n";
    for (const auto& r : t.rows) {
        os << r.method;
        for (double v : r.percent) os << ',' << format_percent(v);
        os << ',' << format_percent(r.average) << '\n';
    }
    return os.str();
}

std::string render_markdown(const ReportTable& t) {
    std::ostringstream os;
    os << "### K = " << t.shots << ", " << to_string(t.metric) << "-level AUROC (%)\n\n| Method |";
    for (const auto& c : t.categories) os << ' ' << c << " |";
    os << " Average |\n|---|";
    for (std::size_t i = 0; i <= t.categories.size(); ++i) os << "---:|";
    os << '\n';
    for (const auto& r : t.rows) {
        os << "| " << r.method << " |";
        for (double v : r.percent) os << ' ' << format_percent(v) << " |";
        os << ' ' << format_percent(r.average) << " |\n";
    }
    return os.str();
}

std::string result_records(const RunResult& r) {
    std::string out;
    for (const auto& c : r.categories) {
        nlohmann::ordered_json j;
        j["method"] = r.method;
        j["seed"] = r.seed;
        j["K"] = r.shots;
        j["category"] = c.category;
        j["image_auc"] = c.image_auc;
        j["pixel_auc"] = c.pixel_auc;
        out += j.dump() + '\n';
    }
    return out;
}

std::vector<RunResult> parse_result_records(std::istream& in, const std::string& source) {
    std::map<std::tuple<std::string, int, std::uint64_t>, RunResult> runs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            RunResult key;
            key.method = j.value("method", std::string("baseline"));
            key.shots = j.at("K").get<int>();
            key.seed = j.at("seed").get<std::uint64_t>();
            CategoryResult c{j.at("category").get<std::string>(), j.at("image_auc").get<double>(), j.at("pixel_auc").get<double>()};
            auto& r = runs[{key.method, key.shots, key.seed}];
            if (r.categories.empty()) {
                r.method = key.method;
                r.shots = key.shots;
                r.seed = key.seed;
            }
            r.categories.push_back(std::move(c));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::SchemaViolation, source + ":" + std::to_string(lineno) + ": malformed result record: " + e.what());
        }
    }
    std::vector<RunResult> out;
    for (auto& [k, r] : runs) out.push_back(std::move(r));
    return out;
}

std::vector<RunResult> load_results(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir)) fail(ErrorKind::NotFound, "results directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_regular_file(dir)) {
        files.push_back(dir);
    } else {
        for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".jsonl" && e.path().filename() != "metrics.jsonl") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::stringstream all;
    for (const auto& f : files) {
        std::ifstream in(f);
        all << in.rdbuf() << '\n';
    }
    auto runs = parse_result_records(all, dir.string());
    if (runs.empty()) fail(ErrorKind::InvalidInput, "no result records under " + dir.string());
    return runs;
}

// ------------------------------------------------------------------ embeddings and exports

std::vector<float> global_pool(const Tensor<float>& f) {
    if (f.shape.size() != 3) fail(ErrorKind::ShapeError, "global_pool expects [C,H,W]");
    const int C = f.shape[0];
    const std::size_t P = static_cast<std::size_t>(f.shape[1]) * f.shape[2];
    std::vector<float> out(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        double s = 0;
        for (std::size_t i = 0; i < P; ++i) s += f.data[c * P + i];
        out[static_cast<std::size_t>(c)] = static_cast<float>(s / static_cast<double>(P));
    }
    return out;
}

std::string embeddings_csv(const std::vector<EmbeddingRecord>& records) {
    std::ostringstream os;
    os << "id,category,label";
    const std::size_t dims = records.empty() ? 0 : records[0].values.size();
    for (std::size_t i = 0; i < dims; ++i) os << ",e_" << i;
    os << '\n';
    char buf[32];
    for (const auto& r : records) {
        if (r.values.size() != dims) fail(ErrorKind::ShapeError, "embedding records differ in dimension");
        os << r.id << ',' << r.category << ',' << r.label;
        for (float v : r.values) {
            std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(v));
            os << buf;
        }
        os << '\n';
    }
    return os.str();
}

void write_anomaly_png(const AnomalyMap& map, const std::filesystem::path& path) {
    if (map.values.empty()) fail(ErrorKind::InvalidInput, "write_anomaly_png: empty map");
    const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
    const double range = *hi - *lo;
    cv::Mat img(map.height, map.width, CV_16UC1);
    for (int y = 0; y < map.height; ++y)
        for (int x = 0; x < map.width; ++x) {
            const double v = range > 0 ? (map.at(y, x) - *lo) / range : 0.0;
            img.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(std::lround(v * 65535.0));
        }
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) fail(ErrorKind::IoError, "cannot write " + path.string());
}

}  // namespace fsad
