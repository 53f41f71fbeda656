#include <cmath>
#include <cstdio>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <yaml-cpp/yaml.h>

#include "fsad/data.hpp"

namespace fs = std::filesystem;

namespace fsad {

void SyntheticSpec::validate() const {
    if (n_categories < 2) fail(ErrorKind::InvalidSpec, "synthetic datasets need at least 2 categories");
    if (train_per_category < 1) fail(ErrorKind::InvalidSpec, "train_per_category must be at least 1");
    if (test_normal_per_category < 0 || test_anomalous_per_category < 0) fail(ErrorKind::InvalidSpec, "test counts must be non-negative");
    if (test_normal_per_category + test_anomalous_per_category < 1) fail(ErrorKind::InvalidSpec, "test split would be empty");
    if (resolution < 8) fail(ErrorKind::InvalidSpec, "resolution must be at least 8");
    if (!(defect_area_fraction >= 0.0 && defect_area_fraction < 1.0)) fail(ErrorKind::InvalidSpec, "defect_area_fraction must lie in [0,1)");
    if (!(noise >= 0.0)) fail(ErrorKind::InvalidSpec, "noise must be non-negative");
    if (!(defect_contrast > 0.0 && defect_contrast <= 1.0)) fail(ErrorKind::InvalidSpec, "defect_contrast must lie in (0,1]");
    const int side = static_cast<int>(std::lround(std::sqrt(defect_area_fraction) * resolution));
    if (test_anomalous_per_category > 0 && side < 1) fail(ErrorKind::InvalidSpec, "defect area rounds to zero pixels");
}

SyntheticSpec load_synthetic_spec(const fs::path& path) {
    if (!fs::is_regular_file(path)) fail(ErrorKind::NotFound, "synthetic spec not found: " + path.string());
    YAML::Node root;
    try {
        root = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
        fail(ErrorKind::ConfigError, "cannot parse " + path.string() + ": " + e.what());
    }
    if (!root.IsMap()) fail(ErrorKind::ConfigError, path.string() + ": expected a key-value mapping");
    SyntheticSpec s;
    try {
        for (const auto& kv : root) {
            const auto key = kv.first.as<std::string>();
            const auto& v = kv.second;
            if (key == "categories") s.n_categories = v.as<int>();
            else if (key == "train_per_category") s.train_per_category = v.as<int>();
            else if (key == "test_normal_per_category") s.test_normal_per_category = v.as<int>();
            else if (key == "test_anomalous_per_category") s.test_anomalous_per_category = v.as<int>();
            else if (key == "resolution") s.resolution = v.as<int>();
            else if (key == "defect_area_fraction") s.defect_area_fraction = v.as<double>();
            else if (key == "noise") s.noise = v.as<double>();
            else if (key == "defect_contrast") s.defect_contrast = v.as<double>();
            else if (key == "seed") s.seed = v.as<std::uint64_t>();
            else fail(ErrorKind::ConfigError, path.string() + ": unknown key '" + key + "'");
        }
    } catch (const YAML::Exception& e) {
        fail(ErrorKind::ConfigError, path.string() + ": " + e.what());
    }
    return s;
}

namespace {

struct Texture {
    int family = 0;
    double color_a[3], color_b[3];
    double frequency = 4;
    double angle = 0;
};

Texture make_texture(const SyntheticSpec& spec, int category) {
    Rng rng = Rng(spec.seed).split("texture", static_cast<std::uint64_t>(category));
    Texture t;
    t.family = category % 5;
    for (int c = 0; c < 3; ++c) {
        t.color_a[c] = rng.uniform(0.15, 0.45);
        t.color_b[c] = rng.uniform(0.55, 0.85);
    }
    t.frequency = rng.uniform(3.0, 7.0);
    t.angle = rng.uniform(0.0, M_PI);
    return t;
}

// Pattern value in [0,1] at pixel (x, y) for one image instance.
struct Instance {
    double phase, ox, oy;
};

double pattern(const Texture& t, const Instance& in, double x, double y, int R) {
    const double u = x / R, v = y / R;
    switch (t.family) {
        case 0: {  // oriented stripes
            const double s = u * std::cos(t.angle) + v * std::sin(t.angle);
            return 0.5 + 0.5 * std::sin(2 * M_PI * t.frequency * s + in.phase);
        }
        case 1: {  // checkerboard
            const int a = static_cast<int>(std::floor(t.frequency * u + in.ox));
            const int b = static_cast<int>(std::floor(t.frequency * v + in.oy));
            return ((a + b) & 1) ? 1.0 : 0.0;
        }
        case 2: {  // dot lattice
            const double fu = t.frequency * u + in.ox, fv = t.frequency * v + in.oy;
            const double du = fu - std::floor(fu) - 0.5, dv = fv - std::floor(fv) - 0.5;
            return std::exp(-(du * du + dv * dv) / (2 * 0.15 * 0.15));
        }
        case 3: {  // concentric rings
            const double du = u - 0.5 - 0.1 * (in.ox - 0.5), dv = v - 0.5 - 0.1 * (in.oy - 0.5);
            return 0.5 + 0.5 * std::sin(2 * M_PI * t.frequency * std::sqrt(du * du + dv * dv) + in.phase);
        }
        default: {  // crossed waves
            return 0.5 + 0.25 * std::sin(2 * M_PI * t.frequency * u + in.phase) + 0.25 * std::sin(2 * M_PI * t.frequency * v + in.phase);
        }
    }
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

struct Generated {
    cv::Mat image;
    cv::Mat mask;  // empty for normal images
};

Generated render(const SyntheticSpec& spec, const Texture& tex, Rng rng, bool anomalous) {
    const int R = spec.resolution;
    Instance in{rng.uniform(0.0, 2 * M_PI), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
    std::vector<double> px(static_cast<std::size_t>(3) * R * R);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            const double t = pattern(tex, in, x + 0.5, y + 0.5, R);
            for (int c = 0; c < 3; ++c) {
                const double n = spec.noise > 0 ? spec.noise * rng.normal() : 0.0;
                px[(static_cast<std::size_t>(c) * R + y) * R + x] = tex.color_a[c] * (1 - t) + tex.color_b[c] * t + n;
            }
        }
    Generated g;
    if (anomalous) {
        const int side = static_cast<int>(std::lround(std::sqrt(spec.defect_area_fraction) * R));
        const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(R - side + 1)));
        const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(R - side + 1)));
        // Stain: blend toward a saturated color outside the texture palette.
        double stain[3];
        for (double& c : stain) c = static_cast<double>(rng.below(2));
        g.mask = cv::Mat::zeros(R, R, CV_8UC1);
        for (int y = y0; y < y0 + side; ++y)
            for (int x = x0; x < x0 + side; ++x) {
                g.mask.at<std::uint8_t>(y, x) = 255;
                for (int c = 0; c < 3; ++c) {
                    double& v = px[(static_cast<std::size_t>(c) * R + y) * R + x];
                    v = (1 - spec.defect_contrast) * v + spec.defect_contrast * stain[c];
                }
            }
    }
    g.image = cv::Mat(R, R, CV_8UC3);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            auto& bgr = g.image.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) bgr[2 - c] = to_byte(px[(static_cast<std::size_t>(c) * R + y) * R + x]);
        }
    return g;
}

std::string numbered(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", i);
    return buf;
}

std::string category_name(int i, int n) {
    const int width = static_cast<int>(std::to_string(std::max(0, n - 1)).size());
    std::string s = std::to_string(i);
    return "cat" + std::string(static_cast<std::size_t>(width) - s.size(), '0') + s;
}

void write_png(const fs::path& path, const cv::Mat& m) {
    fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), m)) fail(ErrorKind::IoError, "cannot write " + path.string());
}

}  // namespace

DatasetIndex generate_synthetic(const SyntheticSpec& spec, const fs::path& out) {
    spec.validate();
    fs::create_directories(out);
    for (int c = 0; c < spec.n_categories; ++c) {
        const Texture tex = make_texture(spec, c);
        const fs::path dir = out / category_name(c, spec.n_categories);
        const Rng base = Rng(spec.seed).split("images", static_cast<std::uint64_t>(c));
        for (int i = 0; i < spec.train_per_category; ++i) {
            write_png(dir / "train" / "good" / (numbered(i) + ".png"), render(spec, tex, base.split("train", i), false).image);
        }
        for (int i = 0; i < spec.test_normal_per_category; ++i) {
            write_png(dir / "test" / "good" / (numbered(i) + ".png"), render(spec, tex, base.split("test-good", i), false).image);
        }
        for (int i = 0; i < spec.test_anomalous_per_category; ++i) {
            auto g = render(spec, tex, base.split("test-defect", i), true);
            write_png(dir / "test" / "defect" / (numbered(i) + ".png"), g.image);
            write_png(dir / "ground_truth" / "defect" / (numbered(i) + "_mask.png"), g.mask);
        }
    }
    return scan_dataset(out, Layout::MVTec);
}

}  // namespace fsad
