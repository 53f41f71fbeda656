#include <doctest.h>

#include <set>

#include "fsad/config.hpp"
#include "fsad/data.hpp"
#include "reference_ops.hpp"
#include "test_support.hpp"

using namespace fsad;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an fsad::Error");
    return ErrorKind::IoError;
}

std::string tree_digest(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& f : files) all += fs::relative(f, root).string() + "\n" + testing::read_file(f);
    return sha256_hex(all);
}

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.n_categories = 2;
    s.train_per_category = 3;
    s.test_normal_per_category = 2;
    s.test_anomalous_per_category = 2;
    s.resolution = 32;
    s.seed = 5;
    return s;
}

}  // namespace

TEST_CASE("scan_dataset: missing or empty root is NotFound") {
    TempDir d("scan-empty");
    CHECK(kind_of([&] { scan_dataset(d / "absent", Layout::MVTec); }) == ErrorKind::NotFound);
    CHECK(kind_of([&] { scan_dataset(d.path(), Layout::MVTec); }) == ErrorKind::NotFound);
}

TEST_CASE("scan_dataset: counts match an independent walk of the tree") {
    TempDir d("scan-tree");
    testing::make_mvtec_tree(d.path(), 2, 3);
    const auto index = scan_dataset(d.path(), Layout::MVTec);
    REQUIRE(index.categories.size() == 2);
    CHECK(index.category_names() == std::vector<std::string>{"cat0", "cat1"});
    for (const auto& c : index.categories) {
        std::size_t train = 0, test = 0, masks = 0;
        for (const auto& e : fs::recursive_directory_iterator(d / c.name)) {
            if (!e.is_regular_file()) continue;
            const auto rel = fs::relative(e.path(), d / c.name).string();
            if (rel.rfind("train/", 0) == 0) ++train;
            else if (rel.rfind("test/", 0) == 0) ++test;
            else if (rel.rfind("ground_truth/", 0) == 0) ++masks;
        }
        CHECK(c.train_normals.size() == train);
        CHECK(c.test_items.size() == test);
        std::size_t anomalous = 0;
        for (const auto& t : c.test_items) {
            anomalous += t.label == Label::Anomalous;
            CHECK(t.mask.has_value() == (t.label == Label::Anomalous));
        }
        CHECK(anomalous == masks);
    }
}

TEST_CASE("scan_dataset: anomalous test image without a mask is a schema violation") {
    TempDir d("scan-nomask");
    testing::make_mvtec_tree(d.path(), 2, 3, false);
    CHECK(kind_of([&] { scan_dataset(d.path(), Layout::MVTec); }) == ErrorKind::SchemaViolation);
}

TEST_CASE("scan_dataset: dagm layout") {
    TempDir d("scan-dagm");
    const fs::path cls = d / "Class1";
    for (int i = 0; i < 3; ++i) testing::write_png(cls / "Train" / (std::to_string(i) + ".png"), 8, 8, 1, 1, 1);
    testing::write_png(cls / "Test" / "0.png", 8, 8, 1, 1, 1);
    testing::write_png(cls / "Test" / "1.png", 8, 8, 200, 1, 1);
    testing::write_gray(cls / "Test" / "Label" / "1_label.png", cv::Mat::ones(8, 8, CV_8UC1) * 255);
    const auto index = scan_dataset(d.path(), Layout::DAGM);
    REQUIRE(index.categories.size() == 1);
    const auto& c = index.categories[0];
    CHECK(c.train_normals.size() == 3);
    REQUIRE(c.test_items.size() == 2);
    CHECK(c.test_items[0].label == Label::Normal);
    CHECK(c.test_items[1].label == Label::Anomalous);
}

TEST_CASE("generate_synthetic: determinism, scan identity and mask area") {
    TempDir d("synth");
    SyntheticSpec s = small_spec();
    s.resolution = 64;
    s.defect_area_fraction = 0.05;
    const auto a = generate_synthetic(s, d / "a");
    const auto b = generate_synthetic(s, d / "b");
    CHECK(tree_digest(d / "a") == tree_digest(d / "b"));

    const auto scanned = scan_dataset(d / "a", Layout::MVTec);
    REQUIRE(scanned.categories.size() == a.categories.size());
    for (std::size_t i = 0; i < a.categories.size(); ++i) {
        CHECK(scanned.categories[i].train_normals == a.categories[i].train_normals);
        REQUIRE(scanned.categories[i].test_items.size() == a.categories[i].test_items.size());
        for (std::size_t j = 0; j < a.categories[i].test_items.size(); ++j) {
            CHECK(scanned.categories[i].test_items[j].label == a.categories[i].test_items[j].label);
            CHECK(scanned.categories[i].test_items[j].mask == a.categories[i].test_items[j].mask);
        }
    }

    const double target = 0.05 * 64 * 64;
    for (const auto& c : a.categories)
        for (const auto& t : c.test_items) {
            if (!t.mask) continue;
            const cv::Mat m = cv::imread((d / "a" / *t.mask).string(), cv::IMREAD_GRAYSCALE);
            const double count = cv::countNonZero(m);
            CHECK(count >= 0.8 * target);
            CHECK(count <= 1.2 * target);
        }
}

TEST_CASE("generate_synthetic: degenerate specs") {
    TempDir d("synth-degenerate");
    SyntheticSpec s = small_spec();
    s.test_anomalous_per_category = 0;
    const auto index = generate_synthetic(s, d / "normal-only");
    for (const auto& c : index.categories)
        for (const auto& t : c.test_items) {
            CHECK(t.label == Label::Normal);
            CHECK_FALSE(t.mask.has_value());
        }
    s.test_anomalous_per_category = 2;
    s.defect_area_fraction = 0.0;
    CHECK(kind_of([&] { generate_synthetic(s, d / "zero-area"); }) == ErrorKind::InvalidSpec);
}

TEST_CASE("preprocess: constant image, default resolution, grayscale replication") {
    CHECK(PreprocessConfig{}.resolution == 224);
    CHECK(default_config(Host::Siamese, false).resolution() == 224);
    RawImage raw{5, 7, 3, std::vector<std::uint8_t>(5 * 7 * 3, 128)};
    const auto t = preprocess(raw, {16, false});
    CHECK(t.shape == Shape{3, 16, 16});
    for (float v : t.data) CHECK(v == doctest::Approx(128.0 / 255.0).epsilon(1e-7));

    RawImage gray{2, 2, 1, {0, 255, 51, 102}};
    const auto g = preprocess(gray, {2, false});
    for (int c = 0; c < 3; ++c) {
        CHECK(g.at(c, 0, 1) == doctest::Approx(1.0));
        CHECK(g.at(c, 1, 0) == doctest::Approx(0.2));
    }
}

TEST_CASE("preprocess: 2x2 checkerboard upsampled to 4x4 matches the bilinear oracle") {
    RawImage raw{2, 2, 3, {}};
    const int checker[4] = {255, 0, 0, 255};
    for (int p = 0; p < 4; ++p)
        for (int c = 0; c < 3; ++c) raw.pixels.push_back(static_cast<std::uint8_t>(checker[p]));
    const auto t = preprocess(raw, {4, false});
    ref::Map src(1, 2, 2);
    src.v = {1, 0, 0, 1};
    const auto want = ref::resize(src, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) CHECK(t.at(c, y, x) == doctest::Approx(want.at(0, y, x)).epsilon(1e-6));
    // Closed form at a few points: corners keep the source value, centre is the mean.
    CHECK(want.at(0, 0, 0) == doctest::Approx(1.0));
    CHECK(want.at(0, 1, 1) == doctest::Approx(0.625));
    CHECK(want.at(0, 1, 2) == doctest::Approx(0.375));
}

TEST_CASE("preprocess is idempotent at the target resolution") {
    ref::Stream s = ref::Stream::seeded(3);
    RawImage raw{8, 8, 3, {}};
    for (int i = 0; i < 8 * 8 * 3; ++i) raw.pixels.push_back(static_cast<std::uint8_t>(s.below(256)));
    const auto once = preprocess(raw, {8, false});
    const auto twice = resize_bilinear(once, 8, 8);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(std::abs(once[i] - twice[i]) <= 1e-6);
}

TEST_CASE("decode errors and nearest-neighbor masks") {
    TempDir d("decode");
    testing::write_text(d / "junk.png", "not an image");
    CHECK(kind_of([&] { decode_image(d / "junk.png"); }) == ErrorKind::DecodeError);

    cv::Mat m = cv::Mat::zeros(4, 4, CV_8UC1);
    m.at<std::uint8_t>(0, 0) = 255;
    m.at<std::uint8_t>(3, 3) = 7;
    testing::write_gray(d / "mask.png", m);
    const Mask mk = load_mask(d / "mask.png", 8);
    CHECK(mk.height == 8);
    std::size_t ones = 0;
    for (auto v : mk.cells) {
        CHECK((v == 0 || v == 1));
        ones += v;
    }
    CHECK(ones == 8);  // two source pixels, each covering 2x2 target pixels
    CHECK(mk.cells[0] == 1);
    CHECK(mk.cells[63] == 1);
}

TEST_CASE("build_episode: preconditions") {
    TempDir d("episode-pre");
    testing::make_mvtec_tree(d.path(), 2, 3);
    const auto index = scan_dataset(d.path(), Layout::MVTec);
    CHECK(kind_of([&] { build_episode(index, {"cat0", 0, 1}, {16, false}); }) == ErrorKind::InvalidSpec);
    CHECK(kind_of([&] { build_episode(index, {"cat0", 4, 1}, {16, false}); }) == ErrorKind::InvalidSpec);
}

TEST_CASE("build_episode: support draw replays the documented RNG; leave-one-out holds") {
    TempDir d("episode");
    testing::make_mvtec_tree(d.path(), 5, 10);
    const auto index = scan_dataset(d.path(), Layout::MVTec);
    const auto ep = build_episode(index, {"cat3", 2, 7}, {16, false});

    auto oracle = ref::Stream::seeded(7).child("support");
    const auto picks = oracle.choose(10, 2);
    const auto& normals = index.category("cat3").train_normals;
    REQUIRE(ep.support_ids.size() == 2);
    CHECK(ep.support_ids[0] == normals[picks[0]]);
    CHECK(ep.support_ids[1] == normals[picks[1]]);
    CHECK(ep.support.size() == 2);

    CHECK_FALSE(ep.train_pool.contains_category("cat3"));
    CHECK(ep.train_pool.categories.size() == 4);
    for (const auto& c : ep.train_pool.categories)
        for (const auto& img : c.images) CHECK(img.rfind("cat3/", 0) != 0);
    const std::set<std::string> support(ep.support_ids.begin(), ep.support_ids.end());
    for (const auto& t : ep.test) {
        CHECK(support.count(t.id) == 0);
        CHECK(t.mask.has_value() == (t.label == Label::Anomalous));
        if (t.mask) CHECK(t.mask->height == 16);
    }
}

TEST_CASE("sample_pair: single category, RNG replay and insufficient data") {
    TempDir d("pairs");
    testing::make_mvtec_tree(d.path(), 3, 4);
    const auto index = scan_dataset(d.path(), Layout::MVTec);
    const auto ep = build_episode(index, {"cat0", 1, 0}, {16, false});

    Rng rng = Rng(11).split("pairs");
    auto oracle = ref::Stream::seeded(11).child("pairs");
    for (int i = 0; i < 10; ++i) {
        const auto p = sample_pair(ep.train_pool, rng);
        const auto& cat = ep.train_pool.categories[oracle.below(ep.train_pool.categories.size())];
        const auto idx = oracle.choose(cat.images.size(), 2);
        CHECK(p.category == cat.name);
        CHECK(p.id0 == cat.images[idx[0]]);
        CHECK(p.id1 == cat.images[idx[1]]);
        CHECK(p.id0 != p.id1);
    }

    TrainPool one = ep.train_pool;
    one.categories.resize(1);
    Rng r2(1);
    for (int i = 0; i < 5; ++i) {
        const auto p = sample_pair(one, r2);
        CHECK(p.category == one.categories[0].name);
    }

    TrainPool single = one;
    single.categories[0].images.resize(1);
    CHECK(kind_of([&] { sample_pair(single, r2); }) == ErrorKind::InsufficientData);
}
