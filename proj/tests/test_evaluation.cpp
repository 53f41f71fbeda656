#include <doctest.h>

#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "fsad/evaluation.hpp"
#include "reference_ops.hpp"
#include "test_support.hpp"

using namespace fsad;
using doctest::Approx;

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

Tensor<float> feat(Shape s, std::vector<float> v) { return Tensor<float>(std::move(s), std::move(v)); }

RunResult run_with(const std::string& method, int shots, std::uint64_t seed, const std::vector<std::string>& cats, const std::vector<double>& image,
                   const std::vector<double>& pixel) {
    RunResult r{method, shots, seed, {}};
    for (std::size_t i = 0; i < cats.size(); ++i) r.categories.push_back({cats[i], image[i], pixel.empty() ? 0.5 : pixel[i]});
    return r;
}

std::vector<std::string> names(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("c" + std::to_string(10 + i));
    return out;
}

// Two runs offset by +-0.4 points around the published values; the row mean
// must land on the published average.
double paper_average(const std::vector<double>& published) {
    std::vector<double> a, b;
    for (double v : published) {
        a.push_back((v + 0.4) / 100.0);
        b.push_back((v - 0.4) / 100.0);
    }
    const auto cats = names(published.size());
    const auto row = aggregate({run_with("m", 2, 0, cats, a, {}), run_with("m", 2, 1, cats, b, {})}, Metric::Image);
    for (std::size_t i = 0; i < published.size(); ++i) CHECK(row.percent[i] == Approx(published[i]).epsilon(1e-12));
    return row.average;
}

}  // namespace

TEST_CASE("support statistics: hand-computed mean and covariance") {
    const auto st = fit_support_stats({feat({2, 1, 1}, {0, 0}), feat({2, 1, 1}, {2, 2})}, 0.01);
    REQUIRE(st.mean.size() == 1);
    CHECK(st.mean[0](0) == Approx(1.0));
    CHECK(st.mean[0](1) == Approx(1.0));
    CHECK(st.cov[0](0, 0) == Approx(2.01));
    CHECK(st.cov[0](0, 1) == Approx(2.0));
    CHECK(st.cov[0](1, 1) == Approx(2.01));

    // A single support image: covariance is the shrinkage term alone.
    const auto one = fit_support_stats({feat({2, 1, 1}, {1, 1})}, 0.01);
    CHECK(one.cov[0](0, 0) == Approx(0.01));
    CHECK(one.cov[0](0, 1) == 0.0);
    CHECK(mahalanobis_map(one, feat({2, 1, 1}, {1.1f, 1})).at(0, 0) == Approx(1.0).epsilon(1e-6));
    CHECK(mahalanobis_map(one, feat({2, 1, 1}, {1, 1})).at(0, 0) == 0.0);

    CHECK(kind_of([] { fit_support_stats({}); }) == ErrorKind::InvalidInput);
    CHECK(kind_of([&] { mahalanobis_map(one, feat({2, 2, 1}, {0, 0, 0, 0})); }) == ErrorKind::ShapeError);
}

TEST_CASE("Mahalanobis distance matches an explicit 2x2 inverse") {
    Rng rng(1);
    std::vector<Tensor<float>> support;
    for (int i = 0; i < 5; ++i) {
        Tensor<float> t({2, 2, 2});
        for (auto& v : t.data) v = static_cast<float>(rng.normal());
        support.push_back(t);
    }
    const auto st = fit_support_stats(support);
    Tensor<float> q({2, 2, 2});
    for (auto& v : q.data) v = static_cast<float>(rng.normal());
    const auto g = mahalanobis_map(st, q);
    for (int p = 0; p < 4; ++p) {
        double mu[2] = {0, 0};
        for (const auto& s : support)
            for (int c = 0; c < 2; ++c) mu[c] += s.data[static_cast<std::size_t>(c) * 4 + p] / 5.0;
        double cxx = 0, cxy = 0, cyy = 0;
        for (const auto& s : support) {
            const double dx = s.data[static_cast<std::size_t>(p)] - mu[0], dy = s.data[4 + static_cast<std::size_t>(p)] - mu[1];
            cxx += dx * dx / 4;
            cxy += dx * dy / 4;
            cyy += dy * dy / 4;
        }
        cxx += 0.01;
        cyy += 0.01;
        const double det = cxx * cyy - cxy * cxy;
        const double dx = q.data[static_cast<std::size_t>(p)] - mu[0], dy = q.data[4 + static_cast<std::size_t>(p)] - mu[1];
        const double d2 = (cyy * dx * dx - 2 * cxy * dx * dy + cxx * dy * dy) / det;
        CHECK(g.values[static_cast<std::size_t>(p)] == Approx(std::sqrt(d2)).epsilon(1e-9));
    }
}

TEST_CASE("reconstruction error map sums squared channel differences") {
    const auto z = feat({2, 1, 2}, {1, 2, 3, 4});
    const auto zh = feat({2, 1, 2}, {0, 2, 1, 1});
    const auto g = recon_error_map(z, zh);
    CHECK(g.at(0, 0) == Approx(1 + 4));
    CHECK(g.at(0, 1) == Approx(0 + 9));
    CHECK(recon_error_map(z, z).at(0, 1) == 0.0);
    CHECK(kind_of([&] { recon_error_map(z, feat({2, 2, 1}, {0, 0, 0, 0})); }) == ErrorKind::ShapeError);
}

TEST_CASE("upsampling and smoothing") {
    Grid g(2, 2);
    g.values = {1, 0, 0, 1};
    const auto up = upsample_map(g, 4, 0.0);
    ref::Map src(1, 2, 2);
    src.v = g.values;
    const auto want = ref::resize(src, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) CHECK(up.at(y, x) == Approx(want.at(0, y, x)).epsilon(1e-12));

    const auto flat = upsample_map(Grid(3, 3, 2.5), 32, 4.0);
    CHECK(flat.height == 32);
    for (double v : flat.values) CHECK(v == Approx(2.5).epsilon(1e-12));

    const auto k = gaussian_kernel(4.0);
    CHECK(k.size() == 33);
    double sum = 0;
    for (std::size_t i = 0; i < k.size(); ++i) {
        sum += k[i];
        CHECK(k[i] == Approx(k[k.size() - 1 - i]));
    }
    CHECK(sum == Approx(1.0).epsilon(1e-14));

    // Impulse far from the border: response is the outer product of the kernel.
    Grid impulse(41, 41);
    impulse.at(20, 20) = 1.0;
    const auto s = gaussian_smooth(impulse, 2.0);
    const auto k2 = gaussian_kernel(2.0);
    const int r = static_cast<int>(k2.size() / 2);
    for (int dy = -r; dy <= r; dy += 3)
        for (int dx = -r; dx <= r; dx += 3)
            CHECK(s.at(20 + dy, 20 + dx) == Approx(k2[static_cast<std::size_t>(dy + r)] * k2[static_cast<std::size_t>(dx + r)]).epsilon(1e-12));
    double mass = 0;
    for (double v : s.values) mass += v;
    CHECK(mass == Approx(1.0));
}

TEST_CASE("image score: max and top-k mean") {
    Grid g(1, 4);
    g.values = {0.1, 0.9, 0.5, 0.7};
    CHECK(image_score(g) == 0.9);
    CHECK(image_score(g, 2) == Approx(0.8));
    CHECK(image_score(g, 10) == Approx(0.55));
}

TEST_CASE("AUROC: definition, ties, invariances and errors") {
    CHECK(auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    CHECK(auroc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
    CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
    CHECK(auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == Approx(0.75));

    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(40);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.below(8));  // heavy ties
            y[i] = i == 0 ? 0 : i == 1 ? 1 : static_cast<int>(rng.below(2));
        }
        const double a = auroc(s, y);
        CHECK(a == Approx(ref::pairwise_auroc(s, y)).epsilon(1e-12));
        std::vector<double> t(n), neg(n);
        std::vector<int> flipped(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = std::exp(3 * s[i]) + 1;
            neg[i] = -s[i];
            flipped[i] = 1 - y[i];
        }
        CHECK(auroc(t, y) == Approx(a).epsilon(1e-12));
        CHECK(auroc(neg, y) == Approx(1 - a).epsilon(1e-12));
        CHECK(auroc(s, flipped) == Approx(1 - a).epsilon(1e-12));
    }

    CHECK(kind_of([] { auroc({0.1, 0.2}, {1, 1}); }) == ErrorKind::UndefinedMetric);
    CHECK(kind_of([] { auroc({0.1, 0.2}, {0, 0}); }) == ErrorKind::UndefinedMetric);
    CHECK(kind_of([] { auroc({0.1, NAN}, {0, 1}); }) == ErrorKind::NumericalError);
    CHECK(kind_of([] { auroc({0.1}, {0, 1}); }) == ErrorKind::ShapeError);
}

TEST_CASE("pixel AUROC pools all maps and subsamples reproducibly") {
    Grid m0(2, 2), m1(2, 2);
    m0.values = {0.9, 0.1, 0.2, 0.3};
    m1.values = {0.1, 0.2, 0.8, 0.7};
    const Mask k0{2, 2, {1, 0, 0, 0}}, k1{2, 2, {0, 0, 1, 1}};
    CHECK(pixel_auroc({m0, m1}, {k0, k1}) == 1.0);
    CHECK(kind_of([&] { pixel_auroc({m0}, {Mask{2, 2, {0, 0, 0, 0}}}); }) == ErrorKind::UndefinedMetric);
    CHECK(kind_of([&] { pixel_auroc({m0}, {Mask{1, 4, {0, 1, 0, 0}}}); }) == ErrorKind::ShapeError);

    Rng rng(3);
    Grid big(20, 20);
    Mask bm{20, 20, std::vector<std::uint8_t>(400, 0)};
    for (std::size_t i = 0; i < 400; ++i) {
        bm.cells[i] = static_cast<std::uint8_t>(i % 7 == 0);
        big.values[i] = rng.uniform() + 0.3 * bm.cells[i];
    }
    auto oracle = ref::Stream::seeded(5).child("pixel-subsample");
    auto idx = oracle.choose(400, 150);
    std::sort(idx.begin(), idx.end());
    std::vector<double> s;
    std::vector<int> y;
    for (auto i : idx) {
        s.push_back(big.values[i]);
        y.push_back(bm.cells[i]);
    }
    CHECK(pixel_auroc({big}, {bm}, 150, 5) == Approx(ref::pairwise_auroc(s, y)).epsilon(1e-12));
    CHECK(pixel_auroc({big}, {bm}, 150, 5) == pixel_auroc({big}, {bm}, 150, 5));
}

TEST_CASE("aggregation reproduces published averages") {
    CHECK(std::abs(paper_average({99.8, 65.9, 70.2, 96.9, 77.0, 96.3, 100.0, 94.9, 80.7, 66.0, 99.4, 83.2, 82.6, 99.7, 86.6}) - 86.6) <= 0.05);
    CHECK(std::abs(paper_average({98.6, 93.9, 97.5, 98.9, 80.0, 98.4, 99.4, 97.8, 97.8, 94.8, 96.3, 96.6, 94.3, 96.8, 97.4}) - 95.9) <= 0.05);
    CHECK(std::abs(paper_average({56.1, 67.6, 76.8, 93.5, 73.7}) - 73.5) <= 0.05);

    const auto cats = names(2);
    CHECK(kind_of([&] { aggregate({run_with("m", 2, 0, cats, {1, 1}, {}), run_with("m", 2, 1, {"c10", "x"}, {1, 1}, {})}, Metric::Image); }) ==
          ErrorKind::SchemaViolation);
}

TEST_CASE("report tables, CSV, Markdown and result records") {
    const std::vector<std::string> cats{"b", "a"};
    std::vector<RunResult> runs{run_with("siamese", 2, 0, cats, {0.9, 0.8}, {0.7, 0.6}), run_with("siamese", 2, 1, cats, {0.7, 0.6}, {0.5, 0.4}),
                                run_with("siamese+adv", 2, 0, cats, {1.0, 1.0}, {1.0, 1.0}), run_with("siamese", 4, 0, cats, {0.5, 0.5}, {0.5, 0.5})};
    const auto tables = build_report(runs);
    REQUIRE(tables.size() == 4);
    CHECK(tables[0].shots == 2);
    CHECK(tables[0].metric == Metric::Image);
    CHECK(tables[0].categories == std::vector<std::string>{"a", "b"});
    CHECK(render_csv(tables[0]) == "method,a,b,Average\nsiamese,70.0,80.0,75.0\nsiamese+adv,100.0,100.0,100.0\n");
    CHECK(render_csv(tables[1]) == "method,a,b,Average\nsiamese,50.0,60.0,55.0\nsiamese+adv,100.0,100.0,100.0\n");
    const auto md = render_markdown(tables[0]);
    CHECK(md.find("| Method | a | b | Average |") != std::string::npos);
    CHECK(md.find("| siamese | 70.0 | 80.0 | 75.0 |") != std::string::npos);
    CHECK(format_percent(86.614) == "86.6");

    std::string text;
    for (const auto& r : runs) text += result_records(r);
    std::istringstream in(text);
    const auto back = parse_result_records(in, "mem");
    REQUIRE(back.size() == runs.size());
    CHECK(render_csv(build_report(back)[0]) == render_csv(tables[0]));

    std::istringstream bad("{\"K\": 2}\n");
    CHECK(kind_of([&] { parse_result_records(bad, "bad"); }) == ErrorKind::SchemaViolation);
}

TEST_CASE("embeddings: global pooling and CSV format") {
    const auto f = feat({2, 1, 2}, {1, 3, 0.5f, 0.25f});
    const auto pooled = global_pool(f);
    REQUIRE(pooled.size() == 2);
    CHECK(pooled[0] == 2.0f);
    CHECK(pooled[1] == 0.375f);
    const auto csv = embeddings_csv({{"cat/test/good/000.png", "cat", 0, pooled}, {"cat/test/x/001.png", "cat", 1, {0.1f, -1e-5f}}});
    CHECK(csv == "id,category,label,e_0,e_1\ncat/test/good/000.png,cat,0,2,0.375\ncat/test/x/001.png,cat,1,0.100000001,-9.99999975e-06\n");
}

TEST_CASE("dihedral augmentation yields the 8 square symmetries") {
    Tensor<float> img({1, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) img[i] = static_cast<float>(i);
    const auto aug = dihedral_augment(img);
    REQUIRE(aug.size() == 8);
    CHECK(aug[0].data == img.data);
    std::set<std::vector<float>> distinct;
    for (const auto& a : aug) {
        distinct.insert(a.data);
        auto sorted = a.data;
        std::sort(sorted.begin(), sorted.end());
        CHECK(sorted == img.data);
        CHECK(a.at(0, 1, 1) == 4.0f);  // centre is fixed
    }
    CHECK(distinct.size() == 8);
    CHECK(kind_of([] { dihedral_augment(Tensor<float>({1, 2, 3})); }) == ErrorKind::ShapeError);
}

TEST_CASE("anomaly map PNG export is min-max normalized 16-bit") {
    testing::TempDir d("maps");
    Grid g(2, 2);
    g.values = {1.0, 2.0, 3.0, 5.0};
    write_anomaly_png(g, d / "m.png");
    const cv::Mat m = cv::imread((d / "m.png").string(), cv::IMREAD_UNCHANGED);
    REQUIRE(m.type() == CV_16UC1);
    CHECK(m.at<std::uint16_t>(0, 0) == 0);
    CHECK(m.at<std::uint16_t>(0, 1) == 16384);
    CHECK(m.at<std::uint16_t>(1, 1) == 65535);
    write_anomaly_png(Grid(2, 2, 7.0), d / "flat.png");
    const cv::Mat f = cv::imread((d / "flat.png").string(), cv::IMREAD_UNCHANGED);
    CHECK(cv::countNonZero(f) == 0);
}
