#include <doctest.h>

#include <atomic>
#include <cstdlib>

#include "fsad/experiment.hpp"
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

std::string error_text(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

// Every config needs a dataset; tests use a nominal root.
ExperimentConfig parse(const std::string& yaml, const ConfigOverrides& o = {}) { return parse_config("dataset:\n  root: /data\n" + yaml, o); }

Checkpoint sample_checkpoint() {
    const ModelConfig m = [] {
        ModelConfig c;
        c.host = Host::MaskedRecon;
        c.resolution = 16;
        c.encoder_channels = {4, 4, 6};
        c.decoder_ffn = 5;
        c.disc_channels = {4, 4};
        c.disc_strides = {1, 1};
        return c;
    }();
    Checkpoint ck;
    ck.model = m;
    ck.meta = {{"epoch", "3"}, {"target", "cat1"}};
    ck.main = make_host<float>(m, Rng(1))->initial_params();
    ck.disc = Discriminator<float>(m, Rng(2)).initial_params();
    return ck;
}

}  // namespace

TEST_CASE("per-host defaults and the toy profile") {
    const auto s = parse("");
    CHECK(s.host() == Host::Siamese);
    CHECK(s.resolution() == 224);
    CHECK(s.epochs == 50);
    CHECK(s.adversarial);
    CHECK(s.shots == std::vector<int>{2, 4, 8});
    CHECK(s.runs == 10);
    CHECK(s.trainer.batch_size == 8);
    CHECK(s.trainer.model_optimizer.kind == OptimizerKind::SgdMomentum);
    CHECK(s.trainer.model_optimizer.learning_rate == 1e-4);
    CHECK(s.trainer.model_optimizer.momentum == 0.9);
    CHECK(s.scoring.shrinkage == 0.01);
    CHECK(s.scoring.sigma == 4.0);
    CHECK(s.method() == "siamese+adv");

    const auto r = parse("host: masked-recon\n");
    CHECK(r.epochs == 1000);
    CHECK(r.trainer.model_optimizer.kind == OptimizerKind::AdamW);
    CHECK(r.trainer.model_optimizer.weight_decay == 1e-4);
    CHECK(r.trainer.model_optimizer.beta2 == 0.999);
    CHECK(r.model.mask_ratio == 0.25);

    ConfigOverrides toy;
    toy.toy = true;
    const auto t = parse("", toy);
    CHECK(t.profile == "toy");
    CHECK(t.resolution() == 64);
    CHECK(t.epochs == 5);
    CHECK(t.trainer.pairs_per_epoch == 32);
}

TEST_CASE("unknown keys and invalid values are config errors naming the key") {
    CHECK(kind_of([] { parse("epocs: 3\n"); }) == ErrorKind::ConfigError);
    CHECK(error_text([] { parse("epocs: 3\n"); }).find("epocs") != std::string::npos);
    CHECK(error_text([] { parse("model:\n  mask_raito: 0.5\n"); }).find("mask_raito") != std::string::npos);
    CHECK(kind_of([] { parse("runs: 0\n"); }) == ErrorKind::ConfigError);
    CHECK(kind_of([] { parse("epochs: many\n"); }) == ErrorKind::ConfigError);
    CHECK(kind_of([] { parse("model:\n  mask_ratio: 1.5\n"); }) == ErrorKind::ConfigError);
    CHECK(kind_of([] { parse("model:\n  neighborhood: 2\n"); }) == ErrorKind::ConfigError);
    CHECK(kind_of([] { parse("host: gan\n"); }) == ErrorKind::ConfigError);
    CHECK(kind_of([] { parse("optimizer:\n  kind: rmsprop\n"); }) == ErrorKind::ConfigError);
    CHECK(kind_of([] { parse_config("[1, 2]\n"); }) == ErrorKind::ConfigError);
    CHECK(kind_of([] { parse_config(""); }) == ErrorKind::ConfigError);  // no dataset
    CHECK(kind_of([] { load_config(std::filesystem::path("/nonexistent/cfg.yaml")); }) == ErrorKind::ConfigError);
    CHECK(kind_of([] { parse_int_list("2,x"); }) == ErrorKind::ConfigError);
    CHECK(parse_int_list("2,4,8") == std::vector<int>{2, 4, 8});
}

TEST_CASE("discriminator optimizer inherits unset fields from the model optimizer") {
    const auto a = parse("optimizer:\n  lr: 0.01\n  momentum: 0.5\n");
    CHECK(a.trainer.disc_optimizer.learning_rate == 0.01);
    CHECK(a.trainer.disc_optimizer.momentum == 0.5);
    const auto b = parse("optimizer:\n  lr: 0.01\ndiscriminator_optimizer:\n  lr: 0.2\n");
    CHECK(b.trainer.model_optimizer.learning_rate == 0.01);
    CHECK(b.trainer.disc_optimizer.learning_rate == 0.2);
    CHECK(b.trainer.disc_optimizer.momentum == 0.9);
    const auto c = parse("host: masked-recon\ndiscriminator_optimizer:\n  betas: [0.5, 0.9]\n");
    CHECK(c.trainer.disc_optimizer.kind == OptimizerKind::AdamW);
    CHECK(c.trainer.disc_optimizer.beta1 == 0.5);
    CHECK(c.trainer.model_optimizer.beta1 == 0.9);
}

TEST_CASE("precedence, canonical YAML round trip and config hash") {
    ConfigOverrides o;
    o.seed = 9;
    o.adversarial = false;
    o.shots = std::vector<int>{2};
    const auto c = parse("seed: 3\nadversarial: true\nepochs: 7\n", o);
    CHECK(c.seed == 9);
    CHECK_FALSE(c.adversarial);
    CHECK_FALSE(c.trainer.adversarial);
    CHECK(c.epochs == 7);
    CHECK(c.method() == "siamese");

    const auto back = parse_config(to_yaml(c));
    CHECK(to_yaml(back) == to_yaml(c));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(c).size() == 12);

    ExperimentConfig d = c;
    d.seed = 100;
    d.runs = 2;
    d.shots = {8};
    d.output = "elsewhere";
    d.scoring.export_maps = true;
    CHECK(config_hash(d) == config_hash(c));
    d.epochs = 8;
    CHECK(config_hash(d) != config_hash(c));
    ExperimentConfig e = c;
    e.adversarial = true;
    e.trainer.adversarial = true;
    CHECK(config_hash(e) != config_hash(c));

    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoint round trip is exact and corruption is detected") {
    const Checkpoint ck = sample_checkpoint();
    const std::string bytes = serialize_checkpoint(ck);
    const Checkpoint back = deserialize_checkpoint(bytes);
    CHECK(back.main == ck.main);
    CHECK(back.disc == ck.disc);
    CHECK(back.meta == ck.meta);
    CHECK(back.model.host == Host::MaskedRecon);
    CHECK(back.model.encoder_channels == ck.model.encoder_channels);
    CHECK(serialize_checkpoint(back) == bytes);

    std::string flipped = bytes;
    flipped[flipped.size() - 3] = static_cast<char>(flipped[flipped.size() - 3] ^ 0x40);
    CHECK(kind_of([&] { deserialize_checkpoint(flipped); }) == ErrorKind::SchemaViolation);
    CHECK(kind_of([&] { deserialize_checkpoint(bytes.substr(0, bytes.size() - 10)); }) == ErrorKind::SchemaViolation);
    CHECK(kind_of([&] { deserialize_checkpoint("not a checkpoint\n"); }) == ErrorKind::SchemaViolation);

    testing::TempDir d("ckpt");
    save_checkpoint(ck, d / "sub" / "c.fsad");
    CHECK(load_checkpoint(d / "sub" / "c.fsad").main == ck.main);
    CHECK(kind_of([&] { load_checkpoint(d / "missing.fsad"); }) == ErrorKind::NotFound);

    const auto host = host_from_checkpoint(back);
    CHECK(host->host() == Host::MaskedRecon);
    CHECK(host->initial_params().names() == ck.main.names());
}

TEST_CASE("sweep layout, seeds and cells") {
    ConfigOverrides o;
    o.toy = true;
    o.output = "/tmp/fsad-layout";
    o.runs = 3;
    o.seed = 5;
    o.shots = std::vector<int>{2, 4};
    const auto cfg = parse("targets: [b]\n", o);
    CHECK(run_seeds(cfg) == std::vector<std::uint64_t>{5, 6, 7});
    const auto root = config_root(cfg);
    CHECK(root == std::filesystem::path("/tmp/fsad-layout/runs") / config_hash(cfg));
    CHECK(cell_dir(cfg, {4, 6, "b"}) == root / "K4" / "seed6" / "b");

    DatasetIndex index;
    index.categories.resize(3);
    index.categories[0].name = "a";
    index.categories[1].name = "b";
    index.categories[2].name = "c";
    const auto cells = enumerate_cells(cfg, index);
    CHECK(cells.size() == 2 * 3);
    for (const auto& c : cells) CHECK(c.target == "b");

    auto all = cfg;
    all.targets.clear();
    CHECK(enumerate_cells(all, index).size() == 2 * 3 * 3);
    all.targets = {"zzz"};
    CHECK(kind_of([&] { enumerate_cells(all, index); }) != ErrorKind::IoError);
}

TEST_CASE("parallel_for runs every index and rethrows the lowest failure") {
    std::vector<std::atomic<int>> hits(20);
    parallel_for(20, 3, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) CHECK(h.load() == 1);
    const std::string msg = error_text([] {
        parallel_for(10, 4, [](std::size_t i) {
            if (i == 7 || i == 3) fail(ErrorKind::NumericalError, "cell " + std::to_string(i));
        });
    });
    CHECK(msg.find("cell 3") != std::string::npos);

    setenv("FSAD_WORKERS", "2", 1);
    CHECK(worker_count() == 2);
    unsetenv("FSAD_WORKERS");
    CHECK(worker_count() >= 1);
}
