#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include "fsad/config.hpp"

namespace fsad {

std::string ExperimentConfig::method() const { return std::string(to_string(model.host)) + (adversarial ? "+adv" : ""); }

void ExperimentConfig::validate() const {
    if (profile != "standard" && profile != "toy") fail(ErrorKind::ConfigError, "profile must be 'standard' or 'toy'");
    if (shots.empty()) fail(ErrorKind::ConfigError, "shots list is empty");
    for (int k : shots)
        if (k < 1) fail(ErrorKind::ConfigError, "shots must be positive");
    if (runs < 1) fail(ErrorKind::ConfigError, "runs must be at least 1");
    if (epochs < 0) fail(ErrorKind::ConfigError, "epochs must be non-negative");
    if (checkpoint_every < 0) fail(ErrorKind::ConfigError, "checkpoint_every must be non-negative");
    if (output.empty()) fail(ErrorKind::ConfigError, "output directory is empty");
    if (dataset.root.empty() && !dataset.synthetic) fail(ErrorKind::ConfigError, "dataset needs either a root or a synthetic spec");
    if (dataset.synthetic) {
        try {
            dataset.synthetic->validate();
        } catch (const Error& e) {
            fail(ErrorKind::ConfigError, std::string("dataset.synthetic: ") + e.what());
        }
        if (dataset.root.empty() && dataset.synthetic->resolution < 8) fail(ErrorKind::ConfigError, "synthetic resolution too small");
    }
    if (!(scoring.shrinkage > 0.0)) fail(ErrorKind::ConfigError, "scoring.shrinkage must be positive");
    if (!(scoring.sigma >= 0.0)) fail(ErrorKind::ConfigError, "scoring.sigma must be non-negative");
    if (scoring.top_k < 0) fail(ErrorKind::ConfigError, "scoring.top_k must be non-negative");
    model.validate();
    trainer.validate();
    if (!(trainer.model_optimizer.learning_rate > 0.0) || !(trainer.disc_optimizer.learning_rate > 0.0)) {
        fail(ErrorKind::ConfigError, "learning rates must be positive");
    }
}

ExperimentConfig default_config(Host host, bool toy) {
    ExperimentConfig c;
    c.model.host = host;
    c.model.resolution = 224;
    OptimizerConfig opt;
    opt.learning_rate = 1e-4;
    if (host == Host::Siamese) {
        c.epochs = 50;
        opt.kind = OptimizerKind::SgdMomentum;
        opt.momentum = 0.9;
        opt.weight_decay = 0.0;
    } else {
        c.epochs = 1000;
        opt.kind = OptimizerKind::AdamW;
        opt.beta1 = 0.9;
        opt.beta2 = 0.999;
        opt.weight_decay = 1e-4;
    }
    c.trainer.model_optimizer = opt;
    c.trainer.disc_optimizer = opt;
    c.trainer.batch_size = 8;
    c.trainer.pairs_per_epoch = 128;
    if (toy) {
        c.profile = "toy";
        c.model.resolution = 64;
        c.epochs = 5;
        c.trainer.pairs_per_epoch = 32;
        // The toy run takes 20 optimizer steps; at 1e-4 AdamW barely moves the
        // reconstruction decoder in that budget.
        if (host == Host::MaskedRecon) {
            c.trainer.model_optimizer.learning_rate = 1e-3;
            c.trainer.disc_optimizer.learning_rate = 1e-3;
        }
    }
    return c;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(item, &used);
        } catch (const std::exception&) {
            fail(ErrorKind::ConfigError, "'" + s + "' is not a comma-separated integer list");
        }
        if (used != item.size()) fail(ErrorKind::ConfigError, "'" + s + "' is not a comma-separated integer list");
        out.push_back(v);
    }
    if (out.empty()) fail(ErrorKind::ConfigError, "empty integer list");
    return out;
}

namespace {

// Visits every key of a mapping; unknown keys are rejected.
class Section {
public:
    Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) fail(ErrorKind::ConfigError, where("") + "expected a mapping");
    }

    void on(const std::string& key, std::function<void(const YAML::Node&)> fn) { handlers_[key] = std::move(fn); }

    void run() const {
        if (!node_ || node_.IsNull()) return;
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            auto it = handlers_.find(key);
            if (it == handlers_.end()) fail(ErrorKind::ConfigError, where(key) + "unknown key");
            try {
                it->second(kv.second);
            } catch (const YAML::Exception& e) {
                fail(ErrorKind::ConfigError, where(key) + "invalid value (" + e.msg + ")");
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::ConfigError) throw;
                fail(ErrorKind::ConfigError, where(key) + e.what());
            }
        }
    }

    std::string where(const std::string& key) const {
        std::string p = path_.empty() ? key : (key.empty() ? path_ : path_ + "." + key);
        return p.empty() ? "" : p + ": ";
    }

private:
    YAML::Node node_;
    std::string path_;
    std::map<std::string, std::function<void(const YAML::Node&)>> handlers_;
};

template <typename V>
std::function<void(const YAML::Node&)> set(V& target) {
    return [&target](const YAML::Node& n) { target = n.as<V>(); };
}

std::function<void(const YAML::Node&)> set_ints(std::vector<int>& target) {
    return [&target](const YAML::Node& n) {
        if (n.IsScalar()) target = {n.as<int>()};
        else target = n.as<std::vector<int>>();
    };
}

struct PartialOptimizer {
    std::optional<std::string> kind;
    std::optional<double> lr, momentum, beta1, beta2, weight_decay, eps;

    void bind(Section& s) {
        s.on("kind", [this](const YAML::Node& n) { kind = n.as<std::string>(); });
        s.on("lr", [this](const YAML::Node& n) { lr = n.as<double>(); });
        s.on("momentum", [this](const YAML::Node& n) { momentum = n.as<double>(); });
        s.on("betas", [this](const YAML::Node& n) {
            auto b = n.as<std::vector<double>>();
            if (b.size() != 2) fail(ErrorKind::ConfigError, "betas needs two values");
            beta1 = b[0];
            beta2 = b[1];
        });
        s.on("weight_decay", [this](const YAML::Node& n) { weight_decay = n.as<double>(); });
        s.on("eps", [this](const YAML::Node& n) { eps = n.as<double>(); });
    }

    void apply(OptimizerConfig& o) const {
        if (kind) o.kind = parse_optimizer_kind(*kind);
        if (lr) o.learning_rate = *lr;
        if (momentum) o.momentum = *momentum;
        if (beta1) o.beta1 = *beta1;
        if (beta2) o.beta2 = *beta2;
        if (weight_decay) o.weight_decay = *weight_decay;
        if (eps) o.eps = *eps;
    }
};

void parse_synthetic(const YAML::Node& n, SyntheticSpec& s, const std::string& path) {
    Section sec(n, path);
    sec.on("categories", set(s.n_categories));
    sec.on("train_per_category", set(s.train_per_category));
    sec.on("test_normal_per_category", set(s.test_normal_per_category));
    sec.on("test_anomalous_per_category", set(s.test_anomalous_per_category));
    sec.on("resolution", set(s.resolution));
    sec.on("defect_area_fraction", set(s.defect_area_fraction));
    sec.on("noise", set(s.noise));
    sec.on("defect_contrast", set(s.defect_contrast));
    sec.on("seed", set(s.seed));
    sec.run();
}

}  // namespace

ExperimentConfig parse_config(const std::string& yaml_text, const ConfigOverrides& ov, const std::string& source) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        fail(ErrorKind::ConfigError, source + ": cannot parse: " + e.what());
    }
    if (root && !root.IsNull() && !root.IsMap()) fail(ErrorKind::ConfigError, source + ": expected a key-value mapping at the top level");

    // Host and profile decide the defaults, so they are read first.
    Host host = Host::Siamese;
    bool toy = ov.toy;
    try {
        if (root && root["host"]) host = parse_host(root["host"].as<std::string>());
        if (root && root["profile"]) {
            const auto p = root["profile"].as<std::string>();
            if (p != "standard" && p != "toy") fail(ErrorKind::ConfigError, "profile must be 'standard' or 'toy'");
            toy = toy || p == "toy";
        }
    } catch (const YAML::Exception& e) {
        fail(ErrorKind::ConfigError, source + ": " + e.what());
    }
    if (ov.host) host = *ov.host;

    ExperimentConfig c = default_config(host, toy);
    PartialOptimizer model_opt, disc_opt;
    std::optional<int> resolution;

    try {
        Section top(root, "");
        top.on("host", [](const YAML::Node&) {});
        top.on("profile", [](const YAML::Node&) {});
        top.on("adversarial", set(c.adversarial));
        top.on("symmetric_adversarial", set(c.trainer.symmetric_adversarial));
        top.on("shots", set_ints(c.shots));
        top.on("runs", set(c.runs));
        top.on("seed", set(c.seed));
        top.on("resolution", [&](const YAML::Node& n) { resolution = n.as<int>(); });
        top.on("epochs", set(c.epochs));
        top.on("batch_size", set(c.trainer.batch_size));
        top.on("pairs_per_epoch", set(c.trainer.pairs_per_epoch));
        top.on("disc_steps", set(c.trainer.disc_steps));
        top.on("grad_clip", set(c.trainer.grad_clip));
        top.on("standardize", set(c.standardize));
        top.on("targets", [&](const YAML::Node& n) { c.targets = n.as<std::vector<std::string>>(); });
        top.on("checkpoint_every", set(c.checkpoint_every));
        top.on("output", set(c.output));
        top.on("dataset", [&](const YAML::Node& n) {
            Section s(n, "dataset");
            s.on("root", set(c.dataset.root));
            s.on("layout", [&](const YAML::Node& v) { c.dataset.layout = parse_layout(v.as<std::string>()); });
            s.on("synthetic", [&](const YAML::Node& v) {
                SyntheticSpec spec;
                parse_synthetic(v, spec, "dataset.synthetic");
                c.dataset.synthetic = spec;
            });
            s.run();
        });
        top.on("model", [&](const YAML::Node& n) {
            Section s(n, "model");
            auto& m = c.model;
            s.on("encoder_channels", set_ints(m.encoder_channels));
            s.on("stn_channels", set(m.stn_channels));
            s.on("predictor_hidden", set(m.predictor_hidden));
            s.on("decoder_blocks", set(m.decoder_blocks));
            s.on("decoder_ffn", set(m.decoder_ffn));
            s.on("mask_ratio", set(m.mask_ratio));
            s.on("neighborhood", set(m.neighborhood));
            s.on("f0_post_mask", set(m.f0_post_mask));
            s.on("disc_channels", set_ints(m.disc_channels));
            s.on("disc_strides", set_ints(m.disc_strides));
            s.on("disc_slope", set(m.disc_slope));
            s.on("norm_eps", set(m.norm_eps));
            s.on("cosine_eps", set(m.cosine_eps));
            s.run();
        });
        top.on("optimizer", [&](const YAML::Node& n) {
            Section s(n, "optimizer");
            model_opt.bind(s);
            s.run();
        });
        top.on("discriminator_optimizer", [&](const YAML::Node& n) {
            Section s(n, "discriminator_optimizer");
            disc_opt.bind(s);
            s.run();
        });
        top.on("scoring", [&](const YAML::Node& n) {
            Section s(n, "scoring");
            s.on("shrinkage", set(c.scoring.shrinkage));
            s.on("sigma", set(c.scoring.sigma));
            s.on("top_k", set(c.scoring.top_k));
            s.on("pixel_budget", set(c.scoring.pixel_budget));
            s.on("export_maps", set(c.scoring.export_maps));
            s.run();
        });
        top.run();
    } catch (const Error& e) {
        fail(e.kind(), source + ": " + e.message());
    }

    if (resolution) c.model.resolution = *resolution;
    model_opt.apply(c.trainer.model_optimizer);
    c.trainer.disc_optimizer = c.trainer.model_optimizer;  // inherit, then apply explicit fields
    disc_opt.apply(c.trainer.disc_optimizer);

    if (ov.seed) c.seed = *ov.seed;
    if (ov.output) c.output = *ov.output;
    if (ov.adversarial) c.adversarial = *ov.adversarial;
    if (ov.shots) c.shots = *ov.shots;
    if (ov.runs) c.runs = *ov.runs;
    c.trainer.adversarial = c.adversarial;

    try {
        c.validate();
    } catch (const Error& e) {
        fail(ErrorKind::ConfigError, source + ": " + e.message());
    }
    return c;
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path, const ConfigOverrides& overrides) {
    if (!path) return parse_config("", overrides, "<defaults>");
    std::ifstream in(*path);
    if (!in) fail(ErrorKind::ConfigError, "cannot read config file " + path->string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), overrides, path->string());
}

namespace {

void emit_optimizer(YAML::Emitter& e, const OptimizerConfig& o) {
    e << YAML::BeginMap;
    e << YAML::Key << "kind" << YAML::Value << to_string(o.kind);
    e << YAML::Key << "lr" << YAML::Value << o.learning_rate;
    e << YAML::Key << "momentum" << YAML::Value << o.momentum;
    e << YAML::Key << "betas" << YAML::Value << YAML::Flow << std::vector<double>{o.beta1, o.beta2};
    e << YAML::Key << "weight_decay" << YAML::Value << o.weight_decay;
    e << YAML::Key << "eps" << YAML::Value << o.eps;
    e << YAML::EndMap;
}

void emit(YAML::Emitter& e, const ExperimentConfig& c, bool cell_only) {
    e.SetDoublePrecision(17);
    e << YAML::BeginMap;
    e << YAML::Key << "host" << YAML::Value << to_string(c.model.host);
    e << YAML::Key << "profile" << YAML::Value << c.profile;
    e << YAML::Key << "adversarial" << YAML::Value << c.adversarial;
    e << YAML::Key << "symmetric_adversarial" << YAML::Value << c.trainer.symmetric_adversarial;
    if (!cell_only) {
        e << YAML::Key << "shots" << YAML::Value << YAML::Flow << c.shots;
        e << YAML::Key << "runs" << YAML::Value << c.runs;
        e << YAML::Key << "seed" << YAML::Value << c.seed;
        e << YAML::Key << "targets" << YAML::Value << YAML::Flow << c.targets;
        e << YAML::Key << "output" << YAML::Value << c.output;
    }
    e << YAML::Key << "resolution" << YAML::Value << c.model.resolution;
    e << YAML::Key << "epochs" << YAML::Value << c.epochs;
    e << YAML::Key << "batch_size" << YAML::Value << c.trainer.batch_size;
    e << YAML::Key << "pairs_per_epoch" << YAML::Value << c.trainer.pairs_per_epoch;
    e << YAML::Key << "disc_steps" << YAML::Value << c.trainer.disc_steps;
    e << YAML::Key << "grad_clip" << YAML::Value << c.trainer.grad_clip;
    e << YAML::Key << "standardize" << YAML::Value << c.standardize;
    e << YAML::Key << "checkpoint_every" << YAML::Value << c.checkpoint_every;

    e << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "root" << YAML::Value << c.dataset.root;
    e << YAML::Key << "layout" << YAML::Value << to_string(c.dataset.layout);
    if (c.dataset.synthetic) {
        const auto& s = *c.dataset.synthetic;
        e << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
        e << YAML::Key << "categories" << YAML::Value << s.n_categories;
        e << YAML::Key << "train_per_category" << YAML::Value << s.train_per_category;
        e << YAML::Key << "test_normal_per_category" << YAML::Value << s.test_normal_per_category;
        e << YAML::Key << "test_anomalous_per_category" << YAML::Value << s.test_anomalous_per_category;
        e << YAML::Key << "resolution" << YAML::Value << s.resolution;
        e << YAML::Key << "defect_area_fraction" << YAML::Value << s.defect_area_fraction;
        e << YAML::Key << "noise" << YAML::Value << s.noise;
        e << YAML::Key << "defect_contrast" << YAML::Value << s.defect_contrast;
        e << YAML::Key << "seed" << YAML::Value << s.seed;
        e << YAML::EndMap;
    }
    e << YAML::EndMap;

    const auto& m = c.model;
    e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "encoder_channels" << YAML::Value << YAML::Flow << m.encoder_channels;
    e << YAML::Key << "stn_channels" << YAML::Value << m.stn_channels;
    e << YAML::Key << "predictor_hidden" << YAML::Value << m.predictor_hidden;
    e << YAML::Key << "decoder_blocks" << YAML::Value << m.decoder_blocks;
    e << YAML::Key << "decoder_ffn" << YAML::Value << m.decoder_ffn;
    e << YAML::Key << "mask_ratio" << YAML::Value << m.mask_ratio;
    e << YAML::Key << "neighborhood" << YAML::Value << m.neighborhood;
    e << YAML::Key << "f0_post_mask" << YAML::Value << m.f0_post_mask;
    e << YAML::Key << "disc_channels" << YAML::Value << YAML::Flow << m.disc_channels;
    e << YAML::Key << "disc_strides" << YAML::Value << YAML::Flow << m.disc_strides;
    e << YAML::Key << "disc_slope" << YAML::Value << m.disc_slope;
    e << YAML::Key << "norm_eps" << YAML::Value << m.norm_eps;
    e << YAML::Key << "cosine_eps" << YAML::Value << m.cosine_eps;
    e << YAML::EndMap;

    e << YAML::Key << "optimizer" << YAML::Value;
    emit_optimizer(e, c.trainer.model_optimizer);
    e << YAML::Key << "discriminator_optimizer" << YAML::Value;
    emit_optimizer(e, c.trainer.disc_optimizer);

    e << YAML::Key << "scoring" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "shrinkage" << YAML::Value << c.scoring.shrinkage;
    e << YAML::Key << "sigma" << YAML::Value << c.scoring.sigma;
    e << YAML::Key << "top_k" << YAML::Value << c.scoring.top_k;
    e << YAML::Key << "pixel_budget" << YAML::Value << c.scoring.pixel_budget;
    if (!cell_only) e << YAML::Key << "export_maps" << YAML::Value << c.scoring.export_maps;
    e << YAML::EndMap;
    e << YAML::EndMap;
}

}  // namespace

std::string to_yaml(const ExperimentConfig& cfg) {
    YAML::Emitter e;
    emit(e, cfg, false);
    return std::string(e.c_str()) + "\n";
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) fail(ErrorKind::IoError, "SHA-256 failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::NotFound, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

std::string config_hash(const ExperimentConfig& cfg) {
    YAML::Emitter e;
    emit(e, cfg, true);
    return sha256_hex(e.c_str()).substr(0, 12);
}

}  // namespace fsad
