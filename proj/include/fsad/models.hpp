#pragma once

// Toy-scale host models and the shared discriminator.
//
// Siamese registration host:  image -> STN -> encoder (z) -> predictor (p),
//   both branches share weights; the adversarial pair is (p0, p1).
// Masked reconstruction host: image -> frozen encoder (b) -> input projection
//   (z) -> neighborhood masking -> attention decoder (z_hat) -> output
//   projection (b_hat ~ b); the adversarial pair is (z, z_hat).

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fsad/autograd.hpp"
#include "fsad/params.hpp"
#include "fsad/rng.hpp"

namespace fsad {

enum class Host { Siamese, MaskedRecon };

inline const char* to_string(Host h) { return h == Host::Siamese ? "siamese" : "masked-recon"; }

inline Host parse_host(const std::string& s) {
    if (s == "siamese") return Host::Siamese;
    if (s == "masked-recon") return Host::MaskedRecon;
    fail(ErrorKind::ConfigError, "unknown host '" + s + "' (expected siamese or masked-recon)");
}

struct ModelConfig {
    Host host = Host::Siamese;
    int resolution = 64;
    int in_channels = 3;
    std::vector<int> encoder_channels{16, 32, 64};  // three stride-2 blocks
    int stn_channels = 8;
    int predictor_hidden = 64;
    int decoder_blocks = 2;
    int decoder_ffn = 64;
    double mask_ratio = 0.25;
    int neighborhood = 1;
    bool f0_post_mask = false;  // f0 = masked decoder input instead of clean z
    std::vector<int> disc_channels{32, 32, 32};
    std::vector<int> disc_strides{1, 2, 2};
    double disc_slope = 0.2;
    double norm_eps = 1e-5;
    double cosine_eps = 1e-8;

    int feature_channels() const { return encoder_channels.back(); }
    int feature_size() const { return resolution / 8; }
    Shape feature_shape() const { return {feature_channels(), feature_size(), feature_size()}; }

    void validate() const {
        if (resolution <= 0 || resolution % 8 != 0) fail(ErrorKind::ConfigError, "resolution " + std::to_string(resolution) + " is not a positive multiple of 8");
        if (encoder_channels.size() != 3) fail(ErrorKind::ConfigError, "encoder needs exactly three stride-2 blocks");
        for (int c : encoder_channels)
            if (c <= 0) fail(ErrorKind::ConfigError, "encoder channel widths must be positive");
        if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) fail(ErrorKind::ConfigError, "mask ratio must lie in [0,1]");
        if (neighborhood < 1 || neighborhood % 2 == 0) fail(ErrorKind::ConfigError, "masking neighborhood must be a positive odd integer");
        if (neighborhood > feature_size()) fail(ErrorKind::ConfigError, "masking neighborhood exceeds the feature grid");
        if (disc_channels.empty() || disc_channels.size() != disc_strides.size()) fail(ErrorKind::ConfigError, "discriminator channel/stride lists must be non-empty and equal length");
        if (decoder_blocks < 1) fail(ErrorKind::ConfigError, "decoder needs at least one block");
    }
};

namespace layers {

struct Conv {
    std::size_t w = 0, b = 0;
    int stride = 1, pad = 0;

    template <typename T>
    static Conv make(ParamBuilder<T>& pb, const std::string& name, int in, int out, int k, int stride) {
        Conv c;
        c.w = pb.he_uniform(name + ".weight", {out, in, k, k}, in * k * k);
        c.b = pb.fill(name + ".bias", {out}, T(0));
        c.stride = stride;
        c.pad = k / 2;
        return c;
    }

    template <typename T>
    ag::Var<T> operator()(const Binding<T>& p, const ag::Var<T>& x) const {
        return ag::conv2d(x, p[w], p[b], stride, pad);
    }
};

struct Dense {
    std::size_t w = 0, b = 0;

    template <typename T>
    static Dense make(ParamBuilder<T>& pb, const std::string& name, int in, int out) {
        Dense d;
        d.w = pb.uniform(name + ".weight", {out, in}, 1.0 / std::sqrt(static_cast<double>(in)));
        d.b = pb.fill(name + ".bias", {out}, T(0));
        return d;
    }
};

}  // namespace layers

// ------------------------------------------------------------------ encoder

class Encoder {
public:
    template <typename T>
    void build(ParamBuilder<T>& pb, const std::string& prefix, const ModelConfig& cfg) {
        int in = cfg.in_channels;
        for (std::size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
            convs_.push_back(layers::Conv::make(pb, prefix + ".conv" + std::to_string(i + 1), in, cfg.encoder_channels[i], 3, 2));
            in = cfg.encoder_channels[i];
        }
        resolution_ = cfg.resolution;
    }

    // image [3,R,R] -> [C_f, R/8, R/8]
    template <typename T>
    ag::Var<T> forward(const Binding<T>& p, const ag::Var<T>& image) const {
        if (image.shape().size() != 3 || image.shape()[1] % 8 != 0 || image.shape()[2] % 8 != 0) {
            fail(ErrorKind::ConfigError, "encoder input " + shape_str(image.shape()) + " is not divisible by 8");
        }
        ag::Var<T> x = image;
        for (const auto& c : convs_) x = ag::relu(c(p, x));
        return x;
    }

private:
    std::vector<layers::Conv> convs_;
    int resolution_ = 0;
};

// ------------------------------------------------------------------ STN

class SpatialTransformer {
public:
    template <typename T>
    void build(ParamBuilder<T>& pb, const std::string& prefix, const ModelConfig& cfg) {
        conv1_ = layers::Conv::make(pb, prefix + ".conv1", cfg.in_channels, cfg.stn_channels, 3, 2);
        conv2_ = layers::Conv::make(pb, prefix + ".conv2", cfg.stn_channels, cfg.stn_channels, 3, 2);
        // Zero weight + identity bias: the predicted affine starts at identity.
        fc_.w = pb.fill(prefix + ".fc.weight", {6, cfg.stn_channels}, T(0));
        fc_.b = pb.values(prefix + ".fc.bias", {6}, std::vector<T>{1, 0, 0, 0, 1, 0});
    }

    template <typename T>
    ag::Var<T> predict_affine(const Binding<T>& p, const ag::Var<T>& image) const {
        auto h = ag::relu(conv1_(p, image));
        h = ag::relu(conv2_(p, h));
        return ag::linear(ag::global_avg_pool(h), p[fc_.w], p[fc_.b]);
    }

    template <typename T>
    std::pair<ag::Var<T>, ag::Var<T>> forward(const Binding<T>& p, const ag::Var<T>& image) const {
        auto theta = predict_affine(p, image);
        return {theta, ag::affine_grid_sample(image, theta)};
    }

private:
    layers::Conv conv1_, conv2_;
    layers::Dense fc_;
};

// ------------------------------------------------------------------ predictor

class Predictor {
public:
    template <typename T>
    void build(ParamBuilder<T>& pb, const std::string& prefix, const ModelConfig& cfg) {
        fc1_ = layers::Conv::make(pb, prefix + ".conv1", cfg.feature_channels(), cfg.predictor_hidden, 1, 1);
        fc2_ = layers::Conv::make(pb, prefix + ".conv2", cfg.predictor_hidden, cfg.feature_channels(), 1, 1);
    }

    template <typename T>
    ag::Var<T> forward(const Binding<T>& p, const ag::Var<T>& z) const {
        return fc2_(p, ag::relu(fc1_(p, z)));
    }

private:
    layers::Conv fc1_, fc2_;
};

// ------------------------------------------------------------------ decoder

template <typename T>
struct DecoderOutput {
    ag::Var<T> out;                       // [C_f, H_f, W_f]
    std::vector<Tensor<T>> attention;     // one [P,P] row-stochastic matrix per block
};

// Stack of self-attention blocks over feature positions with a learned
// positional encoding: x <- x + Wo softmax(QK^T/sqrt(d)) V; x <- x + FFN(x).
class AttentionDecoder {
public:
    template <typename T>
    void build(ParamBuilder<T>& pb, const std::string& prefix, const ModelConfig& cfg) {
        const int d = cfg.feature_channels();
        const int P = cfg.feature_size() * cfg.feature_size();
        pos_ = pb.normal(prefix + ".pos_embed", {P, d}, 0.02);
        for (int i = 0; i < cfg.decoder_blocks; ++i) {
            const std::string b = prefix + ".block" + std::to_string(i + 1);
            Block blk;
            blk.q = layers::Dense::make(pb, b + ".q", d, d);
            blk.k = layers::Dense::make(pb, b + ".k", d, d);
            blk.v = layers::Dense::make(pb, b + ".v", d, d);
            blk.o = layers::Dense::make(pb, b + ".o", d, d);
            blk.ff1 = layers::Dense::make(pb, b + ".ff1", d, cfg.decoder_ffn);
            blk.ff2 = layers::Dense::make(pb, b + ".ff2", cfg.decoder_ffn, d);
            blocks_.push_back(blk);
        }
        width_ = d;
    }

    template <typename T>
    DecoderOutput<T> forward(const Binding<T>& p, const ag::Var<T>& masked) const {
        const int H = masked.shape()[1], W = masked.shape()[2];
        auto x = ag::add(ag::to_tokens(masked), p[pos_]);
        const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(width_));
        DecoderOutput<T> res;
        for (const auto& blk : blocks_) {
            auto q = ag::linear_tokens(x, p[blk.q.w], p[blk.q.b]);
            auto k = ag::linear_tokens(x, p[blk.k.w], p[blk.k.b]);
            auto v = ag::linear_tokens(x, p[blk.v.w], p[blk.v.b]);
            auto attn = ag::softmax_rows(ag::scale(ag::matmul_nt(q, k), inv_sqrt_d));
            res.attention.push_back(attn.value());
            auto h = ag::linear_tokens(ag::matmul(attn, v), p[blk.o.w], p[blk.o.b]);
            x = ag::add(x, h);
            auto f = ag::linear_tokens(ag::relu(ag::linear_tokens(x, p[blk.ff1.w], p[blk.ff1.b])), p[blk.ff2.w], p[blk.ff2.b]);
            x = ag::add(x, f);
        }
        res.out = ag::from_tokens(x, H, W);
        if (!res.out.value().all_finite()) fail(ErrorKind::NumericalError, "decoder produced non-finite output");
        return res;
    }

private:
    struct Block {
        layers::Dense q, k, v, o, ff1, ff2;
    };
    std::size_t pos_ = 0;
    std::vector<Block> blocks_;
    int width_ = 0;
};

// ------------------------------------------------------------------ masking

struct MaskGrid {
    int height = 0, width = 0;
    std::vector<std::uint8_t> cells;  // row-major, 1 = replaced by the mask token

    std::size_t count() const {
        std::size_t n = 0;
        for (auto c : cells) n += c;
        return n;
    }
};

// Chooses round(ratio * H * W) centers without replacement and marks each
// center's k x k neighborhood (clipped at the border).
inline MaskGrid sample_mask(int height, int width, double ratio, int neighborhood, Rng& rng) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) fail(ErrorKind::ConfigError, "mask ratio must lie in [0,1]");
    if (neighborhood < 1 || neighborhood % 2 == 0) fail(ErrorKind::ConfigError, "neighborhood must be a positive odd integer");
    if (neighborhood > std::min(height, width)) fail(ErrorKind::ConfigError, "neighborhood exceeds the feature grid");
    const std::size_t P = static_cast<std::size_t>(height) * width;
    const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(P)));
    MaskGrid m{height, width, std::vector<std::uint8_t>(P, 0)};
    const int r = neighborhood / 2;
    for (std::size_t center : rng.choose(P, count)) {
        const int cy = static_cast<int>(center) / width, cx = static_cast<int>(center) % width;
        for (int y = std::max(0, cy - r); y <= std::min(height - 1, cy + r); ++y)
            for (int x = std::max(0, cx - r); x <= std::min(width - 1, cx + r); ++x) m.cells[static_cast<std::size_t>(y) * width + x] = 1;
    }
    return m;
}

// ------------------------------------------------------------------ discriminator

template <typename T>
struct DiscriminatorTrace {
    std::vector<Tensor<T>> pre_norm;    // input to each instance-norm layer
    std::vector<Tensor<T>> normalized;  // output of each instance-norm layer
    T logit = 0;
};

// conv -> instance norm -> LeakyReLU blocks, global average pool, linear head, sigmoid.
template <typename T>
class Discriminator {
public:
    Discriminator(const ModelConfig& cfg, Rng rng) : feature_shape_(cfg.feature_shape()), cfg_(cfg) {
        ParamBuilder<T> pb(params_, rng);
        int in = cfg.feature_channels();
        for (std::size_t i = 0; i < cfg.disc_channels.size(); ++i) {
            convs_.push_back(layers::Conv::make(pb, "disc.conv" + std::to_string(i + 1), in, cfg.disc_channels[i], 3, cfg.disc_strides[i]));
            in = cfg.disc_channels[i];
        }
        head_ = layers::Dense::make(pb, "disc.head", in, 1);
    }

    const ParameterSet<T>& initial_params() const { return params_; }
    const Shape& feature_shape() const { return feature_shape_; }

    // Probability that f belongs to class 1, as a [1] var.
    ag::Var<T> forward(const Binding<T>& p, const ag::Var<T>& f, DiscriminatorTrace<T>* trace = nullptr) const {
        if (f.shape() != feature_shape_) fail(ErrorKind::ShapeError, "discriminator expects " + shape_str(feature_shape_) + ", got " + shape_str(f.shape()));
        ag::Var<T> x = f;
        for (const auto& c : convs_) {
            x = c(p, x);
            if (trace) trace->pre_norm.push_back(x.value());
            x = ag::instance_norm(x, static_cast<T>(cfg_.norm_eps));
            if (trace) trace->normalized.push_back(x.value());
            x = ag::leaky_relu(x, static_cast<T>(cfg_.disc_slope));
        }
        auto logit = ag::linear(ag::global_avg_pool(x), p[head_.w], p[head_.b]);
        if (trace) trace->logit = logit.item();
        return ag::sigmoid(logit);
    }

private:
    Shape feature_shape_;
    ModelConfig cfg_;
    ParameterSet<T> params_;
    std::vector<layers::Conv> convs_;
    layers::Dense head_;
};

// ------------------------------------------------------------------ hosts

template <typename T>
struct HostForward {
    ag::Var<T> loss;  // L_M for this sample
    ag::Var<T> f0, f1;
};

// Values substituted for stop-gradient targets so that finite differences
// see the same surrogate objective as the analytic gradient.
template <typename T>
struct FrozenTargets {
    std::vector<Tensor<T>> values;
};

template <typename T>
class HostModel {
public:
    virtual ~HostModel() = default;
    virtual Host host() const = 0;
    virtual const ModelConfig& config() const = 0;
    virtual const ParameterSet<T>& initial_params() const = 0;

    // One training sample (a same-category image pair). The Siamese host
    // returns one forward; the reconstruction host returns one per image.
    // When `frozen_in` is set its values replace the stop-gradient targets;
    // `frozen_out` receives the targets actually used.
    virtual std::vector<HostForward<T>> forward_sample(const Binding<T>& p, const Tensor<T>& i0, const Tensor<T>& i1, Rng& rng,
                                                       const FrozenTargets<T>* frozen_in = nullptr,
                                                       FrozenTargets<T>* frozen_out = nullptr) const = 0;

    // f0 of a single image (used for embedding dumps).
    virtual Tensor<T> embed(const Binding<T>& p, const Tensor<T>& image) const = 0;
};

template <typename T>
struct SiameseOutputs {
    ag::Var<T> theta0, theta1;
    ag::Var<T> warped0, warped1;
    ag::Var<T> z0, z1, p0, p1;
};

// L_M = -1/2 [cos(p0, sg(z1)) + cos(p1, sg(z0))], cosine per position over channels, averaged.
template <typename T>
ag::Var<T> registration_loss(const ag::Var<T>& p0, const ag::Var<T>& target_z1, const ag::Var<T>& p1, const ag::Var<T>& target_z0, T eps) {
    auto a = ag::cosine_mean(p0, ag::detach(target_z1), eps);
    auto b = ag::cosine_mean(p1, ag::detach(target_z0), eps);
    return ag::scale(ag::add(a, b), T(-0.5));
}

template <typename T>
ag::Var<T> registration_loss(const SiameseOutputs<T>& out, T eps = T(1e-8)) {
    return registration_loss(out.p0, out.z1, out.p1, out.z0, eps);
}

// Mean squared error over all C_f*H_f*W_f elements.
template <typename T>
ag::Var<T> reconstruction_loss(const ag::Var<T>& z, const ag::Var<T>& z_hat) {
    if (z.shape() != z_hat.shape()) fail(ErrorKind::ShapeError, "reconstruction_loss: " + shape_str(z.shape()) + " vs " + shape_str(z_hat.shape()));
    return ag::mse(z_hat, z);
}

template <typename T>
class SiameseModel final : public HostModel<T> {
public:
    SiameseModel(ModelConfig cfg, Rng rng) : cfg_(std::move(cfg)) {
        cfg_.host = Host::Siamese;
        cfg_.validate();
        ParamBuilder<T> pb(params_, rng);
        stn_.build(pb, "stn", cfg_);
        encoder_.build(pb, "encoder", cfg_);
        predictor_.build(pb, "predictor", cfg_);
    }

    Host host() const override { return Host::Siamese; }
    const ModelConfig& config() const override { return cfg_; }
    const ParameterSet<T>& initial_params() const override { return params_; }

    std::pair<ag::Var<T>, ag::Var<T>> stn(const Binding<T>& p, const ag::Var<T>& image) const { return stn_.forward(p, image); }
    ag::Var<T> encode(const Binding<T>& p, const ag::Var<T>& image) const { return encoder_.forward(p, image); }
    ag::Var<T> predict(const Binding<T>& p, const ag::Var<T>& z) const { return predictor_.forward(p, z); }

    SiameseOutputs<T> forward(const Binding<T>& p, const Tensor<T>& i0, const Tensor<T>& i1) const {
        SiameseOutputs<T> out;
        branch(p, i0, out.theta0, out.warped0, out.z0, out.p0);
        branch(p, i1, out.theta1, out.warped1, out.z1, out.p1);
        return out;
    }

    // Encoder features after the STN (used for Gaussian scoring).
    Tensor<T> features(const Binding<T>& p, const Tensor<T>& image) const {
        ag::Var<T> theta, warped, z, pr;
        branch(p, image, theta, warped, z, pr, false);
        return z.value();
    }

    std::vector<HostForward<T>> forward_sample(const Binding<T>& p, const Tensor<T>& i0, const Tensor<T>& i1, Rng&,
                                               const FrozenTargets<T>* frozen_in, FrozenTargets<T>* frozen_out) const override {
        auto out = forward(p, i0, i1);
        ag::Var<T> t0 = out.z0, t1 = out.z1;
        if (frozen_in) {
            t0 = ag::constant(frozen_in->values.at(0));
            t1 = ag::constant(frozen_in->values.at(1));
        }
        if (frozen_out) frozen_out->values = {t0.value(), t1.value()};
        HostForward<T> f;
        f.loss = registration_loss(out.p0, t1, out.p1, t0, static_cast<T>(cfg_.cosine_eps));
        f.f0 = out.p0;
        f.f1 = out.p1;
        return {f};
    }

    Tensor<T> embed(const Binding<T>& p, const Tensor<T>& image) const override {
        ag::Var<T> theta, warped, z, pr;
        branch(p, image, theta, warped, z, pr);
        return pr.value();
    }

private:
    void branch(const Binding<T>& p, const Tensor<T>& image, ag::Var<T>& theta, ag::Var<T>& warped, ag::Var<T>& z, ag::Var<T>& pr,
                bool with_predictor = true) const {
        if (image.shape != Shape{cfg_.in_channels, cfg_.resolution, cfg_.resolution}) {
            fail(ErrorKind::ShapeError, "siamese branch expects " + shape_str({cfg_.in_channels, cfg_.resolution, cfg_.resolution}) + ", got " + shape_str(image.shape));
        }
        auto [th, w] = stn_.forward(p, ag::constant(image));
        theta = th;
        warped = w;
        z = encoder_.forward(p, warped);
        if (with_predictor) pr = predictor_.forward(p, z);
    }

    ModelConfig cfg_;
    ParameterSet<T> params_;
    SpatialTransformer stn_;
    Encoder encoder_;
    Predictor predictor_;
};

template <typename T>
struct ReconOutputs {
    ag::Var<T> backbone;        // frozen encoder features b (reconstruction target)
    ag::Var<T> z;               // decoder input: input projection of b (f0)
    ag::Var<T> masked;          // z with masked cells replaced by the mask token
    ag::Var<T> z_hat;           // decoder output (f1)
    ag::Var<T> backbone_hat;    // output projection of z_hat, compared with b
    MaskGrid mask;
    std::vector<Tensor<T>> attention;
};

// The encoder is a frozen backbone; a 1x1 input projection maps its features
// to decoder tokens and a 1x1 output projection maps the decoder output back.
// L_M = mse(out_proj(decoder(mask(in_proj(b)))), b).
template <typename T>
class MaskedReconModel final : public HostModel<T> {
public:
    MaskedReconModel(ModelConfig cfg, Rng rng) : cfg_(std::move(cfg)) {
        cfg_.host = Host::MaskedRecon;
        cfg_.validate();
        ParamBuilder<T> pb(params_, rng);
        pb.set_frozen(true);
        encoder_.build(pb, "encoder", cfg_);
        pb.set_frozen(false);
        const int C = cfg_.feature_channels();
        proj_in_ = layers::Conv::make(pb, "decoder.proj_in", C, C, 1, 1);
        token_ = pb.normal("decoder.mask_token", {C}, 0.02);
        decoder_.build(pb, "decoder", cfg_);
        proj_out_ = layers::Conv::make(pb, "decoder.proj_out", C, C, 1, 1);
    }

    Host host() const override { return Host::MaskedRecon; }
    const ModelConfig& config() const override { return cfg_; }
    const ParameterSet<T>& initial_params() const override { return params_; }

    ag::Var<T> backbone(const Binding<T>& p, const Tensor<T>& image) const {
        if (image.shape != Shape{cfg_.in_channels, cfg_.resolution, cfg_.resolution}) {
            fail(ErrorKind::ShapeError, "encoder expects " + shape_str({cfg_.in_channels, cfg_.resolution, cfg_.resolution}) + ", got " + shape_str(image.shape));
        }
        return encoder_.forward(p, ag::constant(image));
    }

    ag::Var<T> project_in(const Binding<T>& p, const ag::Var<T>& b) const { return proj_in_(p, b); }
    ag::Var<T> project_out(const Binding<T>& p, const ag::Var<T>& z_hat) const { return proj_out_(p, z_hat); }

    ag::Var<T> apply_mask(const Binding<T>& p, const ag::Var<T>& z, const MaskGrid& mask) const {
        return ag::mask_replace(z, p[token_], mask.cells);
    }

    DecoderOutput<T> decode(const Binding<T>& p, const ag::Var<T>& masked) const { return decoder_.forward(p, masked); }

    ReconOutputs<T> forward(const Binding<T>& p, const Tensor<T>& image, const MaskGrid& mask) const {
        ReconOutputs<T> out;
        out.backbone = backbone(p, image);
        out.z = project_in(p, out.backbone);
        out.mask = mask;
        out.masked = apply_mask(p, out.z, mask);
        auto dec = decode(p, out.masked);
        out.z_hat = dec.out;
        out.attention = std::move(dec.attention);
        out.backbone_hat = project_out(p, out.z_hat);
        return out;
    }

    MaskGrid draw_mask(Rng& rng) const {
        return sample_mask(cfg_.feature_size(), cfg_.feature_size(), cfg_.mask_ratio, cfg_.neighborhood, rng);
    }

    std::vector<HostForward<T>> forward_sample(const Binding<T>& p, const Tensor<T>& i0, const Tensor<T>& i1, Rng& rng,
                                               const FrozenTargets<T>* frozen_in, FrozenTargets<T>* frozen_out) const override {
        std::vector<HostForward<T>> res;
        if (frozen_out) frozen_out->values.clear();
        const Tensor<T>* images[2] = {&i0, &i1};
        for (int i = 0; i < 2; ++i) {
            auto out = forward(p, *images[i], draw_mask(rng));
            ag::Var<T> target = frozen_in ? ag::constant(frozen_in->values.at(i)) : out.backbone;
            if (frozen_out) frozen_out->values.push_back(target.value());
            HostForward<T> f;
            f.loss = reconstruction_loss(ag::detach(target), out.backbone_hat);
            f.f0 = cfg_.f0_post_mask ? out.masked : out.z;
            f.f1 = out.z_hat;
            res.push_back(std::move(f));
        }
        return res;
    }

    // Reconstruction for scoring: positions are split into stride-s parity
    // groups (s = k + 1); each group is masked in turn together with the k x k
    // neighborhood of every cell, and the reconstruction at the group cells is
    // kept. Returns (b, b_hat).
    std::pair<Tensor<T>, Tensor<T>> reconstruct_for_scoring(const Binding<T>& p, const Tensor<T>& image) const {
        auto b = backbone(p, image);
        auto z = project_in(p, b);
        const int H = cfg_.feature_size(), W = H, C = cfg_.feature_channels();
        const int k = cfg_.neighborhood, r = k / 2, s = k + 1;
        Tensor<T> b_hat(b.shape());
        for (int gy = 0; gy < s; ++gy)
            for (int gx = 0; gx < s; ++gx) {
                MaskGrid m{H, W, std::vector<std::uint8_t>(static_cast<std::size_t>(H) * W, 0)};
                for (int y = gy; y < H; y += s)
                    for (int x = gx; x < W; x += s)
                        for (int yy = std::max(0, y - r); yy <= std::min(H - 1, y + r); ++yy)
                            for (int xx = std::max(0, x - r); xx <= std::min(W - 1, x + r); ++xx) m.cells[static_cast<std::size_t>(yy) * W + xx] = 1;
                auto rec = project_out(p, decode(p, apply_mask(p, z, m)).out).value();
                for (int c = 0; c < C; ++c)
                    for (int y = gy; y < H; y += s)
                        for (int x = gx; x < W; x += s) b_hat.at(c, y, x) = rec.at(c, y, x);
            }
        return {b.value(), b_hat};
    }

    Tensor<T> embed(const Binding<T>& p, const Tensor<T>& image) const override { return project_in(p, backbone(p, image)).value(); }

private:
    ModelConfig cfg_;
    ParameterSet<T> params_;
    Encoder encoder_;
    layers::Conv proj_in_, proj_out_;
    std::size_t token_ = 0;
    AttentionDecoder decoder_;
};

template <typename T>
std::unique_ptr<HostModel<T>> make_host(const ModelConfig& cfg, Rng rng) {
    if (cfg.host == Host::Siamese) return std::make_unique<SiameseModel<T>>(cfg, rng);
    return std::make_unique<MaskedReconModel<T>>(cfg, rng);
}

}  // namespace fsad
