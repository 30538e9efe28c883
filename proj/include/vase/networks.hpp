#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vase/checkpoint.hpp"
#include "vase/conv.hpp"
#include "vase/gaussian.hpp"
#include "vase/tensor.hpp"

namespace vase {

enum class Arch { Mlp, Conv };
enum class Likelihood { Bernoulli, Gaussian };

struct ModelConfig {
    int latent_dim = 24;
    int max_environments = 7;
    int hidden = 256;
    Arch arch = Arch::Mlp;
    int image_h = 32;
    int image_w = 32;
    int channels = 1;
    Likelihood likelihood = Likelihood::Bernoulli;
    double decoder_sigma = 0.1;

    int pixels() const { return image_h * image_w * channels; }
};

template <typename S>
struct DenseT {
    TensorT<S> w;
    TensorT<S> b;

    static DenseT init(Index fan_in, Index fan_out, Rng& rng) {
        DenseT d;
        d.w = TensorT<S>::zeros({fan_in, fan_out}, true);
        d.b = TensorT<S>::zeros({fan_out}, true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        rng.fill_uniform(d.w.values(), -bound, bound);
        return d;
    }

    TensorT<S> operator()(const TensorT<S>& x) const { return affine(x, w, b); }
};

template <typename S>
struct ConvLayerT {
    TensorT<S> w;  // conv: [filters, c_in * 16]; transpose: [f_in, c_out * 16]
    TensorT<S> b;

    static ConvLayerT init(Index c_in, Index filters, Rng& rng) {
        ConvLayerT l;
        l.w = TensorT<S>::zeros({filters, c_in * 16}, true);
        l.b = TensorT<S>::zeros({filters}, true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * 16));
        rng.fill_uniform(l.w.values(), -bound, bound);
        return l;
    }

    static ConvLayerT init_transpose(Index f_in, Index c_out, Rng& rng) {
        ConvLayerT l;
        l.w = TensorT<S>::zeros({f_in, c_out * 16}, true);
        l.b = TensorT<S>::zeros({c_out}, true);
        // each output pixel of a stride-2 4x4 transpose sees f_in * 4 taps
        const double bound = 1.0 / std::sqrt(static_cast<double>(f_in * 4));
        rng.fill_uniform(l.w.values(), -bound, bound);
        return l;
    }
};

template <typename S>
struct EncodeResultT {
    TensorT<S> mu;       // [B, N]
    TensorT<S> log_var;  // [B, N]
    TensorT<S> hidden;   // [B, hidden] last shared layer

    PosteriorBatchT<S> posterior() const {
        PosteriorBatchT<S> p;
        const Index b = mu.dim(0), n = mu.dim(1);
        p.mu = Eigen::Map<const RowMat<S>>(mu.values().data(), b, n);
        p.sigma = (Eigen::Map<const RowMat<S>>(log_var.values().data(), b, n).array() * S(0.5))
                      .exp()
                      .matrix();
        return p;
    }
};

// Encoder, environment-conditioned decoder, and the environment classifier
// head. The encoder sees only images; the decoder additionally receives a
// one-hot environment index of fixed width max_environments. The
// classifier head reads the encoder's last hidden layer through a
// stop-gradient, so its loss never trains the encoder.
template <typename S>
class VaseNetworks {
public:
    VaseNetworks() = default;

    VaseNetworks(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        const Index n = cfg.latent_dim, k = cfg.max_environments, h = cfg.hidden;
        if (cfg.arch == Arch::Mlp) {
            enc_fc1_ = DenseT<S>::init(cfg.pixels(), h, rng);
            enc_fc2_ = DenseT<S>::init(h, h, rng);
        } else {
            check(cfg.image_h % 16 == 0 && cfg.image_w % 16 == 0,
                  "conv architecture requires image extents divisible by 16");
            enc_conv_ = {ConvLayerT<S>::init(cfg.channels, 64, rng),
                         ConvLayerT<S>::init(64, 64, rng), ConvLayerT<S>::init(64, 128, rng),
                         ConvLayerT<S>::init(128, 128, rng)};
            conv_flat_ = 128 * (cfg.image_h / 16) * (cfg.image_w / 16);
            enc_fc1_ = DenseT<S>::init(conv_flat_, h, rng);
        }
        enc_mu_ = DenseT<S>::init(h, n, rng);
        enc_logvar_ = DenseT<S>::init(h, n, rng);

        if (cfg.arch == Arch::Mlp) {
            dec_fc1_ = DenseT<S>::init(n + k, h, rng);
            dec_fc2_ = DenseT<S>::init(h, h, rng);
            dec_out_ = DenseT<S>::init(h, cfg.pixels(), rng);
        } else {
            dec_fc1_ = DenseT<S>::init(n + k, h, rng);
            dec_fc2_ = DenseT<S>::init(h, conv_flat_, rng);
            dec_conv_ = {ConvLayerT<S>::init_transpose(128, 128, rng),
                         ConvLayerT<S>::init_transpose(128, 64, rng),
                         ConvLayerT<S>::init_transpose(64, 64, rng),
                         ConvLayerT<S>::init_transpose(64, cfg.channels, rng)};
        }
        cls_ = DenseT<S>::init(h, k, rng);
    }

    const ModelConfig& config() const { return cfg_; }

    EncodeResultT<S> encode(const TensorT<S>& x) const {
        check(x.rank() == 2 && x.dim(1) == cfg_.pixels(),
              "encode: image batch has shape " + shape_str(x.shape()) + ", expected [B x " +
                  std::to_string(cfg_.pixels()) + "]");
        check(x.values().minCoeff() >= S(0) && x.values().maxCoeff() <= S(1),
              "encode: pixels must lie in [0,1]");
        TensorT<S> hidden;
        if (cfg_.arch == Arch::Mlp) {
            hidden = relu(enc_fc2_(relu(enc_fc1_(x))));
        } else {
            TensorT<S> t = reshape(x, {x.dim(0), cfg_.channels, cfg_.image_h, cfg_.image_w});
            for (const auto& l : enc_conv_) t = relu(conv2d(t, l.w, l.b));
            t = reshape(t, {x.dim(0), conv_flat_});
            hidden = relu(enc_fc1_(t));
        }
        return {enc_mu_(hidden), enc_logvar_(hidden), hidden};
    }

    TensorT<S> decode(const TensorT<S>& z, int env) const {
        check(env >= 0 && env < cfg_.max_environments,
              "decode: environment index " + std::to_string(env) + " out of range [0," +
                  std::to_string(cfg_.max_environments) + ")");
        check(z.rank() == 2 && z.dim(1) == cfg_.latent_dim,
              "decode: latent batch has shape " + shape_str(z.shape()));
        const Index b = z.dim(0);
        TensorT<S> onehot = TensorT<S>::zeros({b, cfg_.max_environments});
        for (Index i = 0; i < b; ++i) onehot.values()(i * cfg_.max_environments + env) = S(1);
        TensorT<S> t = concat_cols(z, onehot);
        TensorT<S> out;
        if (cfg_.arch == Arch::Mlp) {
            out = dec_out_(relu(dec_fc2_(relu(dec_fc1_(t)))));
        } else {
            t = relu(dec_fc2_(relu(dec_fc1_(t))));
            t = reshape(t, {b, 128, cfg_.image_h / 16, cfg_.image_w / 16});
            for (size_t i = 0; i + 1 < dec_conv_.size(); ++i)
                t = relu(conv2d_transpose(t, dec_conv_[i].w, dec_conv_[i].b));
            t = conv2d_transpose(t, dec_conv_.back().w, dec_conv_.back().b);
            out = reshape(t, {b, cfg_.pixels()});
        }
        return cfg_.likelihood == Likelihood::Bernoulli ? sigmoid(out) : out;
    }

    // Softmax logits over environment indices; input gradient is severed.
    TensorT<S> classifier_logits(const TensorT<S>& hidden) const {
        return cls_(stop_grad(hidden));
    }

    std::vector<NamedParam<S>> main_params() {
        std::vector<NamedParam<S>> p;
        auto dense = [&p](const std::string& name, DenseT<S>& d) {
            p.push_back({name + ".w", d.w});
            p.push_back({name + ".b", d.b});
        };
        if (cfg_.arch == Arch::Conv) {
            for (size_t i = 0; i < enc_conv_.size(); ++i) {
                p.push_back({"enc.conv" + std::to_string(i + 1) + ".w", enc_conv_[i].w});
                p.push_back({"enc.conv" + std::to_string(i + 1) + ".b", enc_conv_[i].b});
            }
            dense("enc.fc1", enc_fc1_);
        } else {
            dense("enc.fc1", enc_fc1_);
            dense("enc.fc2", enc_fc2_);
        }
        dense("enc.mu", enc_mu_);
        dense("enc.logvar", enc_logvar_);
        dense("dec.fc1", dec_fc1_);
        dense("dec.fc2", dec_fc2_);
        if (cfg_.arch == Arch::Conv) {
            for (size_t i = 0; i < dec_conv_.size(); ++i) {
                p.push_back({"dec.conv" + std::to_string(i + 1) + ".w", dec_conv_[i].w});
                p.push_back({"dec.conv" + std::to_string(i + 1) + ".b", dec_conv_[i].b});
            }
        } else {
            dense("dec.out", dec_out_);
        }
        return p;
    }

    std::vector<NamedParam<S>> classifier_params() {
        return {{"cls.w", cls_.w}, {"cls.b", cls_.b}};
    }

    std::vector<NamedParam<S>> all_params() {
        auto p = main_params();
        for (auto& q : classifier_params()) p.push_back(q);
        return p;
    }

    // Deep value copy with gradients disabled; used for snapshots.
    VaseNetworks clone_frozen() const {
        VaseNetworks c = *this;
        auto freeze_dense = [](DenseT<S>& d) {
            if (!d.w.defined()) return;
            d.w = d.w.detach();
            d.b = d.b.detach();
        };
        auto freeze_conv = [](ConvLayerT<S>& l) {
            l.w = l.w.detach();
            l.b = l.b.detach();
        };
        freeze_dense(c.enc_fc1_);
        freeze_dense(c.enc_fc2_);
        freeze_dense(c.enc_mu_);
        freeze_dense(c.enc_logvar_);
        freeze_dense(c.dec_fc1_);
        freeze_dense(c.dec_fc2_);
        freeze_dense(c.dec_out_);
        freeze_dense(c.cls_);
        for (auto& l : c.enc_conv_) freeze_conv(l);
        for (auto& l : c.dec_conv_) freeze_conv(l);
        return c;
    }

    // Copies parameter values from another instance of the same shape.
    void assign_from(const VaseNetworks& other) {
        auto mine = all_params();
        auto theirs = const_cast<VaseNetworks&>(other).all_params();
        check(mine.size() == theirs.size(), "assign_from: parameter lists differ");
        for (size_t i = 0; i < mine.size(); ++i) mine[i].tensor.values() = theirs[i].tensor.values();
    }

private:
    ModelConfig cfg_;
    Index conv_flat_ = 0;
    DenseT<S> enc_fc1_, enc_fc2_, enc_mu_, enc_logvar_;
    DenseT<S> dec_fc1_, dec_fc2_, dec_out_;
    DenseT<S> cls_;
    std::vector<ConvLayerT<S>> enc_conv_;
    std::vector<ConvLayerT<S>> dec_conv_;
};

}  // namespace vase
