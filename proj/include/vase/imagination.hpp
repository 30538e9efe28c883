#pragma once

#include <vector>

#include "vase/conv.hpp"
#include "vase/networks.hpp"
#include "vase/streams.hpp"

namespace vase {

struct PolicyConfig {
    int hidden = 256;
    int conv_filters = 16;     // conv variant: four 4x4 stride-2 layers
    Arch arch = Arch::Mlp;     // desk-scale default mirrors the model choice
    double max_shift_x = 8.0;  // tanh output scaled to this pixel range
    double max_shift_y = 8.0;
};

// Maps (target latent, image) to a bounded 2-D translation. Output goes
// through tanh, so the shift always stays in the legal range.
template <typename S>
class TranslationPolicy {
public:
    TranslationPolicy() = default;

    TranslationPolicy(const PolicyConfig& cfg, const ModelConfig& model, Rng& rng)
        : cfg_(cfg), image_h_(model.image_h), image_w_(model.image_w),
          channels_(model.channels) {
        const Index n = model.latent_dim;
        if (cfg.arch == Arch::Mlp) {
            feat_ = DenseT<S>::init(model.pixels(), cfg.hidden, rng);
            feat_dim_ = cfg.hidden;
        } else {
            check(model.image_h % 16 == 0 && model.image_w % 16 == 0,
                  "policy conv stack requires extents divisible by 16");
            conv_ = {ConvLayerT<S>::init(model.channels, cfg.conv_filters, rng),
                     ConvLayerT<S>::init(cfg.conv_filters, cfg.conv_filters, rng),
                     ConvLayerT<S>::init(cfg.conv_filters, cfg.conv_filters, rng),
                     ConvLayerT<S>::init(cfg.conv_filters, cfg.conv_filters, rng)};
            feat_dim_ = cfg.conv_filters * (model.image_h / 16) * (model.image_w / 16);
        }
        fuse_ = DenseT<S>::init(feat_dim_ + n, cfg.hidden, rng);
        head_ = DenseT<S>::init(cfg.hidden, 2, rng);
    }

    const PolicyConfig& config() const { return cfg_; }

    // Returns per-sample (dx, dy) in pixels, bounded by tanh.
    TensorT<S> offsets(const TensorT<S>& images, const TensorT<S>& z_star) const {
        TensorT<S> feat;
        if (cfg_.arch == Arch::Mlp) {
            feat = relu(feat_(images));
        } else {
            TensorT<S> t = reshape(images, {images.dim(0), channels_, image_h_, image_w_});
            for (const auto& l : conv_) t = relu(conv2d(t, l.w, l.b));
            feat = reshape(t, {images.dim(0), feat_dim_});
        }
        auto fused = relu(fuse_(concat_cols(feat, z_star)));
        auto raw = tanh(head_(fused));
        // scale the two columns to their pixel ranges
        TensorT<S> scale_vec = TensorT<S>::zeros({2});
        scale_vec.values()(0) = static_cast<S>(cfg_.max_shift_x);
        scale_vec.values()(1) = static_cast<S>(cfg_.max_shift_y);
        return mul_rowwise(raw, scale_vec);
    }

    std::vector<NamedParam<S>> params() {
        std::vector<NamedParam<S>> p;
        if (cfg_.arch == Arch::Mlp) {
            p.push_back({"policy.feat.w", feat_.w});
            p.push_back({"policy.feat.b", feat_.b});
        } else {
            for (size_t i = 0; i < conv_.size(); ++i) {
                p.push_back({"policy.conv" + std::to_string(i + 1) + ".w", conv_[i].w});
                p.push_back({"policy.conv" + std::to_string(i + 1) + ".b", conv_[i].b});
            }
        }
        p.push_back({"policy.fuse.w", fuse_.w});
        p.push_back({"policy.fuse.b", fuse_.b});
        p.push_back({"policy.head.w", head_.w});
        p.push_back({"policy.head.b", head_.b});
        return p;
    }

private:
    PolicyConfig cfg_;
    Index image_h_ = 0, image_w_ = 0, channels_ = 1;
    Index feat_dim_ = 0;
    DenseT<S> feat_, fuse_, head_;
    std::vector<ConvLayerT<S>> conv_;
};

// Translates a flat image batch by per-sample pixel offsets via bilinear
// resampling; differentiable in the offsets.
template <typename S>
TensorT<S> apply_translation(const TensorT<S>& images, const TensorT<S>& dx, const TensorT<S>& dy,
                             Index h, Index w, Index channels = 1) {
    check(images.rank() == 2 && images.dim(1) == h * w * channels,
          "apply_translation: image batch has shape " + shape_str(images.shape()));
    auto grid = reshape(images, {images.dim(0), channels, h, w});
    auto moved = translate_bilinear(grid, dx, dy);
    return reshape(moved, {images.dim(0), h * w * channels});
}

template <typename S>
struct AgentLossTerms {
    TensorT<S> loss;
    TensorT<S> transformed;  // g(z*, x) . x
    TensorT<S> offsets;      // [B, 2] pixels
};

// Squared error between the latent target and the encoding of the
// transformed image, averaged over batch and latent dims. Only the policy
// is meant to be trained from this loss; encoder gradients are discarded
// by the caller unless explicitly enabled.
template <typename S>
AgentLossTerms<S> agent_loss(const TranslationPolicy<S>& policy, const VaseNetworks<S>& nets,
                             const TensorT<S>& images, const TensorT<S>& z_star) {
    const auto& mc = nets.config();
    auto off = policy.offsets(images, z_star);
    // split columns into dx / dy vectors
    const Index b = images.dim(0);
    TensorT<S> cx = TensorT<S>::zeros({2, 1});
    cx.values()(0) = S(1);
    TensorT<S> cy = TensorT<S>::zeros({2, 1});
    cy.values()(1) = S(1);
    auto dx = reshape(matmul(off, cx), {b});
    auto dy = reshape(matmul(off, cy), {b});
    auto moved_raw = apply_translation(images, dx, dy, mc.image_h, mc.image_w, mc.channels);
    // resampling can overshoot [0,1] by rounding; clamp for the encoder
    auto moved = clamp(moved_raw, S(0), S(1));
    auto enc = nets.encode(moved);
    AgentLossTerms<S> out;
    out.loss = mean_all(square(sub(enc.mu, z_star)));
    out.transformed = moved;
    out.offsets = off;
    return out;
}

template <typename S>
struct AugmentResult {
    Index replaced = 0;
};

// Replaces a fraction of the batch with policy-translated versions whose
// position factors record the applied offsets. The caller supplies the
// latent targets (positional dims resampled from the prior in the default
// mode) and the offset normalizers of the stream.
template <typename S>
AugmentResult<S> augment_batch(const TranslationPolicy<S>& policy, const VaseNetworks<S>& nets,
                               LabeledBatch<S>& batch, double fraction, const TensorT<S>& z_star,
                               int max_off_x, int max_off_y) {
    AugmentResult<S> res;
    if (fraction <= 0.0) return res;
    const Index b = batch.images.dim(0);
    const Index k = static_cast<Index>(fraction * static_cast<double>(b));
    if (k == 0) return res;
    NoGradGuard ng;
    auto terms = agent_loss(policy, nets, batch.images, z_star);
    const auto& mc = nets.config();
    for (Index i = 0; i < k; ++i) {
        batch.images.values().segment(i * mc.pixels(), mc.pixels()) =
            terms.transformed.values().segment(i * mc.pixels(), mc.pixels());
        const double dx = static_cast<double>(terms.offsets.values()(i * 2 + 0));
        const double dy = static_cast<double>(terms.offsets.values()(i * 2 + 1));
        auto& f = batch.factors[static_cast<size_t>(i)];
        if (max_off_x > 0) f.x = std::clamp(f.x + dx / max_off_x, -1.0, 1.0);
        if (max_off_y > 0) f.y = std::clamp(f.y + dy / max_off_y, -1.0, 1.0);
    }
    res.replaced = k;
    return res;
}

// Latent targets for imagination: start from the batch posterior means and
// resample the positional dims from the prior (or the whole vector when no
// positional dims are known / full-prior mode is selected).
template <typename S>
TensorT<S> make_latent_targets(const TensorT<S>& posterior_means,
                               const std::vector<int>& positional_dims, bool full_prior,
                               Rng& rng) {
    TensorT<S> z = posterior_means.detach();
    const Index b = z.dim(0), n = z.dim(1);
    if (full_prior || positional_dims.empty()) {
        for (Index i = 0; i < z.size(); ++i) z.values()(i) = static_cast<S>(rng.normal());
        return z;
    }
    for (Index i = 0; i < b; ++i)
        for (int d : positional_dims)
            z.values()(i * n + d) = static_cast<S>(rng.normal());
    return z;
}

}  // namespace vase
