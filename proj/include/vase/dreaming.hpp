#pragma once

#include <optional>

#include "vase/losses.hpp"
#include "vase/networks.hpp"
#include "vase/registry.hpp"

namespace vase {

// Frozen copy of the model used to hallucinate data from previously seen
// environments; its parameters never receive gradients. Refreshed every
// tau steps and forcibly on environment allocation.
template <typename S>
class ModelSnapshot {
public:
    ModelSnapshot() = default;

    void sync(const VaseNetworks<S>& live, int environments, long step) {
        nets_ = live.clone_frozen();
        environments_at_snapshot_ = environments;
        snapshot_step_ = step;
    }

    bool valid() const { return nets_.has_value(); }
    int environments() const { return environments_at_snapshot_; }
    long step() const { return snapshot_step_; }
    const VaseNetworks<S>& nets() const { return *nets_; }

private:
    std::optional<VaseNetworks<S>> nets_;
    int environments_at_snapshot_ = 0;
    long snapshot_step_ = 0;
};

template <typename S>
struct HallucinatedBatch {
    TensorT<S> images;  // decoder-old means (or samples), constant
    TensorT<S> latents; // the prior draw fed to the old decoder, constant
    int source_env = 0;
};

struct DreamConfig {
    long tau = 500;
    double w_enc = 1000.0;
    double w_dec = 20.0;
    bool sample_pixels = false;  // replay Bernoulli samples instead of means
};

// Draws a full prior latent batch and renders it with the snapshot decoder
// under one past environment, chosen uniformly and excluding the current
// environment when another choice exists. Empty when nothing can be
// replayed yet.
template <typename S>
std::optional<HallucinatedBatch<S>> hallucinate_batch(const ModelSnapshot<S>& snap,
                                                      int current_env, Index batch, Rng& rng,
                                                      bool sample_pixels = false) {
    if (!snap.valid() || snap.environments() < 1) return std::nullopt;
    const int m_old = snap.environments();
    int source;
    if (m_old == 1) {
        source = 0;
    } else {
        // uniform over past environments, excluding the current one when possible
        std::vector<int> pool;
        for (int s = 0; s < m_old; ++s)
            if (s != current_env) pool.push_back(s);
        if (pool.empty())
            for (int s = 0; s < m_old; ++s) pool.push_back(s);
        source = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<long>(pool.size()) - 1))];
    }

    const Index n = snap.nets().config().latent_dim;
    TensorT<S> z = TensorT<S>::zeros({batch, n});
    rng.fill_normal(z.values());

    NoGradGuard ng;
    HallucinatedBatch<S> out;
    out.images = snap.nets().decode(z, source);
    if (sample_pixels && snap.nets().config().likelihood == Likelihood::Bernoulli) {
        auto& v = out.images.values();
        for (Index i = 0; i < v.size(); ++i)
            v(i) = rng.uniform() < static_cast<double>(v(i)) ? S(1) : S(0);
    }
    out.latents = z;
    out.source_env = source;
    return out;
}

template <typename S>
struct DreamTerms {
    TensorT<S> loss;          // weighted total
    double encoder_term = 0;  // unweighted values for logging
    double decoder_term = 0;
    TensorT<S> live_hidden;   // encoder hidden on the hallucinated batch
};

// Proximity of the live model to the snapshot on hallucinated data:
// squared 2-Wasserstein between the two posteriors plus decoder KL at the
// same latents, with the standard re-weighting.
template <typename S>
DreamTerms<S> dream_loss(const VaseNetworks<S>& live, const ModelSnapshot<S>& snap,
                         const HallucinatedBatch<S>& h, const DreamConfig& cfg) {
    EncodeResultT<S> q_live = live.encode(h.images);
    TensorT<S> mu_old, lv_old;
    {
        NoGradGuard ng;
        EncodeResultT<S> q_old = snap.nets().encode(h.images);
        mu_old = q_old.mu;
        lv_old = q_old.log_var;
    }
    TensorT<S> enc = encoder_proximity(q_live.mu, q_live.log_var, mu_old, lv_old);

    TensorT<S> p_live = live.decode(h.latents, h.source_env);
    TensorT<S> p_old;
    {
        NoGradGuard ng;
        p_old = snap.nets().decode(h.latents, h.source_env);
    }
    TensorT<S> dec = decoder_proximity(p_live, p_old, live.config());

    DreamTerms<S> out;
    out.encoder_term = static_cast<double>(enc.item());
    out.decoder_term = static_cast<double>(dec.item());
    out.loss = add(scale(enc, static_cast<S>(cfg.w_enc)), scale(dec, static_cast<S>(cfg.w_dec)));
    out.live_hidden = q_live.hidden;
    return out;
}

}  // namespace vase
