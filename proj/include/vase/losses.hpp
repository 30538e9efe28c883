#pragma once

#include "vase/capacity.hpp"
#include "vase/gaussian.hpp"
#include "vase/networks.hpp"
#include "vase/tensor.hpp"

namespace vase {

enum class LossMode { Disentangled, Entangled };

// Negative Bernoulli log-likelihood, summed over pixels and averaged over
// the batch, with means clamped away from {0,1}.
template <typename S>
TensorT<S> bernoulli_recon_loss(const TensorT<S>& target, const TensorT<S>& mean) {
    detail::check_same_shape(target, mean, "recon_loss");
    check(target.values().minCoeff() >= S(0) && target.values().maxCoeff() <= S(1),
          "recon_loss: Bernoulli targets must lie in [0,1]");
    const S eps = static_cast<S>(kLogFloor);
    auto p = clamp(mean, eps, S(1) - eps);
    auto x = target;
    auto nll = neg(add(mul(x, log(p)), mul(affine_scalar(x, S(-1), S(1)),
                                           log(affine_scalar(p, S(-1), S(1))))));
    return scale(sum_all(nll), S(1) / static_cast<S>(target.dim(0)));
}

// Fixed-variance Gaussian negative log-likelihood, same reduction.
template <typename S>
TensorT<S> gaussian_recon_loss(const TensorT<S>& target, const TensorT<S>& mean, S sigma) {
    detail::check_same_shape(target, mean, "recon_loss");
    check(sigma > S(0), "recon_loss: sigma must be positive");
    const S batch = static_cast<S>(target.dim(0));
    const S log_norm = S(0.5) * std::log(S(2) * static_cast<S>(M_PI) * sigma * sigma);
    auto quad = scale(square(sub(mean, target)), S(1) / (S(2) * sigma * sigma));
    auto total = scale(sum_all(quad), S(1) / batch);
    const S constant = log_norm * static_cast<S>(target.dim(1));
    return affine_scalar(total, S(1), constant);
}

template <typename S>
TensorT<S> recon_loss(const TensorT<S>& target, const TensorT<S>& likelihood_params,
                      const ModelConfig& cfg) {
    return cfg.likelihood == Likelihood::Bernoulli
               ? bernoulli_recon_loss(target, likelihood_params)
               : gaussian_recon_loss(target, likelihood_params, static_cast<S>(cfg.decoder_sigma));
}

// Batch-mean KL against the unit prior, per latent dimension: [B,N] -> [N].
template <typename S>
TensorT<S> kl_per_dim_graph(const TensorT<S>& mu, const TensorT<S>& log_var) {
    detail::check_same_shape(mu, log_var, "kl_per_dim");
    auto elems = scale(sub(add(square(mu), exp(log_var)),
                           affine_scalar(log_var, S(1), S(1))),
                       S(0.5));
    return colwise_mean(elems);
}

// Masked dims contribute exactly zero: their effective posterior is the
// prior, so they carry no description length.
template <typename S>
TensorT<S> masked_kl_total(const TensorT<S>& mu, const TensorT<S>& log_var,
                           const ArrX<S>& mask) {
    auto per_dim = kl_per_dim_graph(mu, log_var);
    TensorT<S> m = TensorT<S>::from_array({mask.size()}, mask);
    return sum_all(mul(per_dim, m));
}

// Value-level per-dim KL for metrics and tests; rejects sigma <= 0.
template <typename S>
VecX<S> kl_per_dim(const PosteriorBatchT<S>& q, const ArrX<S>& mask) {
    check((q.sigma.array() > S(0)).all(), "kl_per_dim: sigma must be strictly positive");
    check(mask.size() == q.dims(), "kl_per_dim: mask length mismatch");
    VecX<S> out(q.dims());
    for (Index n = 0; n < q.dims(); ++n) {
        if (mask(n) == S(0)) {
            out(n) = S(0);
            continue;
        }
        S acc = S(0);
        for (Index b = 0; b < q.batch(); ++b)
            acc += static_cast<S>(
                gaussian_kl_to_prior(static_cast<double>(q.mu(b, n)),
                                     static_cast<double>(q.sigma(b, n))));
        out(n) = acc / static_cast<S>(q.batch());
    }
    return out;
}

template <typename S>
struct MdlTerms {
    TensorT<S> loss;
    TensorT<S> recon;
    TensorT<S> kl_total;
    double capacity = 0.0;
};

// Reconstruction plus the capacity term: gamma * (KL - C)^2 in the
// disentangled mode, beta * KL in the entangled baseline.
template <typename S>
MdlTerms<S> mdl_loss(const TensorT<S>& target, const TensorT<S>& likelihood_params,
                     const TensorT<S>& mu, const TensorT<S>& log_var, const ArrX<S>& mask,
                     long step, const CapacitySchedule& sched, const ModelConfig& cfg,
                     LossMode mode, double beta = 1.0) {
    MdlTerms<S> t;
    t.recon = recon_loss(target, likelihood_params, cfg);
    t.kl_total = masked_kl_total(mu, log_var, mask);
    if (mode == LossMode::Disentangled) {
        t.capacity = capacity_at(step, sched);
        auto gap = affine_scalar(t.kl_total, S(1), static_cast<S>(-t.capacity));
        t.loss = add(t.recon, scale(square(gap), static_cast<S>(sched.gamma)));
    } else {
        t.loss = add(t.recon, scale(t.kl_total, static_cast<S>(beta)));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Proximity terms for the replay loop
// ---------------------------------------------------------------------------

// Squared 2-Wasserstein between the live posterior and a frozen one,
// closed form for diagonal Gaussians, averaged over the batch.
template <typename S>
TensorT<S> encoder_proximity(const TensorT<S>& mu_live, const TensorT<S>& log_var_live,
                             const TensorT<S>& mu_old, const TensorT<S>& log_var_old) {
    detail::check_same_shape(mu_live, mu_old, "encoder_proximity");
    detail::check_same_shape(log_var_live, log_var_old, "encoder_proximity");
    auto sigma_live = exp(scale(log_var_live, S(0.5)));
    auto sigma_old = exp(scale(log_var_old, S(0.5)));
    check((sigma_old.values() > S(0)).all(), "encoder_proximity: sigma must be positive");
    auto sq = add(square(sub(mu_live, mu_old)), square(sub(sigma_live, sigma_old)));
    return scale(sum_all(sq), S(1) / static_cast<S>(mu_live.dim(0)));
}

// Per-pixel Bernoulli KL from the live decoder distribution to the frozen
// one, summed over pixels and averaged over the batch.
template <typename S>
TensorT<S> decoder_proximity_bernoulli(const TensorT<S>& p_live, const TensorT<S>& p_old) {
    detail::check_same_shape(p_live, p_old, "decoder_proximity");
    check(p_live.values().minCoeff() >= S(0) && p_live.values().maxCoeff() <= S(1) &&
              p_old.values().minCoeff() >= S(0) && p_old.values().maxCoeff() <= S(1),
          "decoder_proximity: Bernoulli means must lie in [0,1]");
    const S eps = static_cast<S>(kLogFloor);
    auto p = clamp(p_live, eps, S(1) - eps);
    auto q = clamp(p_old, eps, S(1) - eps);
    auto one_minus_p = affine_scalar(p, S(-1), S(1));
    auto one_minus_q = affine_scalar(q, S(-1), S(1));
    auto kl = add(mul(p, sub(log(p), log(q))),
                  mul(one_minus_p, sub(log(one_minus_p), log(one_minus_q))));
    return scale(sum_all(kl), S(1) / static_cast<S>(p_live.dim(0)));
}

// Fixed-variance Gaussian decoder KL: (mu - mu')^2 / (2 sigma^2) per pixel.
template <typename S>
TensorT<S> decoder_proximity_gaussian(const TensorT<S>& mu_live, const TensorT<S>& mu_old,
                                      S sigma) {
    detail::check_same_shape(mu_live, mu_old, "decoder_proximity");
    check(sigma > S(0), "decoder_proximity: sigma must be positive");
    auto sq = scale(square(sub(mu_live, mu_old)), S(1) / (S(2) * sigma * sigma));
    return scale(sum_all(sq), S(1) / static_cast<S>(mu_live.dim(0)));
}

template <typename S>
TensorT<S> decoder_proximity(const TensorT<S>& p_live, const TensorT<S>& p_old,
                             const ModelConfig& cfg) {
    return cfg.likelihood == Likelihood::Bernoulli
               ? decoder_proximity_bernoulli(p_live, p_old)
               : decoder_proximity_gaussian(p_live, p_old, static_cast<S>(cfg.decoder_sigma));
}

// Cross-entropy toward the inferred index on current data, plus toward the
// source indices on hallucinated data; inputs must come through the
// classifier head, whose stop-gradient isolates the encoder.
template <typename S>
TensorT<S> env_classifier_loss(const TensorT<S>& logits_current, int current_env,
                               const TensorT<S>* logits_hallucinated, int hallucinated_env,
                               int max_environments) {
    check(current_env >= 0 && current_env < max_environments,
          "env_classifier_loss: label " + std::to_string(current_env) + " out of range");
    std::vector<int> cur(static_cast<size_t>(logits_current.dim(0)), current_env);
    auto loss = cross_entropy_with_logits(logits_current, cur);
    if (logits_hallucinated != nullptr) {
        check(hallucinated_env >= 0 && hallucinated_env < max_environments,
              "env_classifier_loss: hallucinated label out of range");
        std::vector<int> hal(static_cast<size_t>(logits_hallucinated->dim(0)), hallucinated_env);
        loss = add(loss, cross_entropy_with_logits(*logits_hallucinated, hal));
    }
    return loss;
}

}  // namespace vase
