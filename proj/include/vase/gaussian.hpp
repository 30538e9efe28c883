#pragma once

#include "vase/tensor.hpp"

namespace vase {

// Per-dimension mean/standard-deviation pair: an encoder posterior row, or
// a Gaussian fitted to a batch marginal.
template <typename S>
struct DiagonalGaussianT {
    VecX<S> mu;
    VecX<S> sigma;

    Index dims() const { return mu.size(); }

    void validate() const {
        check(mu.size() == sigma.size(), "diagonal gaussian: mu/sigma length mismatch");
        check((sigma.array() > S(0)).all(), "diagonal gaussian: sigma must be strictly positive");
    }
};

// Value-level batch of posteriors (no graph participation).
template <typename S>
struct PosteriorBatchT {
    RowMat<S> mu;     // B x N
    RowMat<S> sigma;  // B x N

    Index batch() const { return mu.rows(); }
    Index dims() const { return mu.cols(); }
};

// KL(N(mu, sigma^2) || N(0,1)) element-wise, in nats.
template <typename S, typename D1, typename D2>
auto gaussian_kl_to_prior(const Eigen::ArrayBase<D1>& mu, const Eigen::ArrayBase<D2>& sigma) {
    return S(0.5) * (mu.square() + sigma.square() - S(1) - sigma.square().log());
}

inline double gaussian_kl_to_prior(double mu, double sigma) {
    return 0.5 * (mu * mu + sigma * sigma - 1.0 - std::log(sigma * sigma));
}

// Squared 2-Wasserstein between diagonal Gaussians (value level).
template <typename S>
S w2_squared(const DiagonalGaussianT<S>& a, const DiagonalGaussianT<S>& b) {
    a.validate();
    b.validate();
    check(a.dims() == b.dims(), "w2: dimensionality mismatch");
    return ((a.mu - b.mu).array().square() + (a.sigma - b.sigma).array().square()).sum();
}

}  // namespace vase
