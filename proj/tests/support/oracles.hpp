#pragma once

// Test-side oracles, independent of the library's differentiation and
// closed-form paths: central finite differences and Monte Carlo
// estimators. Used to freeze expected values before trusting the
// implementation.

#include <cmath>
#include <functional>
#include <vector>

#include "vase/rng.hpp"
#include "vase/tensor.hpp"

namespace oracles {

using vase::ArrX;
using vase::Index;
using vase::TensorT;

// Central finite differences of a scalar-valued graph builder with respect
// to every element of every input; returns the worst relative error
// against the analytic reverse-mode gradient. The builder must construct a
// fresh graph from the current input values on each call.
template <typename BuildLoss>
double max_grad_rel_error(std::vector<TensorT<double>>& inputs, BuildLoss&& build,
                          double h = 1e-3) {
    for (auto& in : inputs) in.zero_grad();
    TensorT<double> loss = build();
    loss.backward();
    std::vector<ArrX<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) analytic.push_back(in.grad());

    double worst = 0.0;
    for (auto& in : inputs) {
        for (Index i = 0; i < in.size(); ++i) {
            const double keep = in.values()(i);
            double lp, lm;
            {
                vase::NoGradGuard ng;
                in.values()(i) = keep + h;
                lp = build().item();
                in.values()(i) = keep - h;
                lm = build().item();
                in.values()(i) = keep;
            }
            const double fd = (lp - lm) / (2.0 * h);
            const double an = analytic[&in - inputs.data()](i);
            const double err = std::abs(an - fd) / std::max(1.0, std::abs(fd));
            if (err > worst) worst = err;
        }
    }
    return worst;
}

// Monte Carlo estimate of KL(N(mu, sigma^2) || N(0,1)) via its definition.
inline double mc_gaussian_kl(double mu, double sigma, long n, vase::Rng& rng) {
    double acc = 0.0;
    for (long i = 0; i < n; ++i) {
        const double z = mu + sigma * rng.normal();
        const double log_q = -0.5 * std::log(2.0 * M_PI * sigma * sigma) -
                             (z - mu) * (z - mu) / (2.0 * sigma * sigma);
        const double log_p = -0.5 * std::log(2.0 * M_PI) - z * z / 2.0;
        acc += log_q - log_p;
    }
    return acc / static_cast<double>(n);
}

// Monte Carlo estimate of the squared 2-Wasserstein distance between two
// 1-D Gaussians via the comonotone quantile coupling.
inline double mc_w2_squared(double mu1, double s1, double mu2, double s2, long n,
                            vase::Rng& rng) {
    double acc = 0.0;
    for (long i = 0; i < n; ++i) {
        const double z = rng.normal();
        const double d = (mu1 + s1 * z) - (mu2 + s2 * z);
        acc += d * d;
    }
    return acc / static_cast<double>(n);
}

// Intensity centroid of a single-channel image, in pixel coordinates.
inline std::pair<double, double> pixel_centroid(const ArrX<double>& img, Index h, Index w) {
    double mass = 0.0, cx = 0.0, cy = 0.0;
    for (Index i = 0; i < h; ++i) {
        for (Index j = 0; j < w; ++j) {
            const double v = img(i * w + j);
            mass += v;
            cy += v * static_cast<double>(i);
            cx += v * static_cast<double>(j);
        }
    }
    if (mass <= 0.0) return {0.5 * (w - 1), 0.5 * (h - 1)};
    return {cx / mass, cy / mass};
}

template <typename S>
std::pair<double, double> pixel_centroid(const ArrX<S>& img, Index h, Index w) {
    ArrX<double> d = img.template cast<double>();
    return pixel_centroid(d, h, w);
}

}  // namespace oracles
