#pragma once

#include <cmath>
#include <functional>
#include <optional>

#include "vase/gaussian.hpp"
#include "vase/tensor.hpp"

namespace vase {

// Per-dimension binary keep/drop vector with hysteresis memory. bits[n]=1
// keeps the posterior for dim n; bits[n]=0 replaces it with the prior. A
// dim whose marginal matches the prior scores zero atypicality and stays
// unmasked, which is what leaves it available as spare capacity.
struct LatentMask {
    VecX<double> bits;           // a_n in {0,1}
    VecX<double> previous_bits;  // empty until a mask has been inferred
    VecX<double> alpha;          // last atypicality scores

    Index dims() const { return bits.size(); }

    template <typename S>
    ArrX<S> as_array() const {
        return bits.array().cast<S>();
    }

    static LatentMask all_ones(Index n) {
        LatentMask m;
        m.bits = VecX<double>::Ones(n);
        m.alpha = VecX<double>::Zero(n);
        return m;
    }
};

struct MaskThresholds {
    double lambda0 = 0.3;  // below: certainly typical
    double lambda = 0.6;   // raw decision threshold
    double lambda1 = 1.2;  // above: certainly atypical

    void validate() const {
        check(lambda0 > 0 && lambda0 < lambda && lambda < lambda1,
              "mask thresholds must satisfy 0 < lambda0 < lambda < lambda1");
    }
};

struct UsedComponents {
    VecX<double> bits;         // u_n: 1 if the decoder output depends on dim n
    VecX<double> noise_scale;  // largest tolerated per-dim noise stddev
};

// Analytic moments of the batch marginal q(z_n) = mean_b N(mu_bn, sigma_bn^2):
// mean of means, and mean variance plus population variance of the means.
template <typename S>
std::pair<VecX<double>, VecX<double>> marginal_moments(const PosteriorBatchT<S>& q) {
    check(q.batch() >= 2, "marginal_moments: need a batch of at least 2, got " +
                              std::to_string(q.batch()));
    const Index n = q.dims();
    VecX<double> m(n), v(n);
    for (Index d = 0; d < n; ++d) {
        double mean = 0.0, var_within = 0.0;
        for (Index b = 0; b < q.batch(); ++b) {
            mean += static_cast<double>(q.mu(b, d));
            var_within += static_cast<double>(q.sigma(b, d)) * static_cast<double>(q.sigma(b, d));
        }
        mean /= static_cast<double>(q.batch());
        var_within /= static_cast<double>(q.batch());
        double var_between = 0.0;
        for (Index b = 0; b < q.batch(); ++b) {
            const double d2 = static_cast<double>(q.mu(b, d)) - mean;
            var_between += d2 * d2;
        }
        var_between /= static_cast<double>(q.batch());
        m(d) = mean;
        v(d) = var_within + var_between;
    }
    return {m, v};
}

// KL of the moment-matched Gaussian marginal from the unit prior, per dim.
inline VecX<double> atypicality(const VecX<double>& m, const VecX<double>& v) {
    check(m.size() == v.size(), "atypicality: moment length mismatch");
    check((v.array() > 0).all(), "atypicality: variance must be strictly positive");
    return (0.5 * (m.array().square() + v.array() - 1.0 - v.array().log())).matrix();
}

// Hysteresis-filtered mask: certainly-typical dims switch on, certainly-
// atypical dims switch off, and scores inside the band keep the previous
// decision (raw threshold rule when no previous mask exists).
inline LatentMask infer_mask(const VecX<double>& alpha, const LatentMask& previous,
                             const MaskThresholds& th) {
    th.validate();
    LatentMask out;
    out.alpha = alpha;
    out.bits = VecX<double>::Zero(alpha.size());
    const bool has_prev = previous.previous_bits.size() == alpha.size() ||
                          previous.bits.size() == alpha.size();
    const VecX<double>& prev =
        previous.bits.size() == alpha.size() ? previous.bits : previous.previous_bits;
    for (Index n = 0; n < alpha.size(); ++n) {
        if (alpha(n) < th.lambda0) {
            out.bits(n) = 1.0;
        } else if (alpha(n) > th.lambda1) {
            out.bits(n) = 0.0;
        } else if (has_prev) {
            out.bits(n) = prev(n);
        } else {
            out.bits(n) = alpha(n) < th.lambda ? 1.0 : 0.0;
        }
    }
    out.previous_bits = out.bits;
    return out;
}

struct UsedComponentsOptions {
    double tolerance = 0.01;       // relative loss increase treated as "unchanged"
    double threshold = 1.0;        // noise scale above which a dim counts as unused
    double sigma_min = 1.0 / 16.0; // doubling search start
    double sigma_cap = 1048576.0;  // 2^20; exceeding it marks the dim unused
    int probes_per_level = 1;
};

// Finds, per latent dim, the largest noise stddev whose injection into
// that dim raises the expected reconstruction loss by less than the
// tolerance. Dims tolerating more than `threshold` are unused by the
// decoder. `loss_for` evaluates the reconstruction loss for an arbitrary
// latent batch (value level, no graph).
template <typename S>
UsedComponents used_components(const RowMat<S>& z,
                               const std::function<double(const RowMat<S>&)>& loss_for,
                               const UsedComponentsOptions& opt, Rng& rng) {
    const Index batch = z.rows(), n = z.cols();
    UsedComponents out;
    out.bits = VecX<double>::Ones(n);
    out.noise_scale = VecX<double>::Zero(n);
    const double base = loss_for(z);
    // absolute floor so an exactly-independent dim (zero rise) always passes
    const double allowed = std::abs(base) * opt.tolerance + 1e-12;
    for (Index d = 0; d < n; ++d) {
        VecX<double> eps(batch);
        for (Index b = 0; b < batch; ++b) eps(b) = rng.normal();
        double tolerated = 0.0;
        bool capped = true;
        for (double s = opt.sigma_min; s <= opt.sigma_cap; s *= 2.0) {
            RowMat<S> zn = z;
            for (Index b = 0; b < batch; ++b)
                zn(b, d) += static_cast<S>(s * eps(b));
            const double rise = loss_for(zn) - base;
            if (rise >= allowed) {
                capped = false;
                break;
            }
            tolerated = s;
        }
        out.noise_scale(d) = capped ? opt.sigma_cap : tolerated;
        out.bits(d) = out.noise_scale(d) > opt.threshold ? 0.0 : 1.0;
    }
    return out;
}

}  // namespace vase
