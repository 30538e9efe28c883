#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vase/adam.hpp"
#include "vase/networks.hpp"
#include "vase/streams.hpp"

namespace vase {

enum class ProbeTask { Classification, Regression };
enum class MetricKind { Accuracy, Mse };

template <typename S>
struct ProbeData {
    RowMat<S> latents;          // M x N inputs
    std::vector<int> classes;   // classification targets (size M)
    RowMat<S> targets;          // regression targets (M x D)
};

struct ProbeConfig {
    long steps = 2000;
    Index batch = 64;
    double lr = 6e-4;
    int hidden = 256;
};

// Two-hidden-layer relu head trained on frozen latents; never touches the
// main model.
template <typename S>
class ProbeHead {
public:
    ProbeHead() = default;

    ProbeHead(Index in_dim, Index out_dim, ProbeTask task, int hidden, Rng& rng)
        : task_(task),
          fc1_(DenseT<S>::init(in_dim, hidden, rng)),
          fc2_(DenseT<S>::init(hidden, hidden, rng)),
          out_(DenseT<S>::init(hidden, out_dim, rng)) {}

    TensorT<S> forward(const TensorT<S>& x) const {
        return out_(relu(fc2_(relu(fc1_(x)))));
    }

    ProbeTask task() const { return task_; }

    std::vector<TensorT<S>> params() {
        return {fc1_.w, fc1_.b, fc2_.w, fc2_.b, out_.w, out_.b};
    }

private:
    ProbeTask task_ = ProbeTask::Classification;
    DenseT<S> fc1_, fc2_, out_;
};

template <typename S>
ProbeHead<S> train_probe(const ProbeData<S>& data, ProbeTask task, const ProbeConfig& cfg,
                         Rng& rng) {
    const Index m = data.latents.rows();
    const Index n = data.latents.cols();
    check(m > 0, "train_probe: empty training set");

    Index out_dim;
    if (task == ProbeTask::Classification) {
        check(static_cast<Index>(data.classes.size()) == m, "train_probe: target count mismatch");
        int max_class = 0;
        for (int c : data.classes) max_class = std::max(max_class, c);
        out_dim = max_class + 1;
        std::set<int> seen(data.classes.begin(), data.classes.end());
        for (int c = 0; c <= max_class; ++c)
            check(seen.count(c) != 0, "train_probe: class " + std::to_string(c) +
                                          " absent from training targets");
    } else {
        check(data.targets.rows() == m, "train_probe: target count mismatch");
        out_dim = data.targets.cols();
    }

    ProbeHead<S> head(n, out_dim, task, cfg.hidden, rng);
    AdamT<S> opt(head.params(), static_cast<S>(cfg.lr));
    const Index bsz = std::min<Index>(cfg.batch, m);
    for (long step = 0; step < cfg.steps; ++step) {
        TensorT<S> x = TensorT<S>::zeros({bsz, n});
        std::vector<int> ybatch(static_cast<size_t>(bsz));
        TensorT<S> ytarget;
        if (task == ProbeTask::Regression)
            ytarget = TensorT<S>::zeros({bsz, data.targets.cols()});
        for (Index b = 0; b < bsz; ++b) {
            const Index pick = rng.uniform_int(0, m - 1);
            for (Index j = 0; j < n; ++j) x.values()(b * n + j) = data.latents(pick, j);
            if (task == ProbeTask::Classification) {
                ybatch[static_cast<size_t>(b)] = data.classes[static_cast<size_t>(pick)];
            } else {
                for (Index j = 0; j < data.targets.cols(); ++j)
                    ytarget.values()(b * data.targets.cols() + j) = data.targets(pick, j);
            }
        }
        TensorT<S> loss;
        if (task == ProbeTask::Classification) {
            loss = cross_entropy_with_logits(head.forward(x), ybatch);
        } else {
            loss = mean_all(square(sub(head.forward(x), ytarget)));
        }
        opt.zero_grad();
        loss.backward();
        opt.step();
    }
    return head;
}

// Accuracy for classification heads, mean squared error per output for
// regression heads.
template <typename S>
double evaluate_probe(const ProbeHead<S>& head, const ProbeData<S>& data) {
    NoGradGuard ng;
    const Index m = data.latents.rows();
    TensorT<S> x = TensorT<S>::zeros({m, data.latents.cols()});
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < data.latents.cols(); ++j)
            x.values()(i * data.latents.cols() + j) = data.latents(i, j);
    TensorT<S> y = head.forward(x);
    if (head.task() == ProbeTask::Classification) {
        const Index k = y.dim(1);
        Index correct = 0;
        for (Index i = 0; i < m; ++i) {
            Index best = 0;
            for (Index c = 1; c < k; ++c)
                if (y.values()(i * k + c) > y.values()(i * k + best)) best = c;
            if (best == data.classes[static_cast<size_t>(i)]) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(m);
    }
    double acc = 0.0;
    const Index d = y.dim(1);
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < d; ++j) {
            const double diff = static_cast<double>(y.values()(i * d + j)) -
                                static_cast<double>(data.targets(i, j));
            acc += diff * diff;
        }
    return acc / static_cast<double>(m * d);
}

// Per-dimension Pearson correlation of latent means against a scalar
// target; zero where either side is degenerate.
template <typename S>
VecX<double> probe_correlation(const RowMat<S>& latents, const VecX<double>& target) {
    const Index m = latents.rows(), n = latents.cols();
    check(target.size() == m, "probe_correlation: target length mismatch");
    VecX<double> out = VecX<double>::Zero(n);
    const double ty = target.mean();
    double sy = 0.0;
    for (Index i = 0; i < m; ++i) sy += (target(i) - ty) * (target(i) - ty);
    if (sy <= 1e-12) return out;
    for (Index j = 0; j < n; ++j) {
        double tx = 0.0;
        for (Index i = 0; i < m; ++i) tx += static_cast<double>(latents(i, j));
        tx /= static_cast<double>(m);
        double sx = 0.0, sxy = 0.0;
        for (Index i = 0; i < m; ++i) {
            const double dx = static_cast<double>(latents(i, j)) - tx;
            sx += dx * dx;
            sxy += dx * (target(i) - ty);
        }
        if (sx <= 1e-12) continue;
        out(j) = sxy / std::sqrt(sx * sy);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forgetting quantification
// ---------------------------------------------------------------------------

struct TrajectoryPoint {
    long step = 0;
    double value = 0.0;
};

struct EnvTrajectory {
    int env = 0;
    std::vector<TrajectoryPoint> points;
};

struct EnvForgetting {
    int env = 0;
    double best_during = 0.0;
    double worst_after = 0.0;
    double change = 0.0;
    bool valid = false;
    std::string note;
};

struct ForgettingReport {
    std::vector<EnvForgetting> environments;
    double mean_best = 0.0;
    double mean_change = 0.0;
    int contributing = 0;
};

// Per environment: the best metric while its own segment was active and
// the worst value afterwards. Accuracy change is worst-after minus
// best-during (non-positive); MSE change is worst-after minus best-during
// with the extrema flipped (non-negative). Environments with no
// post-segment checkpoints are excluded with a note.
inline ForgettingReport forgetting_summary(const std::vector<EnvTrajectory>& trajectories,
                                           const StreamSchedule& schedule, MetricKind kind) {
    ForgettingReport report;
    double best_acc = 0.0, change_acc = 0.0;
    int used = 0;
    for (const auto& tr : trajectories) {
        EnvForgetting f;
        f.env = tr.env;
        check(tr.env >= 0 && tr.env < static_cast<int>(schedule.segments.size()),
              "forgetting_summary: trajectory for unknown segment");
        const long seg_start = schedule.segment_start(tr.env);
        const long seg_end =
            seg_start + schedule.segments[static_cast<size_t>(tr.env)].budget;
        std::optional<double> during, after;
        for (const auto& p : tr.points) {
            if (p.step < seg_end) {
                if (p.step < seg_start) continue;
                if (!during) {
                    during = p.value;
                } else {
                    during = kind == MetricKind::Accuracy ? std::max(*during, p.value)
                                                          : std::min(*during, p.value);
                }
            } else {
                if (!after) {
                    after = p.value;
                } else {
                    after = kind == MetricKind::Accuracy ? std::min(*after, p.value)
                                                         : std::max(*after, p.value);
                }
            }
        }
        if (!during || !after) {
            f.valid = false;
            f.note = "environment never revisited in evaluation; excluded";
            report.environments.push_back(f);
            continue;
        }
        f.best_during = *during;
        f.worst_after = *after;
        f.change = *after - *during;
        f.valid = true;
        report.environments.push_back(f);
        best_acc += f.best_during;
        change_acc += f.change;
        ++used;
    }
    report.contributing = used;
    if (used > 0) {
        report.mean_best = best_acc / used;
        report.mean_change = change_acc / used;
    }
    return report;
}

}  // namespace vase
