#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vase/masking.hpp"
#include "vase/tensor.hpp"

namespace vase {

class CapacityExhausted : public std::runtime_error {
public:
    explicit CapacityExhausted(const std::string& msg) : std::runtime_error(msg) {}
};

// Per-cluster state: the mask signature last seen while training on the
// environment, the decoder-used components, and an exponential moving
// average of its reconstruction loss.
struct EnvironmentRecord {
    int index = 0;
    LatentMask mask_signature;
    VecX<double> used;          // u_n; empty until first refresh
    double running_loss = 0.0;  // EMA of the reconstruction loss
    long sample_count = 0;
};

struct RegistryConfig {
    int max_environments = 7;
    double kappa = 1.5;        // new-environment loss ratio
    double ema_decay = 0.99;   // running-loss decay
    int debounce_window = 3;   // consecutive batches before allocation
    bool candidate_by_loss = false;  // argmin reconstruction loss instead of classifier
};

struct InferenceDecision {
    int env = 0;
    int candidate = 0;
    bool allocated = false;
    bool pending_allocation = false;  // condition held but debounce not yet satisfied
    double candidate_loss = 0.0;
    double candidate_running_loss = 0.0;
    bool mask_mismatch = false;
    bool loss_mismatch = false;
};

// Discovered environments. Indices are dense, stable and never reused; a
// single training loop is the only writer.
class Registry {
public:
    explicit Registry(RegistryConfig cfg) : cfg_(cfg) {}

    int count() const { return static_cast<int>(records_.size()); }
    int current() const { return current_; }
    int debounce_counter() const { return debounce_; }
    const RegistryConfig& config() const { return cfg_; }

    EnvironmentRecord& record(int s) { return records_.at(static_cast<size_t>(s)); }
    const EnvironmentRecord& record(int s) const { return records_.at(static_cast<size_t>(s)); }

    // Candidate index from batch-averaged classifier probabilities,
    // restricted to known environments; ties break toward the lowest
    // index. Empty when no environment exists yet.
    std::optional<int> classify_env(const VecX<double>& mean_probs) const {
        if (records_.empty()) return std::nullopt;
        check(mean_probs.size() >= count(), "classify_env: probability vector shorter than m");
        int best = 0;
        for (int s = 1; s < count(); ++s)
            if (mean_probs(s) > mean_probs(best)) best = s;
        return best;
    }

    // Applies the two environment checks for candidate `cand` on the
    // current batch: reconstruction consistency against the running loss,
    // and agreement of the batch mask with the stored signature on the
    // candidate's used components. When the candidate fails but the
    // current environment still passes its own checks, the current one is
    // retained (it keeps a freshly allocated environment attached while
    // the classifier catches up). Allocation is debounced over
    // consecutive batches; `loss_for(s)` lazily evaluates the batch
    // reconstruction loss when decoded under environment s.
    InferenceDecision infer_environment(const LatentMask& batch_mask,
                                        const std::function<double(int)>& loss_for,
                                        std::optional<int> classifier_candidate) {
        InferenceDecision d;
        if (records_.empty()) {
            d.env = allocate(batch_mask);
            d.candidate = d.env;
            d.allocated = true;
            return d;
        }

        int cand;
        if (cfg_.candidate_by_loss || !classifier_candidate.has_value()) {
            cand = 0;
            double best = loss_for(0);
            for (int s = 1; s < count(); ++s) {
                const double l = loss_for(s);
                if (l < best) {
                    best = l;
                    cand = s;
                }
            }
            d.candidate_loss = best;
        } else {
            cand = *classifier_candidate;
            check(cand >= 0 && cand < count(), "infer_environment: candidate out of range");
            d.candidate_loss = loss_for(cand);
        }
        d.candidate = cand;

        auto fails = [&](int s, double loss) {
            const EnvironmentRecord& rec = records_[static_cast<size_t>(s)];
            const bool loss_bad = rec.sample_count > 0 && loss > cfg_.kappa * rec.running_loss;
            return loss_bad || signature_disagrees(rec, batch_mask);
        };

        const EnvironmentRecord& rec = records_[static_cast<size_t>(cand)];
        d.candidate_running_loss = rec.running_loss;
        d.loss_mismatch = rec.sample_count > 0 &&
                          d.candidate_loss > cfg_.kappa * rec.running_loss;
        d.mask_mismatch = signature_disagrees(rec, batch_mask);

        if (d.loss_mismatch || d.mask_mismatch) {
            if (current_ != cand && !fails(current_, loss_for(current_))) {
                debounce_ = 0;
                d.env = current_;
                return d;
            }
            ++debounce_;
            if (debounce_ >= cfg_.debounce_window) {
                debounce_ = 0;
                d.env = allocate(batch_mask);
                d.allocated = true;
            } else {
                d.env = cand;
                d.pending_allocation = true;
            }
        } else {
            debounce_ = 0;
            d.env = cand;
        }
        current_ = d.env;
        return d;
    }

    // EMA update; the first observation initialises the average.
    static void update_running_loss(EnvironmentRecord& rec, double loss, double decay) {
        if (!std::isfinite(loss)) return;
        rec.running_loss =
            rec.sample_count == 0 ? loss : decay * rec.running_loss + (1.0 - decay) * loss;
        ++rec.sample_count;
    }

    void observe_loss(int s, double loss) {
        update_running_loss(record(s), loss, cfg_.ema_decay);
    }

    void set_current(int s) {
        check(s >= 0 && s < count(), "set_current: index out of range");
        current_ = s;
    }

private:
    bool signature_disagrees(const EnvironmentRecord& rec, const LatentMask& batch_mask) const {
        if (rec.used.size() == 0 || rec.mask_signature.bits.size() == 0) return false;
        if (batch_mask.bits.size() != rec.mask_signature.bits.size()) return false;
        for (Index n = 0; n < rec.used.size(); ++n) {
            if (rec.used(n) == 0.0) continue;
            if (rec.mask_signature.bits(n) != batch_mask.bits(n)) return true;
        }
        return false;
    }

    int allocate(const LatentMask& batch_mask) {
        if (count() >= cfg_.max_environments)
            throw CapacityExhausted("environment capacity exhausted: all " +
                                    std::to_string(cfg_.max_environments) +
                                    " indices are in use and a new environment was detected");
        EnvironmentRecord rec;
        rec.index = count();
        rec.mask_signature = batch_mask;
        records_.push_back(std::move(rec));
        current_ = records_.back().index;
        return current_;
    }

    RegistryConfig cfg_;
    std::vector<EnvironmentRecord> records_;
    int current_ = 0;
    int debounce_ = 0;
};

}  // namespace vase
