#pragma once

#include "vase/tensor.hpp"

namespace vase {

template <typename S>
struct AdamState {
    ArrX<S> first_moment;
    ArrX<S> second_moment;
    long step_count = 0;
};

// Adam with bias correction over a fixed parameter list. A parameter whose
// gradient is non-finite is skipped for that update and counted.
template <typename S>
class AdamT {
public:
    explicit AdamT(std::vector<TensorT<S>> params, S lr = S(6e-4), S beta1 = S(0.9),
                   S beta2 = S(0.999), S epsilon = S(1e-8))
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
        states_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            states_[i].first_moment = ArrX<S>::Zero(params_[i].size());
            states_[i].second_moment = ArrX<S>::Zero(params_[i].size());
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.has_grad()) continue;
            const auto& g = p.grad();
            if (!g.isFinite().all()) {
                ++skipped_updates_;
                continue;
            }
            auto& st = states_[i];
            ++st.step_count;
            st.first_moment = beta1_ * st.first_moment + (S(1) - beta1_) * g;
            st.second_moment = beta2_ * st.second_moment + (S(1) - beta2_) * g.square();
            const S c1 = S(1) - std::pow(beta1_, static_cast<S>(st.step_count));
            const S c2 = S(1) - std::pow(beta2_, static_cast<S>(st.step_count));
            p.values() -= lr_ * (st.first_moment / c1) / ((st.second_moment / c2).sqrt() + eps_);
        }
    }

    const std::vector<TensorT<S>>& params() const { return params_; }
    const AdamState<S>& state(size_t i) const { return states_.at(i); }
    long skipped_updates() const { return skipped_updates_; }
    S learning_rate() const { return lr_; }

private:
    std::vector<TensorT<S>> params_;
    std::vector<AdamState<S>> states_;
    S lr_, beta1_, beta2_, eps_;
    long skipped_updates_ = 0;
};

}  // namespace vase
