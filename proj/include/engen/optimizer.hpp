#pragma once

#include <cmath>
#include <vector>

#include "engen/autodiff.hpp"

namespace engen {

// AdamW with decoupled weight decay.
template <typename T>
class AdamW {
public:
    AdamW(std::vector<Param<T>*> params, T beta1 = T(0.9), T beta2 = T(0.999),
          T eps = T(1e-8), T weight_decay = T(0.01))
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps),
          weight_decay_(weight_decay) {
        for (auto* p : params_)
            state_.push_back({Tensor<T>::zeros(p->value.shape), Tensor<T>::zeros(p->value.shape)});
    }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

    void step(T lr) {
        ++t_;
        T bc1 = T(1) - std::pow(beta1_, T(t_));
        T bc2 = T(1) - std::pow(beta2_, T(t_));
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            auto& w = params_[pi]->value.data;
            auto& g = params_[pi]->grad.data;
            auto& m = state_[pi].m.data;
            auto& v = state_[pi].v.data;
            for (size_t i = 0; i < w.size(); ++i) {
                m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
                T mhat = m[i] / bc1;
                T vhat = v[i] / bc2;
                w[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]);
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    struct State {
        Tensor<T> m, v;
    };
    std::vector<Param<T>*> params_;
    std::vector<State> state_;
    T beta1_, beta2_, eps_, weight_decay_;
    int64_t t_ = 0;
};

} // namespace engen
