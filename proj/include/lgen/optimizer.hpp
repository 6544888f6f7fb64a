#pragma once

#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "lgen/tensor.hpp"

namespace lgen {

// Adaptive-moment (Adam) optimizer state. Moment buffers are keyed by the
// parameter's TensorImpl, so the same state object can be reused across steps
// as long as the parameter tensors stay alive.
class OptimizerState {
public:
    explicit OptimizerState(double learning_rate = 1e-3, double beta1 = 0.9,
                            double beta2 = 0.999, double epsilon = 1e-8)
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
        if (learning_rate <= 0)
            throw std::invalid_argument("OptimizerState: learning rate must be > 0");
    }

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    int64_t step_count() const { return step_; }

    void step(std::vector<Tensor>& params) {
        for (Tensor& p : params)
            if (p.impl()->grad.size() != p.impl()->data.size())
                throw std::invalid_argument("optimizer_step: parameter missing grad");
        ++step_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (Tensor& p : params) {
            Slot& s = slots_[p.impl().get()];
            if (s.m.size() != p.data().size()) {
                s.m.assign(p.data().size(), 0.0);
                s.v.assign(p.data().size(), 0.0);
            }
            auto& data = p.data();
            auto& grad = p.grad();
            for (size_t i = 0; i < data.size(); ++i) {
                double g = grad[i];
                s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
                s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
                double mhat = s.m[i] / bc1;
                double vhat = s.v[i] / bc2;
                data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
            p.zero_grad();
        }
    }

private:
    struct Slot {
        std::vector<double> m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    int64_t step_ = 0;
    std::unordered_map<TensorImpl*, Slot> slots_;
};

inline void optimizer_step(std::vector<Tensor>& params, OptimizerState& state) {
    state.step(params);
}

}  // namespace lgen
