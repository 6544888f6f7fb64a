#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgen/box.hpp"
#include "lgen/rng.hpp"
#include "lgen/tensor.hpp"

namespace lgen {

// Per-timestep diffusion coefficients, 1-indexed (beta[0] unused).
struct DiffusionSchedule {
    int T = 0;
    std::vector<double> beta;       // size T+1
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // running product; alpha_bar[0] = 1
    std::vector<double> sigma;      // sqrt(beta_t (1 - abar_{t-1}) / (1 - abar_t))

    void check_t(int t) const {
        if (t < 1 || t > T)
            throw std::invalid_argument("timestep " + std::to_string(t) +
                                        " outside [1," + std::to_string(T) + "]");
    }
};

// Linear betas span [1e-4, 2e-2] at T=1000 and are rescaled by 1000/T for
// other step counts so alpha_bar_T stays in the same regime.
inline DiffusionSchedule make_schedule(int T, const std::string& kind = "linear") {
    if (T < 2) throw std::invalid_argument("make_schedule: T must be >= 2");
    DiffusionSchedule s;
    s.T = T;
    s.beta.assign(static_cast<size_t>(T) + 1, 0.0);
    if (kind == "linear") {
        double scale = 1000.0 / static_cast<double>(T);
        for (int t = 1; t <= T; ++t) {
            double frac = static_cast<double>(t - 1) / static_cast<double>(T - 1);
            s.beta[static_cast<size_t>(t)] =
                std::min(scale * (1e-4 + frac * (2e-2 - 1e-4)), 0.999);
        }
    } else if (kind == "cosine") {
        auto abar = [T](double t) {
            double off = 0.008;
            double v = std::cos((t / T + off) / (1 + off) * kPi / 2);
            return v * v;
        };
        double a0 = abar(0);
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            double cur = abar(static_cast<double>(t)) / a0;
            double b = std::clamp(1.0 - cur / prev, 1e-8, 0.999);
            // enforce nondecreasing betas
            if (t > 1) b = std::max(b, s.beta[static_cast<size_t>(t - 1)]);
            s.beta[static_cast<size_t>(t)] = b;
            prev *= 1.0 - b;
        }
    } else {
        throw std::invalid_argument("make_schedule: unknown kind '" + kind + "'");
    }
    s.alpha.assign(static_cast<size_t>(T) + 1, 1.0);
    s.alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0);
    s.sigma.assign(static_cast<size_t>(T) + 1, 0.0);
    for (int t = 1; t <= T; ++t) {
        s.alpha[static_cast<size_t>(t)] = 1.0 - s.beta[static_cast<size_t>(t)];
        s.alpha_bar[static_cast<size_t>(t)] =
            s.alpha_bar[static_cast<size_t>(t - 1)] * s.alpha[static_cast<size_t>(t)];
        double num = 1.0 - s.alpha_bar[static_cast<size_t>(t - 1)];
        double den = 1.0 - s.alpha_bar[static_cast<size_t>(t)];
        s.sigma[static_cast<size_t>(t)] =
            std::sqrt(s.beta[static_cast<size_t>(t)] * num / den);
    }
    return s;
}

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, elementwise over plain buffers.
inline std::vector<double> q_sample(const std::vector<double>& x0, int t,
                                    const std::vector<double>& eps,
                                    const DiffusionSchedule& sched) {
    sched.check_t(t);
    if (x0.size() != eps.size())
        throw std::invalid_argument("q_sample: x0/eps size mismatch");
    double a = std::sqrt(sched.alpha_bar[static_cast<size_t>(t)]);
    double b = std::sqrt(1.0 - sched.alpha_bar[static_cast<size_t>(t)]);
    std::vector<double> out(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

inline Tensor q_sample(const Tensor& x0, int t, const Tensor& eps,
                       const DiffusionSchedule& sched) {
    sched.check_t(t);
    if (x0.shape() != eps.shape())
        throw std::invalid_argument("q_sample: shape mismatch " +
                                    shape_str(x0.shape()) + " vs " +
                                    shape_str(eps.shape()));
    double a = std::sqrt(sched.alpha_bar[static_cast<size_t>(t)]);
    double b = std::sqrt(1.0 - sched.alpha_bar[static_cast<size_t>(t)]);
    return add(scalar_mul(x0, a), scalar_mul(eps, b));
}

// Reverse update: (x_t - (1-a_t)/sqrt(1-abar_t) * eps_hat) / sqrt(a_t) + sigma_t z.
// z must be zero at t = 1.
inline std::vector<double> reverse_step_values(const std::vector<double>& x_t,
                                               const std::vector<double>& eps_hat,
                                               int t, const DiffusionSchedule& sched,
                                               const std::vector<double>& z) {
    sched.check_t(t);
    if (x_t.size() != eps_hat.size() || x_t.size() != z.size())
        throw std::invalid_argument("reverse_step: size mismatch");
    if (t == 1)
        for (double v : z)
            if (v != 0.0)
                throw std::invalid_argument("reverse_step: z must be 0 at t=1");
    double at = sched.alpha[static_cast<size_t>(t)];
    double coef = (1.0 - at) / std::sqrt(1.0 - sched.alpha_bar[static_cast<size_t>(t)]);
    double inv = 1.0 / std::sqrt(at);
    double sg = sched.sigma[static_cast<size_t>(t)];
    std::vector<double> out(x_t.size());
    for (size_t i = 0; i < x_t.size(); ++i)
        out[i] = inv * (x_t[i] - coef * eps_hat[i]) + sg * z[i];
    return out;
}

// x0_hat = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t), on the tape.
inline Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, int t,
                         const DiffusionSchedule& sched) {
    sched.check_t(t);
    double abar = sched.alpha_bar[static_cast<size_t>(t)];
    return scalar_mul(sub(x_t, scalar_mul(eps_hat, std::sqrt(1.0 - abar))),
                      1.0 / std::sqrt(abar));
}

}  // namespace lgen
