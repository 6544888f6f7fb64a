#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lgen/rng.hpp"
#include "lgen/tensor.hpp"

namespace lgen {

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(int64_t in, int64_t out, Rng& rng) {
        double s = std::sqrt(2.0 / static_cast<double>(in + out));
        weight = Tensor::randn({in, out}, rng, s, true);
        bias = Tensor::zeros({out}, true);
    }

    Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

    void collect(std::vector<std::pair<std::string, Tensor>>& out,
                 const std::string& prefix) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

// Two-layer MLP with SiLU.
struct Mlp {
    Linear fc1, fc2;

    Mlp() = default;
    Mlp(int64_t in, int64_t hidden, int64_t out, Rng& rng)
        : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

    Tensor operator()(const Tensor& x) const { return fc2(silu(fc1(x))); }

    void collect(std::vector<std::pair<std::string, Tensor>>& out,
                 const std::string& prefix) const {
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
    }
};

// Standard sinusoidal timestep embedding:
// pe[2k] = sin(t / 10000^(2k/d)), pe[2k+1] = cos(t / 10000^(2k/d)).
inline Tensor sinusoidal_embedding(int64_t t, int64_t dim) {
    std::vector<double> v(static_cast<size_t>(dim));
    for (int64_t k = 0; 2 * k < dim; ++k) {
        double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) /
                                            static_cast<double>(dim));
        v[static_cast<size_t>(2 * k)] = std::sin(static_cast<double>(t) * freq);
        if (2 * k + 1 < dim)
            v[static_cast<size_t>(2 * k + 1)] = std::cos(static_cast<double>(t) * freq);
    }
    return Tensor::from_data({1, dim}, std::move(v));
}

// Repeats a [1,D] row M times.
inline Tensor repeat_rows(const Tensor& row, int64_t m) {
    return matmul(Tensor::full({m, 1}, 1.0), row);
}

}  // namespace lgen
