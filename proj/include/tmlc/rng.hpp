#pragma once

#include <cstdint>
#include <random>

#include "tmlc/tensor.hpp"

namespace tmlc {

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline Tensor random_uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

inline Tensor random_normal(std::vector<std::size_t> shape, double mean, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

// Random point on the probability simplex (normalized exponentials).
inline Tensor random_simplex(std::size_t n, Rng& rng) {
    Tensor t({n});
    std::exponential_distribution<double> dist(1.0);
    double sum = 0.0;
    for (auto& v : t.data()) {
        v = dist(rng);
        sum += v;
    }
    for (auto& v : t.data()) v /= sum;
    return t;
}

} // namespace tmlc
