#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "tkfnet/tensor.hpp"

namespace tkfnet {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; a stateless hash of a 64-bit counter.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) noexcept {
    return splitmix64(splitmix64(a) ^ (b + 0x632be59bd9b4e019ULL));
}

/// Fisher-Yates permutation of [0, n) driven by a counter-based generator,
/// so the result depends only on (key, n).
inline std::vector<std::size_t> counter_permutation(std::size_t n, std::uint64_t key) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(splitmix64(key + i) % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

template <typename T>
void fill_normal(BasicTensor<T>& t, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (T& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(BasicTensor<T>& t, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (T& v : t.data()) v = static_cast<T>(dist(rng));
}

}  // namespace tkfnet
