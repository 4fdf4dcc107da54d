/**
 * @file rng.h
 * @brief Seeded random source shared by initialization, dropout and data order.
 */
#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mft {

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    float normal(float mean, float stddev) {
        std::normal_distribution<float> dist(mean, stddev);
        return dist(engine_);
    }
    float uniform(float lo, float hi) {
        std::uniform_real_distribution<float> dist(lo, hi);
        return dist(engine_);
    }
    uint64_t next() { return engine_(); }
    /// Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return std::uniform_int_distribution<uint64_t>(0, n - 1)(engine_); }

    /// Fisher-Yates with this engine, so orders are stable for a given seed.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace mft
