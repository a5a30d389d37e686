#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "tgl/tensor.hpp"

namespace tgl {

// Derives an independent stream seed from a base seed, so experiments can
// seed data, initialization, and shuffling separately from one user-visible
// seed. SplitMix64 finalizer.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Random values with a bit-reproducible sequence. The engine is the
// standardized mersenne generator, and all conversions to doubles and ranges
// are written out here rather than delegated to distribution objects, whose
// algorithms vary across standard libraries.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t raw() { return eng_(); }

    // Uniform in [0, 1), 53 random mantissa bits.
    Real uniform() { return static_cast<Real>((eng_() >> 11) * 0x1.0p-53); }

    Real uniform(Real lo, Real hi) { return lo + uniform() * (hi - lo); }

    // Standard normal via the polar-free Box-Muller transform; the second
    // value of each pair is cached.
    Real normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        Real u1 = uniform();
        while (u1 <= Real(0)) u1 = uniform();
        const Real u2 = uniform();
        const Real r = std::sqrt(Real(-2) * std::log(u1));
        const Real theta = Real(2) * Real(3.14159265358979323846) * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    Real normal(Real mean, Real stddev) { return mean + stddev * normal(); }

    // Unbiased index in [0, n): rejection sampling on the raw 64-bit output.
    std::size_t index(std::size_t n) {
        const std::uint64_t span = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t v = eng_();
        while (v >= limit) v = eng_();
        return static_cast<std::size_t>(v % span);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            using std::swap;
            swap(v[i - 1], v[index(i)]);
        }
    }

    Tensor tensor_uniform(Shape shape, Real lo, Real hi) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
        return t;
    }

    Tensor tensor_normal(Shape shape, Real mean = 0, Real stddev = 1) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(mean, stddev);
        return t;
    }

private:
    std::mt19937_64 eng_;
    Real cached_ = 0;
    bool have_cached_ = false;
};

}  // namespace tgl
