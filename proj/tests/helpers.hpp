#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "tgl/tensor.hpp"

namespace tgl::test {

// Deterministic value source for property tests. Fixed seeds per test case so
// failures reproduce exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform(double lo, double hi) {
        const double u = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
        return lo + u * (hi - lo);
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }

    Tensor tensor(Shape shape, double lo = -1.0, double hi = 1.0) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(uniform(lo, hi));
        return t;
    }

private:
    std::mt19937_64 eng_;
};

// Relative difference with an absolute floor, so tiny gradients compare on an
// absolute scale instead of blowing up the ratio.
inline double rel_diff(double a, double b, double floor = 1e-4) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central-difference gradient of a scalar-valued function at x.
inline Tensor fd_grad(const std::function<Real(const Tensor&)>& f, const Tensor& x,
                      double h = 1e-5) {
    Tensor g(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Real xi = x[i];
        probe[i] = xi + static_cast<Real>(h);
        const Real up = f(probe);
        probe[i] = xi - static_cast<Real>(h);
        const Real down = f(probe);
        probe[i] = xi;
        g[i] = static_cast<Real>((up - down) / (2 * h));
    }
    return g;
}

}  // namespace tgl::test
