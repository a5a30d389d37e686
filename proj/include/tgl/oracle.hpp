#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tgl/errors.hpp"
#include "tgl/tensor.hpp"

namespace tgl {

// Exhaustive reference answer for sparse feature selection: which subset of
// input columns, fit by ordinary least squares, explains the targets best.
// Exponential in the feature count by construction; guarded to stay small.

// Mean squared error of the least-squares fit of y on the chosen columns of X
// plus an intercept. The empty subset therefore scores the variance of y.
inline Real least_squares_mse(const Tensor& X, const Tensor& y,
                              const std::vector<std::size_t>& subset) {
    if (X.rank() != 2) throw shape_error("least squares: X must be [N,F]");
    const std::size_t n = X.dim(0), f = X.dim(1);
    if (y.size() != n) throw shape_error("least squares: need one target per row");
    for (std::size_t j : subset)
        if (j >= f)
            throw value_error("least squares: feature " + std::to_string(j) +
                              " out of range for " + std::to_string(f) + " columns");
    const std::size_t dims = subset.size() + 1;  // intercept first

    auto column = [&](std::size_t d, std::size_t row) -> Real {
        return d == 0 ? Real(1) : X[row * f + subset[d - 1]];
    };

    // normal equations A^T A beta = A^T y, solved by Gaussian elimination
    std::vector<Real> ata(dims * dims, 0), aty(dims, 0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < dims; ++i) {
            const Real xi = column(i, r);
            aty[i] += xi * y[r];
            for (std::size_t j = i; j < dims; ++j) ata[i * dims + j] += xi * column(j, r);
        }
    }
    for (std::size_t i = 0; i < dims; ++i)
        for (std::size_t j = 0; j < i; ++j) ata[i * dims + j] = ata[j * dims + i];

    for (std::size_t col = 0; col < dims; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < dims; ++r)
            if (std::abs(ata[r * dims + col]) > std::abs(ata[pivot * dims + col])) pivot = r;
        if (std::abs(ata[pivot * dims + col]) < 1e-12)
            throw numeric_error("least squares: singular normal equations");
        if (pivot != col) {
            for (std::size_t j = 0; j < dims; ++j)
                std::swap(ata[pivot * dims + j], ata[col * dims + j]);
            std::swap(aty[pivot], aty[col]);
        }
        for (std::size_t r = 0; r < dims; ++r) {
            if (r == col) continue;
            const Real factor = ata[r * dims + col] / ata[col * dims + col];
            for (std::size_t j = col; j < dims; ++j) ata[r * dims + j] -= factor * ata[col * dims + j];
            aty[r] -= factor * aty[col];
        }
    }
    std::vector<Real> beta(dims);
    for (std::size_t i = 0; i < dims; ++i) beta[i] = aty[i] / ata[i * dims + i];

    Real sse = 0;
    for (std::size_t r = 0; r < n; ++r) {
        Real pred = 0;
        for (std::size_t i = 0; i < dims; ++i) pred += beta[i] * column(i, r);
        const Real d = pred - y[r];
        sse += d * d;
    }
    return sse / static_cast<Real>(n);
}

struct OracleResult {
    std::vector<std::size_t> best_subset;  // sorted column indices
    Real best_loss = 0;
    std::size_t subsets_tried = 0;
};

// Tries every subset of at most `max_features` columns, smallest subsets
// first, and keeps the strictly best fit; ties keep the earlier (smaller,
// then lexicographically first) subset, so the answer is deterministic.
inline OracleResult brute_force_select(const Tensor& X, const Tensor& y,
                                       std::size_t max_features) {
    if (X.rank() != 2) throw shape_error("feature selection: X must be [N,F]");
    const std::size_t f = X.dim(1);
    if (f > 12)
        throw value_error("exhaustive selection over " + std::to_string(f) +
                          " features is too large; 12 is the limit");
    if (max_features > f) max_features = f;

    OracleResult best;
    best.best_loss = least_squares_mse(X, y, {});
    best.subsets_tried = 1;

    std::vector<std::size_t> subset;
    for (std::size_t k = 1; k <= max_features; ++k) {
        // enumerate k-subsets in lexicographic order
        subset.resize(k);
        for (std::size_t i = 0; i < k; ++i) subset[i] = i;
        while (true) {
            const Real loss = least_squares_mse(X, y, subset);
            best.subsets_tried += 1;
            if (loss < best.best_loss) {
                best.best_loss = loss;
                best.best_subset = subset;
            }
            // advance
            std::size_t i = k;
            while (i > 0 && subset[i - 1] == f - k + i - 1) --i;
            if (i == 0) break;
            subset[i - 1] += 1;
            for (std::size_t j = i; j < k; ++j) subset[j] = subset[j - 1] + 1;
        }
    }
    return best;
}

}  // namespace tgl
