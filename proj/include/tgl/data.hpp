#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tgl/errors.hpp"
#include "tgl/rng.hpp"
#include "tgl/tensor.hpp"

namespace tgl {

enum class TaskKind { regression, classification };

inline std::string to_string(TaskKind t) {
    return t == TaskKind::regression ? "regression" : "classification";
}

inline TaskKind task_kind_from_string(const std::string& name) {
    if (name == "regression") return TaskKind::regression;
    if (name == "classification") return TaskKind::classification;
    throw value_error("unknown task kind '" + name + "'");
}

// Inputs stacked along axis 0; regression targets as a tensor, classification
// targets as class ids.
struct Dataset {
    Tensor inputs;
    Tensor targets;                   // regression
    std::vector<std::size_t> labels;  // classification

    std::size_t size() const { return inputs.rank() == 0 ? 0 : inputs.dim(0); }

    // Per-sample shape (inputs without the stacking axis).
    Shape sample_shape() const {
        Shape s;
        for (std::size_t i = 1; i < inputs.rank(); ++i) s.push_back(inputs.dim(i));
        return s;
    }
};

// Gathers rows of a stacked tensor along axis 0.
inline Tensor take_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
    if (t.rank() == 0) throw shape_error("take_rows: tensor has no rows");
    std::size_t row = 1;
    for (std::size_t i = 1; i < t.rank(); ++i) row *= t.dim(i);
    Shape out_shape = t.shape();
    out_shape[0] = idx.size();
    Tensor out(out_shape);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= t.dim(0))
            throw value_error("take_rows: index " + std::to_string(idx[k]) + " out of range for " +
                              std::to_string(t.dim(0)) + " rows");
        const Real* src = t.data() + idx[k] * row;
        Real* dst = out.data() + k * row;
        for (std::size_t j = 0; j < row; ++j) dst[j] = src[j];
    }
    return out;
}

inline Dataset take_subset(const Dataset& d, const std::vector<std::size_t>& idx) {
    Dataset out;
    out.inputs = take_rows(d.inputs, idx);
    if (d.targets.size() > 0 && d.targets.rank() > 0) out.targets = take_rows(d.targets, idx);
    if (!d.labels.empty()) {
        out.labels.reserve(idx.size());
        for (std::size_t i : idx) out.labels.push_back(d.labels.at(i));
    }
    return out;
}

// Single-frequency regression: y = sin(freq * x), x uniform on [-pi, pi].
inline Dataset make_sine_dataset(std::size_t n, Real freq, std::uint64_t seed) {
    if (n == 0) throw value_error("sine dataset: need at least one sample");
    RandomStream rng(seed);
    const Real pi = Real(3.14159265358979323846);
    Dataset d;
    d.inputs = Tensor(Shape{n, 1});
    d.targets = Tensor(Shape{n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        const Real x = rng.uniform(-pi, pi);
        d.inputs[i] = x;
        d.targets[i] = std::sin(freq * x);
    }
    return d;
}

// Sparse linear regression with a known answer: standard normal features,
// targets that sum a hidden subset of them, and observation noise of scale
// `noise`. Recovering the subset is the whole task, so the coefficients are
// deliberately plain: one on the support, zero elsewhere.
struct PlantedProblem {
    Dataset data;
    std::vector<std::size_t> support;  // indices of the truly relevant features
    std::vector<Real> coefficients;    // dense true weights (zero off support)
};

inline PlantedProblem make_planted_dataset(std::size_t n, std::size_t features,
                                           std::size_t relevant, Real noise, std::uint64_t seed) {
    if (relevant < 1 || relevant > features || features > 12)
        throw value_error("planted dataset: need 1 <= relevant <= features <= 12, got " +
                          std::to_string(relevant) + " of " + std::to_string(features));
    if (n == 0) throw value_error("planted dataset: need at least one sample");
    RandomStream rng(seed);

    PlantedProblem p;
    std::vector<std::size_t> order(features);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    p.support.assign(order.begin(), order.begin() + relevant);
    std::sort(p.support.begin(), p.support.end());

    p.coefficients.assign(features, 0);
    for (std::size_t j : p.support) p.coefficients[j] = 1;

    p.data.inputs = Tensor(Shape{n, features});
    p.data.targets = Tensor(Shape{n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        Real y = 0;
        for (std::size_t j = 0; j < features; ++j) {
            const Real x = rng.normal();
            p.data.inputs[i * features + j] = x;
            y += x * p.coefficients[j];
        }
        p.data.targets[i] = y + rng.normal(0, noise);
    }
    return p;
}

// Ten-class image toy set: each class is a soft blob at a fixed angle around
// the image centre, with the blob centre jittered per sample. Linearly far
// from trivial pixel rules but easy enough for a small conv net.
inline Dataset make_blob_dataset(std::size_t n, std::uint64_t seed, std::size_t side = 28,
                                 std::size_t classes = 10) {
    if (n == 0) throw value_error("blob dataset: need at least one sample");
    RandomStream rng(seed);
    const Real pi = Real(3.14159265358979323846);
    const Real mid = (static_cast<Real>(side) - 1) / 2;
    const Real radius = static_cast<Real>(side) * Real(0.29);
    const Real sigma = Real(2.5);

    Dataset d;
    d.inputs = Tensor(Shape{n, 1, side, side});
    d.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = rng.index(classes);
        d.labels.push_back(cls);
        const Real angle = 2 * pi * static_cast<Real>(cls) / static_cast<Real>(classes);
        const Real cy = mid + radius * std::sin(angle) + rng.normal(0, Real(0.8));
        const Real cx = mid + radius * std::cos(angle) + rng.normal(0, Real(0.8));
        Real* img = d.inputs.data() + i * side * side;
        for (std::size_t r = 0; r < side; ++r)
            for (std::size_t c = 0; c < side; ++c) {
                const Real dy = static_cast<Real>(r) - cy;
                const Real dx = static_cast<Real>(c) - cx;
                img[r * side + c] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            }
    }
    return d;
}

}  // namespace tgl
