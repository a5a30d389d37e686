#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tgl/errors.hpp"
#include "tgl/ops.hpp"
#include "tgl/tape.hpp"
#include "tgl/tensor.hpp"

namespace tgl {

// A trainable gate maps a real-valued weight to an almost-binary factor in
// [0, 1 + 1/M): closed (0) for w <= 0, open (~1) for w > 0, with a sawtooth
// residue of amplitude at most 1/M that carries a usable gradient. Training
// moves w through zero to open or close the gate; the factor itself stays
// within 1/M of a hard 0/1 step throughout, so the gated network never drifts
// far from the network that pruning will eventually produce.

// Derivative profile fed to the gate: the gradient a gate weight receives is
// shaped by g(w), with the sawtooth contributing an extra s(w)*g'(w) term.
enum class GateShape { constant_one, sigmoid_prime, tanh_prime };

struct ShapeFn {
    Real (*value)(Real);  // g(w)
    Real (*deriv)(Real);  // g'(w)
};

namespace detail {

inline Real sigmoid(Real w) { return Real(1) / (Real(1) + std::exp(-w)); }

inline Real shape_one(Real) { return Real(1); }
inline Real shape_one_d(Real) { return Real(0); }

inline Real shape_sigmoid_prime(Real w) {
    const Real s = sigmoid(w);
    return s * (Real(1) - s);
}
inline Real shape_sigmoid_prime_d(Real w) {
    const Real s = sigmoid(w);
    return s * (Real(1) - s) * (Real(1) - Real(2) * s);
}

inline Real shape_tanh_prime(Real w) {
    const Real t = std::tanh(w);
    return Real(1) - t * t;
}
inline Real shape_tanh_prime_d(Real w) {
    const Real t = std::tanh(w);
    return Real(-2) * t * (Real(1) - t * t);
}

}  // namespace detail

inline ShapeFn make_shape(GateShape shape) {
    switch (shape) {
        case GateShape::constant_one: return {detail::shape_one, detail::shape_one_d};
        case GateShape::sigmoid_prime:
            return {detail::shape_sigmoid_prime, detail::shape_sigmoid_prime_d};
        case GateShape::tanh_prime: return {detail::shape_tanh_prime, detail::shape_tanh_prime_d};
    }
    throw value_error("make_shape: unknown gate shape");
}

inline std::string to_string(GateShape shape) {
    switch (shape) {
        case GateShape::constant_one: return "constant_one";
        case GateShape::sigmoid_prime: return "sigmoid_prime";
        case GateShape::tanh_prime: return "tanh_prime";
    }
    throw value_error("to_string: unknown gate shape");
}

inline GateShape gate_shape_from_string(const std::string& name) {
    if (name == "constant_one") return GateShape::constant_one;
    if (name == "sigmoid_prime") return GateShape::sigmoid_prime;
    if (name == "tanh_prime") return GateShape::tanh_prime;
    throw value_error("unknown gate shape '" + name + "'");
}

struct GateSpec {
    Real granularity = 100000;  // M: sawtooth amplitude is 1/M
    GateShape shape = GateShape::constant_one;

    void validate() const {
        if (!(granularity > 0) || !std::isfinite(granularity))
            throw value_error("gate granularity must be positive and finite");
    }
};

// Hard selection step. Exactly zero at w == 0: a gate sitting on the boundary
// counts as closed, so pruning it away changes nothing.
inline Real step_gate(Real w) { return w > 0 ? Real(1) : Real(0); }

inline bool gate_open(Real w) { return w > 0; }

// Sawtooth residue (M*w - floor(M*w)) / M: period 1/M, range [0, 1/M), slope
// exactly 1 between breakpoints.
inline Real grad_shaping(Real w, Real granularity) {
    const Real mw = w * granularity;
    return (mw - std::floor(mw)) / granularity;
}

// Gate value: step plus shaped sawtooth. Within 1/M of the hard step for any
// profile bounded by 1.
inline Real trainable_gate(Real w, const GateSpec& spec) {
    const ShapeFn fn = make_shape(spec.shape);
    return step_gate(w) + grad_shaping(w, spec.granularity) * fn.value(w);
}

// Derivative of the gate between sawtooth breakpoints: the step contributes
// nothing, the sawtooth slope is 1, so d/dw [b + s*g] = g + s*g'. This is the
// exact piecewise derivative, used directly as the backward rule. For the
// constant profile it is exactly 1.
inline Real trainable_gate_backward(Real w, const GateSpec& spec) {
    const ShapeFn fn = make_shape(spec.shape);
    return fn.value(w) + grad_shaping(w, spec.granularity) * fn.deriv(w);
}

// Elementwise gate over a weight tensor, recorded on the tape with the
// piecewise derivative as its backward rule.
inline Tensor gate_tensor(const Tensor& w, const GateSpec& spec, Tape* tape = nullptr) {
    spec.validate();
    if (!w.all_finite()) throw value_error("gate_tensor: non-finite gate weight");
    Tensor out(w.shape());
    const ShapeFn fn = make_shape(spec.shape);
    for (std::size_t i = 0; i < w.size(); ++i)
        out[i] = step_gate(w[i]) + grad_shaping(w[i], spec.granularity) * fn.value(w[i]);
    if (!tape) return out;
    return custom_grad(
        std::move(out),
        [w, spec](const Tensor& up) {
            std::vector<Tensor> g(1);
            Tensor gw(w.shape());
            const ShapeFn fn = make_shape(spec.shape);
            for (std::size_t i = 0; i < w.size(); ++i)
                gw[i] = up[i] * (fn.value(w[i]) +
                                 grad_shaping(w[i], spec.granularity) * fn.deriv(w[i]));
            g[0] = std::move(gw);
            return g;
        },
        {&w}, tape);
}

// Hard 0/1 mask of a gate-weight tensor (the network pruning will keep).
inline std::vector<bool> gate_mask(const Tensor& w) {
    std::vector<bool> mask(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) mask[i] = gate_open(w[i]);
    return mask;
}

inline std::size_t open_count(const Tensor& w) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < w.size(); ++i) n += gate_open(w[i]) ? 1 : 0;
    return n;
}

}  // namespace tgl
