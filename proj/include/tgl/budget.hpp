#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tgl/errors.hpp"
#include "tgl/gates.hpp"
#include "tgl/layers.hpp"
#include "tgl/ops.hpp"
#include "tgl/tensor.hpp"

namespace tgl {

// What the budget is measured in:
//   flops    - multiply-accumulates of the weight tensors, per sample;
//   params   - weight and bias elements;
//   channels - gated output channels, counted over channel-gated layers only.
enum class CostKind { flops, params, channels };

inline std::string to_string(CostKind k) {
    switch (k) {
        case CostKind::flops: return "flops";
        case CostKind::params: return "params";
        case CostKind::channels: return "channels";
    }
    throw value_error("to_string: unknown cost kind");
}

inline CostKind cost_kind_from_string(const std::string& name) {
    if (name == "flops") return CostKind::flops;
    if (name == "params") return CostKind::params;
    if (name == "channels") return CostKind::channels;
    throw value_error("unknown cost kind '" + name + "'");
}

struct BudgetSpec {
    CostKind kind = CostKind::flops;
    Real rho = 0.5;     // target fraction of the ungated cost
    Real lambda = 0.1;  // penalty strength

    void validate() const {
        if (!(rho > 0) || !(rho <= 1))
            throw value_error("budget target must lie in (0, 1], got " + std::to_string(rho));
        if (lambda < 0) throw value_error("budget penalty strength must be non-negative");
    }
};

namespace detail {

// The three cost flavours run the same structural walk and differ only in
// what a gate bank contributes: its size (static), its open count (masked),
// or its differentiable gate sum on a tape (gated). The policy supplies that
// and the arithmetic, so the coupling logic exists exactly once.
struct ScalarCost {
    using V = Real;
    std::function<Real(const TrainableGateLayer&)> bank_sum;
    static V constant(Real c) { return c; }
    static V add(V a, V b) { return a + b; }
    static V mul(V a, V b) { return a * b; }
    static V scale(V a, Real c) { return a * c; }
    V sum(const TrainableGateLayer& g) const { return bank_sum(g); }
};

struct TapeCost {
    using V = Tensor;
    Tape* tape;
    static V constant(Real c) { return Tensor::scalar(c); }
    V add(V a, V b) const { return tgl::add(a, b, tape); }
    V mul(V a, V b) const { return tgl::mul(a, b, tape); }
    V scale(V a, Real c) const { return tgl::scale(a, c, tape); }
    V sum(const TrainableGateLayer& g) const {
        return tgl::sum(gate_tensor(*g.weights, g.spec, tape), tape);
    }
};

// Walks the layer stack accumulating the cost of each parameterized layer.
// Channel gates feed across layers: a layer whose predecessor is channel
// gated sees the predecessor's gate sum as its input count (scaled by the
// spatial extent a flatten in between turns each channel into).
template <typename Policy>
typename Policy::V accumulate_cost(const GatedModel& model, CostKind kind, Shape sample,
                                   const Policy& p,
                                   std::vector<std::pair<std::string, typename Policy::V>>* rows) {
    using V = typename Policy::V;
    model.validate();
    V total = p.constant(0);

    bool have_pred_gate = false;  // nearest preceding parameterized layer is channel gated
    V pred_sum = p.constant(0);
    Real unit = 1;  // input features per predecessor channel (spatial extent after flatten)

    for (const Layer& l : model.layers) {
        if (l.kind == Layer::Kind::flatten) {
            if (sample.size() < 2)
                throw shape_error("flatten: sample shape " + shape_str(sample) +
                                  " has no axes to merge");
            Real spatial = 1;
            for (std::size_t i = 1; i < sample.size(); ++i) spatial *= static_cast<Real>(sample[i]);
            unit *= spatial;
            sample = {numel(sample)};
            continue;
        }
        if (!l.parameterized()) continue;

        // static geometry of this layer
        Real in_static = 0, out_static = 0, window = 1, out_spatial = 1;
        if (l.kind == Layer::Kind::dense) {
            if (sample.size() != 1)
                throw shape_error("layer '" + l.name + "': dense input must be flat, sample is " +
                                  shape_str(sample));
            if (sample[0] != l.weight->dim(0))
                throw shape_error("layer '" + l.name + "': expects " +
                                  std::to_string(l.weight->dim(0)) + " inputs, sample provides " +
                                  std::to_string(sample[0]));
            in_static = static_cast<Real>(l.weight->dim(0));
            out_static = static_cast<Real>(l.weight->dim(1));
            sample = {l.weight->dim(1)};
        } else {
            if (sample.size() != 3)
                throw shape_error("layer '" + l.name + "': conv input must be CHW, sample is " +
                                  shape_str(sample));
            const ConvDims d = conv2d_dims({1, sample[0], sample[1], sample[2]}, l.weight->shape(),
                                           l.stride, l.padding);
            in_static = static_cast<Real>(d.cin);
            out_static = static_cast<Real>(d.cout);
            window = static_cast<Real>(d.k * d.k);
            out_spatial = static_cast<Real>(d.hout * d.wout);
            sample = {d.cout, d.hout, d.wout};
        }

        // effective input count, with the cross-layer gate coupling
        V in_eff = have_pred_gate ? p.scale(pred_sum, unit) : p.constant(in_static);

        const bool channel_gated = l.gate && l.gate->mode == GateMode::channel;
        V out_eff = channel_gated ? p.sum(*l.gate) : p.constant(out_static);

        V cost = p.constant(0);
        switch (kind) {
            case CostKind::flops:
                if (l.gate && l.gate->mode == GateMode::weight) {
                    // each surviving weight is one multiply per output position
                    cost = p.scale(p.sum(*l.gate), out_spatial);
                } else if (l.gate && l.gate->mode == GateMode::block) {
                    cost = p.mul(p.sum(*l.gate),
                                 p.scale(in_eff, out_static * window * out_spatial));
                } else {
                    cost = p.scale(p.mul(in_eff, out_eff), window * out_spatial);
                }
                break;
            case CostKind::params: {
                const Real bias_n = l.bias ? static_cast<Real>(l.bias->size()) : 0;
                if (l.gate && l.gate->mode == GateMode::weight) {
                    cost = p.add(p.sum(*l.gate), p.constant(bias_n));
                } else if (l.gate && l.gate->mode == GateMode::block) {
                    cost = p.mul(p.sum(*l.gate),
                                 p.add(p.scale(in_eff, out_static * window), p.constant(bias_n)));
                } else {
                    cost = p.scale(p.mul(in_eff, out_eff), window);
                    if (l.bias) {
                        // channel gates remove the matching bias entries too
                        cost = p.add(cost, channel_gated ? p.sum(*l.gate) : p.constant(bias_n));
                    }
                }
                break;
            }
            case CostKind::channels:
                if (channel_gated) cost = p.sum(*l.gate);
                break;
        }
        if (rows) rows->emplace_back(l.name, cost);
        total = p.add(total, cost);

        have_pred_gate = channel_gated;
        if (channel_gated) pred_sum = out_eff;
        unit = 1;
    }
    return total;
}

inline Real bank_size(const TrainableGateLayer& g) { return static_cast<Real>(g.weights->size()); }
inline Real bank_open(const TrainableGateLayer& g) {
    return static_cast<Real>(open_count(*g.weights));
}

}  // namespace detail

// Cost of the model with every gate treated as open (the dense baseline).
inline Real static_cost(const GatedModel& model, CostKind kind, const Shape& sample_shape) {
    detail::ScalarCost p{detail::bank_size};
    return detail::accumulate_cost(model, kind, sample_shape, p, nullptr);
}

// Cost with gates collapsed to hard 0/1 decisions: what the pruned network
// will actually cost.
inline Real masked_cost(const GatedModel& model, CostKind kind, const Shape& sample_shape) {
    detail::ScalarCost p{detail::bank_open};
    return detail::accumulate_cost(model, kind, sample_shape, p, nullptr);
}

// Differentiable cost: channel counts are replaced by gate sums, recorded on
// the tape so the budget penalty reaches the gate weights.
inline Tensor gated_cost(const GatedModel& model, CostKind kind, const Shape& sample_shape,
                         Tape* tape) {
    detail::TapeCost p{tape};
    return detail::accumulate_cost(model, kind, sample_shape, p, nullptr);
}

inline Real cost_ratio(const GatedModel& model, CostKind kind, const Shape& sample_shape) {
    const Real total = static_cost(model, kind, sample_shape);
    if (total <= 0)
        throw value_error("cost ratio over " + to_string(kind) +
                          " is undefined: the ungated model has zero cost of this kind");
    return masked_cost(model, kind, sample_shape) / total;
}

// Penalty pulling the differentiable cost toward the target fraction:
// lambda * (rho - gated/static)^2.
inline Tensor budget_penalty(const GatedModel& model, const BudgetSpec& budget,
                             const Shape& sample_shape, Tape* tape) {
    budget.validate();
    const Real total = static_cost(model, budget.kind, sample_shape);
    if (total <= 0)
        throw value_error("budget over " + to_string(budget.kind) +
                          " is undefined: the ungated model has zero cost of this kind");
    Tensor ratio = scale(gated_cost(model, budget.kind, sample_shape, tape), Real(1) / total, tape);
    Tensor gap = sub(Tensor::scalar(budget.rho), ratio, tape);
    return scale(square(gap, tape), budget.lambda, tape);
}

// Per-layer accounting for reports.
struct CostRow {
    std::string layer;
    Real dense_cost;   // all gates open
    Real masked;       // hard gate decisions applied
};

struct CostReport {
    CostKind kind;
    std::vector<CostRow> rows;
    Real dense_total = 0;
    Real masked_total = 0;
    Real ratio = 0;
};

inline CostReport make_cost_report(const GatedModel& model, CostKind kind,
                                   const Shape& sample_shape) {
    std::vector<std::pair<std::string, Real>> dense_rows, masked_rows;
    detail::ScalarCost all{detail::bank_size};
    detail::ScalarCost open{detail::bank_open};
    CostReport r;
    r.kind = kind;
    r.dense_total = detail::accumulate_cost(model, kind, sample_shape, all, &dense_rows);
    r.masked_total = detail::accumulate_cost(model, kind, sample_shape, open, &masked_rows);
    for (std::size_t i = 0; i < dense_rows.size(); ++i)
        r.rows.push_back({dense_rows[i].first, dense_rows[i].second, masked_rows[i].second});
    r.ratio = r.dense_total > 0 ? r.masked_total / r.dense_total : 0;
    return r;
}

}  // namespace tgl
