#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tgl/budget.hpp"
#include "tgl/data.hpp"
#include "tgl/layers.hpp"
#include "tgl/ops.hpp"
#include "tgl/rng.hpp"
#include "tgl/tape.hpp"

namespace tgl {

// Finite-difference verification of the whole training gradient: task loss
// plus budget penalty, differentiated through gates, convolutions, and the
// cost coupling. Gate banks run at coarse granularity (10 pieces) with the
// weights parked mid-piece: at fine granularity a usable difference step
// spans entire pieces of the gate, where a finite difference measures
// nothing. The derivative being checked is identical at every granularity.

struct GradcheckCase {
    std::string model;
    std::string param;
    Real max_rel_err = 0;
};

struct GradcheckReport {
    std::vector<GradcheckCase> cases;
    Real tolerance = 1e-4;
    Real worst = 0;

    bool pass() const { return worst < tolerance; }
};

namespace detail {

// Places every gate weight at the centre of a granularity-1/M piece, away
// from both the piece edges and the sign flip at zero.
inline void park_gates_mid_piece(GatedModel& model, RandomStream& rng) {
    for (const std::shared_ptr<Tensor>& g : model.gate_params()) {
        const Real m = Real(10);
        for (std::size_t i = 0; i < g->size(); ++i) {
            const int piece = static_cast<int>(rng.index(6)) - 3;  // pieces -3..2
            (*g)[i] = (Real(piece) + Real(0.5)) / m;
        }
    }
}

struct GradcheckProblem {
    std::string name;
    GatedModel model;
    TaskKind task = TaskKind::regression;
    BudgetSpec budget;
    Tensor inputs;
    Tensor targets;
    std::vector<std::size_t> labels;
    Shape sample_shape;
};

inline Real gradcheck_loss(const GradcheckProblem& p, Tape* tape) {
    Tensor pred = p.model.forward(p.inputs, tape);
    Tensor task = p.task == TaskKind::regression
                      ? mse_loss(pred, p.targets, tape)
                      : softmax_cross_entropy(pred, p.labels, tape);
    Tensor pen = p.model.gated_layer_count() > 0
                     ? budget_penalty(p.model, p.budget, p.sample_shape, tape)
                     : Tensor::scalar(0);
    return add(task, pen, tape).item();
}

inline void gradcheck_one(const GradcheckProblem& p, GradcheckReport& report, Real fd_step) {
    Tape tape;
    std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> watched;
    for (const Layer& l : p.model.layers) {
        if (l.weight) watched.push_back({l.name + ".weight", l.weight});
        if (l.bias) watched.push_back({l.name + ".bias", l.bias});
        if (l.gate && (watched.empty() || watched.back().second != l.gate->weights))
            watched.push_back({l.name + ".gates", l.gate->weights});
    }
    for (auto& [name, t] : watched) tape.watch(*t);

    Tensor loss;
    {
        Tensor pred = p.model.forward(p.inputs, &tape);
        Tensor task = p.task == TaskKind::regression
                          ? mse_loss(pred, p.targets, &tape)
                          : softmax_cross_entropy(pred, p.labels, &tape);
        Tensor pen = p.model.gated_layer_count() > 0
                         ? budget_penalty(p.model, p.budget, p.sample_shape, &tape)
                         : Tensor::scalar(0);
        loss = add(task, pen, &tape);
    }
    GradientMap grads = tape.backward(loss);

    for (auto& [name, t] : watched) {
        const Tensor& auto_grad = grads.at(*t);
        GradcheckCase c;
        c.model = p.name;
        c.param = name;
        for (std::size_t i = 0; i < t->size(); ++i) {
            const Real saved = (*t)[i];
            (*t)[i] = saved + fd_step;
            const Real up = gradcheck_loss(p, nullptr);
            (*t)[i] = saved - fd_step;
            const Real down = gradcheck_loss(p, nullptr);
            (*t)[i] = saved;
            const Real fd = (up - down) / (2 * fd_step);
            const Real a = auto_grad[i];
            const Real rel =
                std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), Real(1e-4)});
            if (rel > c.max_rel_err) c.max_rel_err = rel;
        }
        report.worst = std::max(report.worst, c.max_rel_err);
        report.cases.push_back(std::move(c));
    }
}

}  // namespace detail

// Builds three small gated networks covering every layer kind, gate mode, and
// loss, and compares autodiff gradients of the full training objective with
// central differences on every parameter.
inline GradcheckReport run_gradcheck_suite(std::uint64_t seed = 1, Real tolerance = 1e-4,
                                           Real fd_step = 1e-5) {
    GradcheckReport report;
    report.tolerance = tolerance;
    const GateSpec coarse{10, GateShape::sigmoid_prime};
    const GateSpec coarse_plain{10, GateShape::constant_one};

    {
        detail::GradcheckProblem p;
        p.name = "dense_channel";
        p.model.layers.push_back(Layer::dense("hidden", 2, 6, true, Activation::sine));
        p.model.layers.push_back(Layer::dense("head", 6, 1, true));
        p.model.attach_gate("hidden", GateMode::channel, coarse);
        p.budget = {CostKind::channels, 0.5, 0.1};
        RandomStream rng(derive_seed(seed, 1));
        init_model(p.model, rng);
        detail::park_gates_mid_piece(p.model, rng);
        p.inputs = rng.tensor_uniform({5, 2}, -1, 1);
        p.targets = rng.tensor_uniform({5, 1}, -1, 1);
        p.sample_shape = {2};
        detail::gradcheck_one(p, report, fd_step);
    }
    {
        detail::GradcheckProblem p;
        p.name = "dense_weight";
        p.model.layers.push_back(Layer::dense("select", 4, 3, false, Activation::relu));
        p.model.layers.push_back(Layer::dense("head", 3, 1, true));
        p.model.attach_gate("select", GateMode::weight, coarse_plain);
        p.budget = {CostKind::params, 0.4, 0.2};
        RandomStream rng(derive_seed(seed, 2));
        init_model(p.model, rng);
        detail::park_gates_mid_piece(p.model, rng);
        p.inputs = rng.tensor_uniform({6, 4}, -1, 1);
        p.targets = rng.tensor_uniform({6, 1}, -1, 1);
        p.sample_shape = {4};
        detail::gradcheck_one(p, report, fd_step);
    }
    {
        detail::GradcheckProblem p;
        p.name = "conv_classify";
        p.model.layers.push_back(
            Layer::conv("stem", 1, 3, 3, 2, Padding::same, true, Activation::relu));
        p.model.layers.push_back(Layer::flatten("flat"));
        p.model.layers.push_back(Layer::dense("head", 3 * 3 * 3, 3, true));
        p.model.attach_gate("stem", GateMode::channel, coarse);
        p.budget = {CostKind::flops, 0.5, 0.1};
        RandomStream rng(derive_seed(seed, 3));
        init_model(p.model, rng);
        detail::park_gates_mid_piece(p.model, rng);
        p.inputs = rng.tensor_uniform({4, 1, 6, 6}, -1, 1);
        p.task = TaskKind::classification;
        for (std::size_t i = 0; i < 4; ++i) p.labels.push_back(i % 3);
        p.sample_shape = {1, 6, 6};
        detail::gradcheck_one(p, report, fd_step);
    }
    return report;
}

// CSV view of a report, one row per checked tensor.
inline std::string gradcheck_csv(const GradcheckReport& r) {
    std::string out = "model,param,max_rel_err,pass\n";
    char buf[256];
    for (const GradcheckCase& c : r.cases) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%d\n", c.model.c_str(), c.param.c_str(),
                      static_cast<double>(c.max_rel_err),
                      c.max_rel_err < r.tolerance ? 1 : 0);
        out += buf;
    }
    return out;
}

}  // namespace tgl
