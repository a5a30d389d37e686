#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "tgl/budget.hpp"
#include "tgl/data.hpp"
#include "tgl/errors.hpp"
#include "tgl/layers.hpp"
#include "tgl/optim.hpp"
#include "tgl/rng.hpp"

namespace tgl {

struct TrainConfig {
    std::size_t iterations = 5000;
    std::size_t batch_size = 0;  // 0 = full batch
    Real lr = 1e-4;
    std::string optimizer = "adam";
    Real momentum = 0.9;
    Real clip_norm = 0;            // 0 = no gradient clipping
    std::size_t halve_lr_every = 0;  // 0 = constant learning rate
    bool train_task_params = true;   // false trains the gates over frozen weights
    bool train_gate_params = true;
    std::uint64_t seed = 0;        // batch shuffling stream
    std::size_t record_every = 50;

    void validate() const {
        if (iterations == 0) throw value_error("training needs at least one iteration");
        if (!(lr > 0)) throw value_error("learning rate must be positive");
        if (clip_norm < 0) throw value_error("clip norm must be non-negative");
        if (!train_task_params && !train_gate_params)
            throw value_error("training with every parameter group frozen does nothing");
        if (record_every == 0) throw value_error("record interval must be positive");
    }
};

struct StepResult {
    Real loss = 0, task_loss = 0, penalty = 0;
};

struct MetricsRow {
    std::size_t iteration = 0;
    Real loss = 0, task_loss = 0, penalty = 0;
    Real cost_ratio = 1;
    std::size_t open_gates = 0, total_gates = 0;
    Real lr = 0;
    Real eval_metric = std::numeric_limits<Real>::quiet_NaN();
};

struct TrainResult {
    std::vector<MetricsRow> history;
    StepResult final_step;
};

// Mean squared error over a dataset, computed in batches without a tape.
inline Real evaluate_mse(const GatedModel& model, const Dataset& data,
                         std::size_t batch = 256) {
    if (data.size() == 0) throw value_error("evaluate: empty dataset");
    Real sq = 0;
    std::size_t count = 0;
    for (std::size_t at = 0; at < data.size(); at += batch) {
        std::vector<std::size_t> idx;
        for (std::size_t i = at; i < std::min(at + batch, data.size()); ++i) idx.push_back(i);
        Tensor pred = model.forward(take_rows(data.inputs, idx));
        Tensor want = take_rows(data.targets, idx);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const Real d = pred[i] - want[i];
            sq += d * d;
        }
        count += pred.size();
    }
    return sq / static_cast<Real>(count);
}

// Top-1 accuracy over a labeled dataset.
inline Real evaluate_accuracy(const GatedModel& model, const Dataset& data,
                              std::size_t batch = 256) {
    if (data.size() == 0) throw value_error("evaluate: empty dataset");
    if (data.labels.size() != data.size())
        throw value_error("evaluate: dataset has no labels to score against");
    std::size_t hits = 0;
    for (std::size_t at = 0; at < data.size(); at += batch) {
        std::vector<std::size_t> idx;
        for (std::size_t i = at; i < std::min(at + batch, data.size()); ++i) idx.push_back(i);
        Tensor logits = model.forward(take_rows(data.inputs, idx));
        for (std::size_t r = 0; r < idx.size(); ++r)
            hits += argmax_row(logits, r) == data.labels[idx[r]] ? 1 : 0;
    }
    return static_cast<Real>(hits) / static_cast<Real>(data.size());
}

// Runs gradient steps of task loss plus budget penalty over a gated model.
class Trainer {
public:
    Trainer(GatedModel& model, TaskKind task, BudgetSpec budget, TrainConfig cfg,
            Shape sample_shape)
        : model_(model),
          task_(task),
          budget_(budget),
          cfg_(cfg),
          sample_shape_(std::move(sample_shape)),
          shuffle_rng_(cfg.seed) {
        cfg_.validate();
        budget_.validate();
        model_.validate();
        opt_ = make_optimizer(cfg_.optimizer, cfg_.lr, cfg_.momentum);
    }

    Optimizer& optimizer() { return *opt_; }
    const GatedModel& model() const { return model_; }

    // One optimization step on the given batch. Non-finite values anywhere in
    // the pass are reported as divergence.
    StepResult step(const Tensor& inputs, const Tensor& targets,
                    const std::vector<std::size_t>& labels) {
        Tape tape;
        std::vector<std::shared_ptr<Tensor>> trained;
        if (cfg_.train_task_params)
            for (const std::shared_ptr<Tensor>& p : model_.params()) {
                tape.watch(*p);
                trained.push_back(p);
            }
        if (cfg_.train_gate_params)
            for (const std::shared_ptr<Tensor>& g : model_.gate_params()) {
                tape.watch(*g);
                trained.push_back(g);
            }
        if (trained.empty()) throw value_error("no parameters to train");

        StepResult r;
        try {
            Tensor pred = model_.forward(inputs, &tape);
            Tensor task_l = task_ == TaskKind::regression
                                ? mse_loss(pred, targets, &tape)
                                : softmax_cross_entropy(pred, labels, &tape);
            Tensor pen = model_.gated_layer_count() > 0
                             ? budget_penalty(model_, budget_, sample_shape_, &tape)
                             : Tensor::scalar(0);
            Tensor loss = add(task_l, pen, &tape);
            r.loss = loss.item();
            r.task_loss = task_l.item();
            r.penalty = pen.item();
            if (!std::isfinite(r.loss))
                throw divergence_error("training loss became non-finite");

            GradientMap grads = tape.backward(loss);
            if (cfg_.clip_norm > 0) {
                std::vector<const Tensor*> ptrs;
                for (const auto& p : trained) ptrs.push_back(p.get());
                const Real norm = grads.global_norm(ptrs);
                if (norm > cfg_.clip_norm) grads.scale_all(cfg_.clip_norm / norm);
            }
            opt_->step(trained, grads);
        } catch (const numeric_error& e) {
            throw divergence_error(std::string("training diverged: ") + e.what());
        }
        return r;
    }

    // Full loop: minibatch sampling, learning-rate halving, periodic metric
    // rows, and a final row at the last iteration.
    TrainResult fit(const Dataset& train, const Dataset* eval = nullptr) {
        check_dataset(train);
        if (eval) check_dataset(*eval);

        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        std::size_t cursor = order.size();  // forces a shuffle on first use

        TrainResult result;
        const bool full_batch = cfg_.batch_size == 0 || cfg_.batch_size >= train.size();
        StepResult last;
        for (std::size_t iter = 0; iter < cfg_.iterations; ++iter) {
            if (cfg_.halve_lr_every > 0 && iter > 0 && iter % cfg_.halve_lr_every == 0)
                opt_->set_lr(opt_->lr() / 2);

            if (full_batch) {
                last = step(train.inputs, train.targets, train.labels);
            } else {
                if (cursor + cfg_.batch_size > order.size()) {
                    shuffle_rng_.shuffle(order);
                    cursor = 0;
                }
                std::vector<std::size_t> idx(order.begin() + cursor,
                                             order.begin() + cursor + cfg_.batch_size);
                cursor += cfg_.batch_size;
                Dataset batch = take_subset(train, idx);
                last = step(batch.inputs, batch.targets, batch.labels);
            }

            if (iter % cfg_.record_every == 0 || iter + 1 == cfg_.iterations)
                result.history.push_back(make_row(iter, last, eval));
        }
        result.final_step = last;
        return result;
    }

private:
    void check_dataset(const Dataset& d) const {
        if (d.size() == 0) throw value_error("dataset is empty");
        if (task_ == TaskKind::regression) {
            if (d.targets.rank() == 0 || d.targets.dim(0) != d.size())
                throw value_error("regression dataset needs one target row per input row");
        } else if (d.labels.size() != d.size()) {
            throw value_error("classification dataset needs one label per input row");
        }
    }

    MetricsRow make_row(std::size_t iter, const StepResult& s, const Dataset* eval) const {
        MetricsRow row;
        row.iteration = iter;
        row.loss = s.loss;
        row.task_loss = s.task_loss;
        row.penalty = s.penalty;
        row.cost_ratio = model_.gated_layer_count() > 0
                             ? cost_ratio(model_, budget_.kind, sample_shape_)
                             : Real(1);
        for (const std::shared_ptr<Tensor>& g : model_.gate_params()) {
            row.open_gates += open_count(*g);
            row.total_gates += g->size();
        }
        row.lr = opt_->lr();
        if (eval)
            row.eval_metric = task_ == TaskKind::regression ? evaluate_mse(model_, *eval)
                                                            : evaluate_accuracy(model_, *eval);
        return row;
    }

    GatedModel& model_;
    TaskKind task_;
    BudgetSpec budget_;
    TrainConfig cfg_;
    Shape sample_shape_;
    RandomStream shuffle_rng_;
    std::unique_ptr<Optimizer> opt_;
};

// Serializes metric rows with full double precision, so equal runs produce
// byte-identical files.
inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out =
        "iteration,loss,task_loss,penalty,cost_ratio,open_gates,total_gates,lr,eval_metric\n";
    char buf[512];
    for (const MetricsRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%zu,%zu,%.17g,%.17g\n",
                      r.iteration, static_cast<double>(r.loss), static_cast<double>(r.task_loss),
                      static_cast<double>(r.penalty), static_cast<double>(r.cost_ratio),
                      r.open_gates, r.total_gates, static_cast<double>(r.lr),
                      static_cast<double>(r.eval_metric));
        out += buf;
    }
    return out;
}

}  // namespace tgl
