#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "tgl/errors.hpp"
#include "tgl/tape.hpp"
#include "tgl/tensor.hpp"

namespace tgl {

// First-order update rule over a set of parameter tensors. State is keyed by
// the tensor object's address, so parameters must stay at stable addresses
// between steps (they are held by shared_ptr throughout).
class Optimizer {
public:
    virtual ~Optimizer() = default;

    virtual void step(const std::vector<std::shared_ptr<Tensor>>& params,
                      const GradientMap& grads) = 0;

    Real lr() const { return lr_; }
    void set_lr(Real lr) {
        if (!(lr > 0)) throw value_error("learning rate must be positive");
        lr_ = lr;
    }

protected:
    explicit Optimizer(Real lr) { set_lr(lr); }
    Real lr_ = 0;
};

// Gradient descent with classical momentum: v <- mu*v + g, p <- p - lr*v.
class Sgd : public Optimizer {
public:
    explicit Sgd(Real lr, Real momentum = 0.9) : Optimizer(lr), momentum_(momentum) {
        if (momentum < 0 || momentum >= 1)
            throw value_error("momentum must lie in [0, 1), got " + std::to_string(momentum));
    }

    void step(const std::vector<std::shared_ptr<Tensor>>& params,
              const GradientMap& grads) override {
        for (const std::shared_ptr<Tensor>& p : params) {
            const Tensor& g = grads.at(*p);
            Tensor& v = velocity_.try_emplace(p.get(), Tensor::zeros(p->shape())).first->second;
            for (std::size_t i = 0; i < p->size(); ++i) {
                v[i] = momentum_ * v[i] + g[i];
                (*p)[i] -= lr_ * v[i];
            }
        }
    }

private:
    Real momentum_;
    std::unordered_map<const Tensor*, Tensor> velocity_;
};

// Adam with bias-corrected moment estimates.
class Adam : public Optimizer {
public:
    explicit Adam(Real lr = 1e-4, Real beta1 = 0.9, Real beta2 = 0.999, Real eps = 1e-8)
        : Optimizer(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw value_error("adam betas must lie in [0, 1)");
        if (!(eps > 0)) throw value_error("adam epsilon must be positive");
    }

    void step(const std::vector<std::shared_ptr<Tensor>>& params,
              const GradientMap& grads) override {
        for (const std::shared_ptr<Tensor>& p : params) {
            const Tensor& g = grads.at(*p);
            State& s = state_.try_emplace(p.get(), State{Tensor::zeros(p->shape()),
                                                         Tensor::zeros(p->shape()), 0})
                           .first->second;
            s.t += 1;
            const Real c1 = Real(1) - std::pow(beta1_, static_cast<Real>(s.t));
            const Real c2 = Real(1) - std::pow(beta2_, static_cast<Real>(s.t));
            for (std::size_t i = 0; i < p->size(); ++i) {
                s.m[i] = beta1_ * s.m[i] + (Real(1) - beta1_) * g[i];
                s.v[i] = beta2_ * s.v[i] + (Real(1) - beta2_) * g[i] * g[i];
                const Real mhat = s.m[i] / c1;
                const Real vhat = s.v[i] / c2;
                (*p)[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    struct State {
        Tensor m, v;
        std::uint64_t t;
    };
    Real beta1_, beta2_, eps_;
    std::unordered_map<const Tensor*, State> state_;
};

inline std::unique_ptr<Optimizer> make_optimizer(const std::string& name, Real lr,
                                                 Real momentum = 0.9) {
    if (name == "adam") return std::make_unique<Adam>(lr);
    if (name == "sgd") return std::make_unique<Sgd>(lr, momentum);
    throw value_error("unknown optimizer '" + name + "'");
}

}  // namespace tgl
