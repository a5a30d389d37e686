#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tgl/errors.hpp"
#include "tgl/tensor.hpp"

namespace tgl {

// Backward rule of one recorded node. `need[i]` tells the rule whether input i
// is reachable from a watched leaf; rules may return an empty tensor for
// inputs that are not needed.
using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& upstream, const std::vector<bool>& need)>;

// Gradients produced by one backward pass, keyed by tape node id. Every
// watched leaf has an entry (zeros if the loss never reached it).
class GradientMap {
public:
    GradientMap(std::uint64_t tape_id, std::unordered_map<std::int64_t, Tensor> grads)
        : tape_id_(tape_id), grads_(std::move(grads)) {}

    const Tensor* find(const Tensor& t) const {
        if (t.tape_id != tape_id_ || t.node < 0) return nullptr;
        auto it = grads_.find(t.node);
        return it == grads_.end() ? nullptr : &it->second;
    }

    const Tensor& at(const Tensor& t) const {
        const Tensor* g = find(t);
        if (!g) throw value_error("gradient map: tensor has no gradient on this tape");
        return *g;
    }

    bool contains(const Tensor& t) const { return find(t) != nullptr; }
    std::size_t size() const { return grads_.size(); }

    // Uniformly rescales every stored gradient (gradient clipping).
    void scale_all(Real factor) {
        for (auto& [id, g] : grads_)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= factor;
    }

    // Euclidean norm over the gradients of the given tensors.
    Real global_norm(const std::vector<const Tensor*>& tensors) const {
        Real sq = 0;
        for (const Tensor* t : tensors) {
            const Tensor& g = at(*t);
            for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
        }
        return std::sqrt(sq);
    }

private:
    std::uint64_t tape_id_;
    std::unordered_map<std::int64_t, Tensor> grads_;
};

// Append-only record of the forward computation. Node inputs always precede
// the node itself, so one reverse sweep propagates every adjoint. Single
// threaded by contract; each training step owns a fresh tape.
class Tape {
public:
    Tape() : id_(next_id()) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::uint64_t id() const { return id_; }
    std::size_t size() const { return nodes_.size(); }

    // Registers `t` as a leaf (parameter or input we want gradients for).
    // Idempotent: watching the same tensor object twice on one tape reuses the
    // node, which is what makes shared gate vectors accumulate all their
    // gradients into a single slot.
    std::int64_t watch(Tensor& t) {
        if (t.tape_id == id_ && t.node >= 0) return t.node;
        nodes_.push_back(Node{{}, {}, t.shape(), nullptr});
        t.tape_id = id_;
        t.node = static_cast<std::int64_t>(nodes_.size()) - 1;
        return t.node;
    }

    // Records an op that produced `out` from `inputs`; returns out's node id.
    // Inputs not attached to this tape are treated as constants.
    std::int64_t record(const std::vector<const Tensor*>& inputs, const Shape& out_shape,
                        BackwardFn fn) {
        Node n;
        n.inputs.reserve(inputs.size());
        n.input_shapes.reserve(inputs.size());
        for (const Tensor* in : inputs) {
            n.inputs.push_back(in->tape_id == id_ ? in->node : -1);
            n.input_shapes.push_back(in->shape());
        }
        n.out_shape = out_shape;
        n.fn = std::move(fn);
        nodes_.push_back(std::move(n));
        return static_cast<std::int64_t>(nodes_.size()) - 1;
    }

    // Attaches a freshly computed value to this tape.
    Tensor attach(Tensor value, const std::vector<const Tensor*>& inputs, BackwardFn fn) {
        std::int64_t id = record(inputs, value.shape(), std::move(fn));
        value.tape_id = id_;
        value.node = id;
        return value;
    }

    // Reverse sweep from `loss` (a scalar on this tape). Adjoints accumulate
    // additively, so a tensor consumed by several ops receives the sum of all
    // path gradients. Unreached watched leaves get zero gradients.
    GradientMap backward(const Tensor& loss) const {
        if (loss.size() != 1) throw value_error("backward: loss must be a scalar");
        if (loss.tape_id != id_ || loss.node < 0)
            throw value_error("backward: loss is not attached to this tape");

        std::vector<std::optional<Tensor>> adj(nodes_.size());
        adj[static_cast<std::size_t>(loss.node)] = Tensor::ones(nodes_[loss.node].out_shape);

        for (std::int64_t i = loss.node; i >= 0; --i) {
            const Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.fn || !adj[static_cast<std::size_t>(i)]) continue;
            std::vector<bool> need(n.inputs.size());
            for (std::size_t j = 0; j < n.inputs.size(); ++j) need[j] = n.inputs[j] >= 0;
            std::vector<Tensor> gin = n.fn(*adj[static_cast<std::size_t>(i)], need);
            if (gin.size() != n.inputs.size())
                throw gradient_error("backward rule returned " + std::to_string(gin.size()) +
                                     " gradients for " + std::to_string(n.inputs.size()) + " inputs");
            for (std::size_t j = 0; j < n.inputs.size(); ++j) {
                if (n.inputs[j] < 0) continue;
                if (gin[j].shape() != n.input_shapes[j])
                    throw gradient_error("backward rule produced gradient of shape " +
                                         shape_str(gin[j].shape()) + " for input of shape " +
                                         shape_str(n.input_shapes[j]));
                accumulate(adj, n.inputs[j], gin[j]);
            }
        }

        std::unordered_map<std::int64_t, Tensor> out;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            std::int64_t id = static_cast<std::int64_t>(i);
            if (adj[i]) {
                out.emplace(id, std::move(*adj[i]));
            } else if (!nodes_[i].fn) {
                // watched leaf the loss never reached
                out.emplace(id, Tensor::zeros(nodes_[i].out_shape));
            }
        }
        return GradientMap(id_, std::move(out));
    }

private:
    struct Node {
        std::vector<std::int64_t> inputs;
        std::vector<Shape> input_shapes;
        Shape out_shape;
        BackwardFn fn;  // null for leaves
    };

    static void accumulate(std::vector<std::optional<Tensor>>& adj, std::int64_t id,
                           const Tensor& g) {
        auto& slot = adj[static_cast<std::size_t>(id)];
        if (!slot) {
            slot = g;
        } else {
            Real* a = slot->data();
            const Real* b = g.data();
            for (std::size_t k = 0; k < g.size(); ++k) a[k] += b[k];
        }
    }

    static std::uint64_t next_id() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    std::vector<Node> nodes_;
    std::uint64_t id_;
};

inline GradientMap backward(const Tape& tape, const Tensor& loss) { return tape.backward(loss); }

}  // namespace tgl
