#pragma once

#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tgl/errors.hpp"
#include "tgl/gates.hpp"
#include "tgl/ops.hpp"
#include "tgl/rng.hpp"
#include "tgl/tensor.hpp"

namespace tgl {

enum class Activation { none, relu, sine };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::sine: return "sine";
    }
    throw value_error("to_string: unknown activation");
}

inline Activation activation_from_string(const std::string& name) {
    if (name == "none") return Activation::none;
    if (name == "relu") return Activation::relu;
    if (name == "sine") return Activation::sine;
    throw value_error("unknown activation '" + name + "'");
}

// What a gate bank multiplies:
//   channel - one gate per output channel of the layer, applied to the
//             pre-activation output (bias included);
//   weight  - one gate per weight element, applied to the weight tensor
//             before the linear op (bias stays ungated);
//   block   - a single gate scaling the whole pre-activation output.
enum class GateMode { channel, weight, block };

inline std::string to_string(GateMode m) {
    switch (m) {
        case GateMode::channel: return "channel";
        case GateMode::weight: return "weight";
        case GateMode::block: return "block";
    }
    throw value_error("to_string: unknown gate mode");
}

inline GateMode gate_mode_from_string(const std::string& name) {
    if (name == "channel") return GateMode::channel;
    if (name == "weight") return GateMode::weight;
    if (name == "block") return GateMode::block;
    throw value_error("unknown gate mode '" + name + "'");
}

// A bank of gate weights attached to one or more layers. Layers sharing a
// bank hold the same object, so one training step accumulates all their
// gradients into the same tensor.
struct TrainableGateLayer {
    GateMode mode = GateMode::channel;
    GateSpec spec;
    std::shared_ptr<Tensor> weights;

    std::vector<bool> mask() const { return gate_mask(*weights); }
    std::size_t open() const { return open_count(*weights); }
};

struct Layer {
    enum class Kind { dense, conv, flatten };

    Kind kind = Kind::dense;
    std::string name;
    std::shared_ptr<Tensor> weight;  // dense [in,out]; conv [out_ch,in_ch,k,k]
    std::shared_ptr<Tensor> bias;    // [out] / [out_ch]; null when absent
    std::size_t stride = 1;
    Padding padding = Padding::same;
    Activation act = Activation::none;
    std::shared_ptr<TrainableGateLayer> gate;  // null when ungated

    static Layer dense(std::string name, std::size_t in, std::size_t out, bool with_bias = true,
                       Activation act = Activation::none) {
        Layer l;
        l.kind = Kind::dense;
        l.name = std::move(name);
        l.weight = std::make_shared<Tensor>(Shape{in, out});
        if (with_bias) l.bias = std::make_shared<Tensor>(Shape{out});
        l.act = act;
        return l;
    }

    static Layer conv(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t k,
                      std::size_t stride = 1, Padding padding = Padding::same,
                      bool with_bias = true, Activation act = Activation::none) {
        Layer l;
        l.kind = Kind::conv;
        l.name = std::move(name);
        l.weight = std::make_shared<Tensor>(Shape{out_ch, in_ch, k, k});
        if (with_bias) l.bias = std::make_shared<Tensor>(Shape{out_ch});
        l.stride = stride;
        l.padding = padding;
        l.act = act;
        return l;
    }

    static Layer flatten(std::string name) {
        Layer l;
        l.kind = Kind::flatten;
        l.name = std::move(name);
        return l;
    }

    bool parameterized() const { return kind == Kind::dense || kind == Kind::conv; }

    // Output channels of a parameterized layer (dense columns / conv filters).
    std::size_t out_channels() const {
        if (kind == Kind::dense) return weight->dim(1);
        if (kind == Kind::conv) return weight->dim(0);
        throw value_error("layer '" + name + "' has no output channels");
    }

    std::size_t in_channels() const {
        if (kind == Kind::dense) return weight->dim(0);
        if (kind == Kind::conv) return weight->dim(1);
        throw value_error("layer '" + name + "' has no input channels");
    }

    std::size_t gate_count_for(GateMode mode) const {
        switch (mode) {
            case GateMode::channel: return out_channels();
            case GateMode::weight: return weight->size();
            case GateMode::block: return 1;
        }
        throw value_error("unknown gate mode");
    }
};

// Feed-forward stack of layers with optional trainable gates. Value type for
// tensors, shared ownership for parameters so optimizers and checkpoints can
// address them stably.
class GatedModel {
public:
    std::vector<Layer> layers;

    Layer& at(const std::string& name) {
        for (Layer& l : layers)
            if (l.name == name) return l;
        throw value_error("model has no layer named '" + name + "'");
    }
    const Layer& at(const std::string& name) const {
        return const_cast<GatedModel*>(this)->at(name);
    }

    // One forward pass. Gating happens before the activation: the gated value
    // of a layer is gate * (linear output + bias), and for weight-mode banks
    // the gates multiply the weight tensor inside the linear op instead.
    Tensor forward(const Tensor& input, Tape* tape = nullptr) const {
        validate();
        Tensor x = input;
        for (const Layer& l : layers) {
            switch (l.kind) {
                case Layer::Kind::flatten: x = flatten_op(x, tape); break;
                case Layer::Kind::dense: {
                    Tensor w = *l.weight;
                    if (l.gate && l.gate->mode == GateMode::weight)
                        w = mul(w, reshape(gate_tensor(*l.gate->weights, l.gate->spec, tape),
                                           w.shape(), tape),
                                tape);
                    x = matmul(x, w, tape);
                    if (l.bias) x = add_bias(x, *l.bias, tape);
                    x = apply_output_gate(l, x, tape);
                    break;
                }
                case Layer::Kind::conv: {
                    Tensor k = *l.weight;
                    if (l.gate && l.gate->mode == GateMode::weight)
                        k = mul(k, reshape(gate_tensor(*l.gate->weights, l.gate->spec, tape),
                                           k.shape(), tape),
                                tape);
                    x = conv2d(x, k, l.stride, l.padding, tape);
                    if (l.bias) x = add_bias(x, *l.bias, tape);
                    x = apply_output_gate(l, x, tape);
                    break;
                }
            }
            x = apply_activation(l.act, x, tape);
        }
        return x;
    }

    // Task parameters (weights and biases), in layer order.
    std::vector<std::shared_ptr<Tensor>> params() const {
        std::vector<std::shared_ptr<Tensor>> out;
        for (const Layer& l : layers) {
            if (l.weight) out.push_back(l.weight);
            if (l.bias) out.push_back(l.bias);
        }
        return out;
    }

    // Distinct gate banks, in first-use order; shared banks appear once.
    std::vector<std::shared_ptr<Tensor>> gate_params() const {
        std::vector<std::shared_ptr<Tensor>> out;
        std::unordered_set<const Tensor*> seen;
        for (const Layer& l : layers) {
            if (!l.gate) continue;
            if (seen.insert(l.gate->weights.get()).second) out.push_back(l.gate->weights);
        }
        return out;
    }

    std::size_t gated_layer_count() const {
        std::size_t n = 0;
        for (const Layer& l : layers) n += l.gate ? 1 : 0;
        return n;
    }

    // Attaches a fresh gate bank to the named layer.
    TrainableGateLayer& attach_gate(const std::string& layer_name, GateMode mode,
                                    GateSpec spec = {}) {
        spec.validate();
        Layer& l = at(layer_name);
        if (!l.parameterized())
            throw value_error("layer '" + layer_name + "' cannot carry gates");
        auto g = std::make_shared<TrainableGateLayer>();
        g->mode = mode;
        g->spec = spec;
        g->weights = std::make_shared<Tensor>(Shape{l.gate_count_for(mode)});
        l.gate = g;
        return *g;
    }

    // Makes `follower` reuse the gate bank of `leader`; both layers are then
    // opened and closed by the same weights.
    void share_gates(const std::string& leader, const std::string& follower) {
        Layer& lead = at(leader);
        Layer& follow = at(follower);
        if (!lead.gate) throw value_error("layer '" + leader + "' has no gate bank to share");
        if (!follow.parameterized())
            throw value_error("layer '" + follower + "' cannot carry gates");
        if (follow.gate_count_for(lead.gate->mode) != lead.gate->weights->size())
            throw shape_error("cannot share gates: '" + leader + "' has " +
                              std::to_string(lead.gate->weights->size()) + " gates, '" + follower +
                              "' needs " +
                              std::to_string(follow.gate_count_for(lead.gate->mode)));
        follow.gate = lead.gate;
    }

    // Structural invariants; called by forward and by anything that persists
    // the model.
    void validate() const {
        if (layers.empty()) throw value_error("model has no layers");
        const Layer* last_param = nullptr;
        for (const Layer& l : layers) {
            if (l.parameterized()) last_param = &l;
            if (l.gate) {
                const std::size_t want = l.gate_count_for(l.gate->mode);
                if (l.gate->weights->size() != want)
                    throw shape_error("layer '" + l.name + "': gate bank holds " +
                                      std::to_string(l.gate->weights->size()) + " weights, needs " +
                                      std::to_string(want));
            }
        }
        if (!last_param) throw value_error("model has no parameterized layer");
        if (last_param->gate && last_param->gate->mode != GateMode::weight)
            throw value_error("layer '" + last_param->name +
                              "': an output gate on the final parameterized layer would gate the "
                              "model outputs themselves; only weight gates may appear here");
    }

private:
    static Tensor apply_output_gate(const Layer& l, Tensor x, Tape* tape) {
        if (!l.gate) return x;
        switch (l.gate->mode) {
            case GateMode::weight: return x;  // already applied to the weights
            case GateMode::channel:
                return mul_channels(x, gate_tensor(*l.gate->weights, l.gate->spec, tape), tape);
            case GateMode::block:
                return mul(x, gate_tensor(*l.gate->weights, l.gate->spec, tape), tape);
        }
        throw value_error("unknown gate mode");
    }

    static Tensor apply_activation(Activation act, Tensor x, Tape* tape) {
        switch (act) {
            case Activation::none: return x;
            case Activation::relu: return relu(x, tape);
            case Activation::sine: return sin(x, tape);
        }
        throw value_error("unknown activation");
    }

    static Tensor flatten_op(const Tensor& x, Tape* tape) { return flatten(x, tape); }
};

// Masks of every gated layer, in layer order.
struct LayerMask {
    std::string layer;
    GateMode mode;
    std::vector<bool> mask;
};

inline std::vector<LayerMask> active_masks(const GatedModel& model) {
    std::vector<LayerMask> out;
    for (const Layer& l : model.layers)
        if (l.gate) out.push_back({l.name, l.gate->mode, l.gate->mask()});
    return out;
}

// Fills task parameters with fan-in scaled values and gate weights with small
// positive values, so every gate starts open with room to move either way.
inline void init_model(GatedModel& model, RandomStream& rng, Real gate_lo = 0.01,
                       Real gate_hi = 0.1) {
    for (Layer& l : model.layers) {
        if (!l.parameterized()) continue;
        std::size_t fan_in = 0, fan_out = 0;
        if (l.kind == Layer::Kind::dense) {
            fan_in = l.weight->dim(0);
            fan_out = l.weight->dim(1);
        } else {
            fan_in = l.weight->dim(1) * l.weight->dim(2) * l.weight->dim(3);
            fan_out = l.weight->dim(0) * l.weight->dim(2) * l.weight->dim(3);
        }
        const Real limit = std::sqrt(Real(6) / static_cast<Real>(fan_in + fan_out));
        for (std::size_t i = 0; i < l.weight->size(); ++i)
            (*l.weight)[i] = rng.uniform(-limit, limit);
        if (l.bias)
            for (std::size_t i = 0; i < l.bias->size(); ++i) (*l.bias)[i] = 0;
    }
    for (const std::shared_ptr<Tensor>& g : model.gate_params())
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] = rng.uniform(gate_lo, gate_hi);
}

}  // namespace tgl
