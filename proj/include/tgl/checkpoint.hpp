#pragma once

#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "tgl/budget.hpp"
#include "tgl/errors.hpp"
#include "tgl/gates.hpp"
#include "tgl/layers.hpp"

namespace tgl {

// Self-describing JSON snapshot of a gated model. Layers appear in order;
// a shared gate bank stores its weights on the first layer that uses it and
// later members point back at that layer by name. Doubles serialize with
// shortest round-trip formatting, so save/load is value-exact.

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
    nlohmann::json j;
    j["shape"] = t.shape();
    j["data"] = t.vec();
    return j;
}

inline Tensor tensor_from_json(const nlohmann::json& j, const std::string& what) {
    try {
        Shape shape = j.at("shape").get<Shape>();
        std::vector<Real> data = j.at("data").get<std::vector<Real>>();
        return Tensor(std::move(shape), std::move(data));
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(what + ": " + e.what());
    } catch (const shape_error& e) {
        throw parse_error(what + ": " + e.what());
    }
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const GatedModel& model,
                                         const nlohmann::json& meta = nlohmann::json::object()) {
    model.validate();
    nlohmann::json j;
    j["format"] = "tgl-checkpoint";
    j["version"] = 1;
    j["meta"] = meta;

    std::map<const TrainableGateLayer*, std::string> bank_owner;
    nlohmann::json layers = nlohmann::json::array();
    for (const Layer& l : model.layers) {
        nlohmann::json lj;
        lj["name"] = l.name;
        lj["act"] = to_string(l.act);
        switch (l.kind) {
            case Layer::Kind::flatten: lj["kind"] = "flatten"; break;
            case Layer::Kind::dense:
                lj["kind"] = "dense";
                lj["weight"] = detail::tensor_to_json(*l.weight);
                if (l.bias) lj["bias"] = detail::tensor_to_json(*l.bias);
                break;
            case Layer::Kind::conv:
                lj["kind"] = "conv";
                lj["stride"] = l.stride;
                lj["padding"] = l.padding == Padding::same ? "same" : "valid";
                lj["weight"] = detail::tensor_to_json(*l.weight);
                if (l.bias) lj["bias"] = detail::tensor_to_json(*l.bias);
                break;
        }
        if (l.gate) {
            nlohmann::json gj;
            gj["mode"] = to_string(l.gate->mode);
            gj["granularity"] = l.gate->spec.granularity;
            gj["shape"] = to_string(l.gate->spec.shape);
            auto it = bank_owner.find(l.gate.get());
            if (it == bank_owner.end()) {
                gj["weights"] = detail::tensor_to_json(*l.gate->weights);
                bank_owner.emplace(l.gate.get(), l.name);
            } else {
                gj["share_with"] = it->second;
            }
            lj["gate"] = gj;
        }
        layers.push_back(lj);
    }
    j["layers"] = layers;
    return j;
}

struct LoadedCheckpoint {
    GatedModel model;
    nlohmann::json meta;
};

inline LoadedCheckpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "tgl-checkpoint")
            throw parse_error("checkpoint: unrecognized format field");
        if (j.at("version").get<int>() != 1)
            throw parse_error("checkpoint: unsupported version " + j.at("version").dump());

        LoadedCheckpoint out;
        out.meta = j.value("meta", nlohmann::json::object());
        std::map<std::string, std::shared_ptr<TrainableGateLayer>> banks;

        for (const nlohmann::json& lj : j.at("layers")) {
            const std::string kind = lj.at("kind").get<std::string>();
            const std::string name = lj.at("name").get<std::string>();
            Layer l;
            if (kind == "flatten") {
                l = Layer::flatten(name);
            } else if (kind == "dense" || kind == "conv") {
                l.kind = kind == "dense" ? Layer::Kind::dense : Layer::Kind::conv;
                l.name = name;
                l.weight = std::make_shared<Tensor>(
                    detail::tensor_from_json(lj.at("weight"), "layer '" + name + "' weight"));
                if (lj.contains("bias"))
                    l.bias = std::make_shared<Tensor>(
                        detail::tensor_from_json(lj.at("bias"), "layer '" + name + "' bias"));
                if (kind == "conv") {
                    l.stride = lj.at("stride").get<std::size_t>();
                    const std::string pad = lj.at("padding").get<std::string>();
                    if (pad != "same" && pad != "valid")
                        throw parse_error("layer '" + name + "': unknown padding '" + pad + "'");
                    l.padding = pad == "same" ? Padding::same : Padding::valid;
                    if (l.weight->rank() != 4)
                        throw parse_error("layer '" + name + "': conv weight must be rank 4");
                } else if (l.weight->rank() != 2) {
                    throw parse_error("layer '" + name + "': dense weight must be rank 2");
                }
            } else {
                throw parse_error("layer '" + name + "': unknown kind '" + kind + "'");
            }
            l.act = activation_from_string(lj.value("act", "none"));

            if (lj.contains("gate")) {
                const nlohmann::json& gj = lj.at("gate");
                if (gj.contains("share_with")) {
                    const std::string leader = gj.at("share_with").get<std::string>();
                    auto it = banks.find(leader);
                    if (it == banks.end())
                        throw parse_error("layer '" + name + "': shares gates with '" + leader +
                                          "', which holds no bank");
                    l.gate = it->second;
                } else {
                    auto g = std::make_shared<TrainableGateLayer>();
                    g->mode = gate_mode_from_string(gj.at("mode").get<std::string>());
                    g->spec.granularity = gj.at("granularity").get<Real>();
                    g->spec.shape = gate_shape_from_string(gj.at("shape").get<std::string>());
                    g->spec.validate();
                    g->weights = std::make_shared<Tensor>(detail::tensor_from_json(
                        gj.at("weights"), "layer '" + name + "' gate weights"));
                    l.gate = g;
                    banks.emplace(name, g);
                }
            }
            out.model.layers.push_back(std::move(l));
        }
        out.model.validate();
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("checkpoint: ") + e.what());
    } catch (const value_error& e) {
        throw parse_error(std::string("checkpoint: ") + e.what());
    } catch (const shape_error& e) {
        throw parse_error(std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const std::string& path, const GatedModel& model,
                            const nlohmann::json& meta = nlohmann::json::object()) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw parse_error(path + ": cannot open for writing");
    out << checkpoint_to_json(model, meta).dump(2) << "\n";
    if (!out) throw parse_error(path + ": write failed");
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw parse_error(path + ": cannot open");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(path + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace tgl
