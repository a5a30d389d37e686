#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tgl/budget.hpp"
#include "tgl/errors.hpp"
#include "tgl/gates.hpp"
#include "tgl/idx.hpp"
#include "tgl/layers.hpp"
#include "tgl/trainer.hpp"

namespace tgl {

// Declarative experiment description, read from JSON. Each experiment kind
// ships a complete default recipe; a config file names the experiment and
// overrides whatever it wants (RFC 7386 merge semantics: objects merge by
// key, arrays and scalars replace, null deletes). Everything is validated --
// including layer shape chaining against the dataset -- before a run touches
// the filesystem.

enum class ExperimentKind { sine_selection, planted_features, cnn_budget, gradcheck_suite };

inline const char* to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::sine_selection: return "sine_selection";
        case ExperimentKind::planted_features: return "planted_features";
        case ExperimentKind::cnn_budget: return "cnn_budget";
        case ExperimentKind::gradcheck_suite: return "gradcheck_suite";
    }
    throw value_error("unknown experiment kind");
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
    if (s == "sine_selection") return ExperimentKind::sine_selection;
    if (s == "planted_features") return ExperimentKind::planted_features;
    if (s == "cnn_budget") return ExperimentKind::cnn_budget;
    if (s == "gradcheck_suite") return ExperimentKind::gradcheck_suite;
    throw config_error("unknown experiment '" + s +
                       "' (expected sine_selection, planted_features, cnn_budget, or "
                       "gradcheck_suite)");
}

enum class DataSource { synthetic_sine, synthetic_planted, synthetic_blobs, idx_files };

inline const char* to_string(DataSource s) {
    switch (s) {
        case DataSource::synthetic_sine: return "synthetic_sine";
        case DataSource::synthetic_planted: return "synthetic_planted";
        case DataSource::synthetic_blobs: return "synthetic_blobs";
        case DataSource::idx_files: return "idx_files";
    }
    throw value_error("unknown data source");
}

inline DataSource data_source_from_string(const std::string& s) {
    if (s == "synthetic_sine") return DataSource::synthetic_sine;
    if (s == "synthetic_planted") return DataSource::synthetic_planted;
    if (s == "synthetic_blobs") return DataSource::synthetic_blobs;
    if (s == "idx_files") return DataSource::idx_files;
    throw config_error("unknown dataset source '" + s + "'");
}

struct DatasetSpec {
    DataSource source = DataSource::synthetic_sine;
    std::size_t train_n = 256;
    std::size_t test_n = 256;
    Real frequency = 1.0;      // synthetic_sine
    std::size_t features = 10;  // synthetic_planted
    std::size_t relevant = 3;
    Real noise = 0.01;
    std::size_t side = 28;  // synthetic_blobs
    std::size_t classes = 10;
    std::string images, labels, test_images, test_labels;  // idx_files

    // Shape of one input sample, as the model will see it.
    Shape sample_shape() const {
        switch (source) {
            case DataSource::synthetic_sine: return {1};
            case DataSource::synthetic_planted: return {features};
            case DataSource::synthetic_blobs: return {1, side, side};
            case DataSource::idx_files: return {};  // known only after reading the files
        }
        throw value_error("unknown data source");
    }

    bool classification() const {
        return source == DataSource::synthetic_blobs || source == DataSource::idx_files;
    }

    void validate() const {
        if (source != DataSource::idx_files && train_n == 0)
            throw config_error("dataset: train size must be positive");
        if (source == DataSource::synthetic_sine && !(frequency > 0))
            throw config_error("dataset: sine frequency must be positive");
        if (source == DataSource::synthetic_planted) {
            if (relevant < 1 || relevant > features || features > 12)
                throw config_error("dataset: need 1 <= relevant <= features <= 12");
            if (noise < 0) throw config_error("dataset: noise must be >= 0");
        }
        if (source == DataSource::synthetic_blobs && (side < 4 || classes < 2 || classes > 10))
            throw config_error("dataset: blobs need side >= 4 and 2..10 classes");
        if (source == DataSource::idx_files) {
            for (const std::string& p : {images, labels, test_images, test_labels}) {
                if (p.empty())
                    throw config_error(
                        "dataset: idx_files needs images, labels, test_images, test_labels");
                if (!std::filesystem::exists(p))
                    throw config_error("dataset: file '" + p + "' does not exist");
            }
        }
    }
};

struct LayerSpec {
    std::string kind;  // dense | conv | flatten
    std::string name;
    std::size_t in = 0, out = 0;
    std::size_t kernel = 0, stride = 1;
    Padding padding = Padding::same;
    bool bias = true;
    Activation act = Activation::none;
    bool gated = false;
    GateMode gate_mode = GateMode::channel;
    std::string share_with;  // reuse this earlier layer's gate bank
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::sine_selection;
    std::string output_dir = "run";
    std::uint64_t seed = 1;
    DatasetSpec dataset;
    std::vector<LayerSpec> layers;
    GateSpec gates;
    Real gate_init_lo = 0.01, gate_init_hi = 0.1;
    TrainConfig train;
    bool selection_only = false;
    std::size_t pretrain_iterations = 0;
    BudgetSpec budget;

    void validate() const;
};

// Builds the (uninitialized) network a config describes. Shared banks attach
// in declaration order, so a share_with target must come earlier.
inline GatedModel build_model(const ExperimentConfig& cfg) {
    GatedModel m;
    for (const LayerSpec& ls : cfg.layers) {
        if (ls.kind == "flatten") {
            m.layers.push_back(Layer::flatten(ls.name));
        } else if (ls.kind == "dense") {
            m.layers.push_back(Layer::dense(ls.name, ls.in, ls.out, ls.bias, ls.act));
        } else if (ls.kind == "conv") {
            m.layers.push_back(Layer::conv(ls.name, ls.in, ls.out, ls.kernel, ls.stride,
                                           ls.padding, ls.bias, ls.act));
        } else {
            throw config_error("layer '" + ls.name + "': unknown kind '" + ls.kind + "'");
        }
    }
    for (const LayerSpec& ls : cfg.layers) {
        if (!ls.gated) continue;
        try {
            if (ls.share_with.empty())
                m.attach_gate(ls.name, ls.gate_mode, cfg.gates);
            else
                m.share_gates(ls.share_with, ls.name);
        } catch (const error& e) {
            throw config_error(e.what());
        }
    }
    try {
        m.validate();
    } catch (const error& e) {
        throw config_error(e.what());
    }
    return m;
}

inline void ExperimentConfig::validate() const {
    const bool trains = kind != ExperimentKind::gradcheck_suite;
    try {
        dataset.validate();
        gates.validate();
        if (trains) train.validate();
        budget.validate();
    } catch (const config_error&) {
        throw;
    } catch (const error& e) {
        throw config_error(e.what());
    }
    if (output_dir.empty()) throw config_error("output_dir must not be empty");
    if (trains && train.optimizer != "adam" && train.optimizer != "sgd")
        throw config_error("unknown optimizer '" + train.optimizer + "' (adam or sgd)");
    if (!(gate_init_lo <= gate_init_hi))
        throw config_error("gate init range is inverted");
    if (dataset.source != DataSource::idx_files && train.batch_size > dataset.train_n)
        throw config_error("batch size " + std::to_string(train.batch_size) +
                           " exceeds the training set (" + std::to_string(dataset.train_n) + ")");
    if (selection_only && pretrain_iterations == 0)
        throw config_error("selection_only needs pretrain_iterations > 0: gate selection is "
                           "meaningless on random frozen weights");

    if (kind == ExperimentKind::gradcheck_suite) {
        if (!layers.empty())
            throw config_error("gradcheck_suite builds its own models; remove the layer list");
        return;
    }
    if (layers.empty()) throw config_error("model needs at least one layer");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].name.empty()) throw config_error("every layer needs a name");
        for (std::size_t j = 0; j < i; ++j)
            if (layers[j].name == layers[i].name)
                throw config_error("duplicate layer name '" + layers[i].name + "'");
    }

    GatedModel m = build_model(*this);  // structural rules, bank sizes, share targets

    // chain the sample shape through the architecture
    Shape s = dataset.sample_shape();
    if (s.empty()) {
        // idx_files: the header holds the dimensions
        try {
            const Shape imgs = peek_idx_image_shape(dataset.images);
            s = {imgs[1], imgs[2], imgs[3]};
        } catch (const parse_error& e) {
            throw config_error(e.what());
        }
    }
    for (const Layer& l : m.layers) {
        try {
            switch (l.kind) {
                case Layer::Kind::flatten: {
                    if (s.size() < 2)
                        throw config_error("layer '" + l.name + "': nothing to flatten in " +
                                           shape_str(s));
                    s = {numel(s)};
                    break;
                }
                case Layer::Kind::dense: {
                    if (s.size() != 1 || s[0] != l.weight->dim(0))
                        throw config_error("layer '" + l.name + "' expects " +
                                           std::to_string(l.weight->dim(0)) +
                                           " inputs but receives " + shape_str(s));
                    s = {l.weight->dim(1)};
                    break;
                }
                case Layer::Kind::conv: {
                    if (s.size() != 3 || s[0] != l.weight->dim(1))
                        throw config_error("layer '" + l.name + "' expects " +
                                           std::to_string(l.weight->dim(1)) +
                                           " channels but receives " + shape_str(s));
                    const detail::ConvDims d = detail::conv2d_dims(
                        {1, s[0], s[1], s[2]}, l.weight->shape(), l.stride, l.padding);
                    s = {d.cout, d.hout, d.wout};
                    break;
                }
            }
        } catch (const config_error&) {
            throw;
        } catch (const error& e) {
            throw config_error("layer '" + l.name + "': " + e.what());
        }
    }
    const std::size_t want_out = dataset.classification() ? dataset.classes : 1;
    if (s.size() != 1 || s[0] != want_out)
        throw config_error("model ends in " + shape_str(s) + " but the task needs [" +
                           std::to_string(want_out) + "]");
}

namespace detail {

inline nlohmann::json base_config_json() {
    return nlohmann::json{
        {"config", "tgl-experiment"},
        {"version", 1},
        {"output_dir", "run"},
        {"seed", 1},
        {"gates", {{"granularity", 100000.0}, {"shape", "constant_one"}, {"init_lo", 0.01},
                   {"init_hi", 0.1}}},
        {"train",
         {{"iterations", 5000},
          {"batch_size", 0},
          {"lr", 1e-4},
          {"optimizer", "adam"},
          {"momentum", 0.9},
          {"clip_norm", 0.0},
          {"halve_lr_every", 0},
          {"record_every", 50},
          {"selection_only", false},
          {"pretrain_iterations", 0}}},
        {"budget", {{"kind", "flops"}, {"rho", 0.5}, {"lambda", 0.1}}},
    };
}

}  // namespace detail

// The built-in recipe for an experiment kind, as a complete config document.
inline nlohmann::json default_config(ExperimentKind kind) {
    using nlohmann::json;
    json j = detail::base_config_json();
    j["experiment"] = to_string(kind);
    switch (kind) {
        case ExperimentKind::sine_selection:
            j["output_dir"] = "sine_selection";
            j["dataset"] = {{"source", "synthetic_sine"}, {"train", 256}, {"test", 256},
                            {"frequency", 1.0}};
            j["model"] = {{"layers",
                           json::array({{{"kind", "dense"}, {"name", "hidden"}, {"in", 1},
                                         {"out", 20}, {"bias", true}, {"act", "sine"},
                                         {"gate", {{"mode", "channel"}}}},
                                        {{"kind", "dense"}, {"name", "head"}, {"in", 20},
                                         {"out", 1}, {"bias", true}}})}};
            j["budget"] = {{"kind", "channels"}, {"rho", 0.05}, {"lambda", 20.0}};
            j["train"]["lr"] = 1e-3;
            j["train"]["iterations"] = 5000;
            j["train"]["pretrain_iterations"] = 1000;
            break;
        case ExperimentKind::planted_features:
            j["output_dir"] = "planted_features";
            j["dataset"] = {{"source", "synthetic_planted"}, {"train", 512}, {"test", 256},
                            {"features", 10}, {"relevant", 3}, {"noise", 0.01}};
            j["model"] = {{"layers", json::array({{{"kind", "dense"}, {"name", "select"},
                                                  {"in", 10}, {"out", 1}, {"bias", false},
                                                  {"gate", {{"mode", "weight"}}}}})}};
            j["budget"] = {{"kind", "params"}, {"rho", 0.3}, {"lambda", 0.1}};
            j["train"]["lr"] = 1e-2;
            j["train"]["iterations"] = 3000;
            j["train"]["pretrain_iterations"] = 500;
            break;
        case ExperimentKind::cnn_budget:
            j["output_dir"] = "cnn_budget";
            j["dataset"] = {{"source", "synthetic_blobs"}, {"train", 1024}, {"test", 512}};
            j["model"] = {{"layers",
                           json::array({{{"kind", "conv"}, {"name", "c1"}, {"in", 1}, {"out", 8},
                                         {"kernel", 3}, {"stride", 2}, {"padding", "same"},
                                         {"bias", true}, {"act", "relu"},
                                         {"gate", {{"mode", "channel"}}}},
                                        {{"kind", "conv"}, {"name", "c2"}, {"in", 8}, {"out", 16},
                                         {"kernel", 3}, {"stride", 2}, {"padding", "same"},
                                         {"bias", true}, {"act", "relu"},
                                         {"gate", {{"mode", "channel"}}}},
                                        {{"kind", "conv"}, {"name", "c3"}, {"in", 16}, {"out", 32},
                                         {"kernel", 3}, {"stride", 2}, {"padding", "same"},
                                         {"bias", true}, {"act", "relu"},
                                         {"gate", {{"mode", "channel"}}}},
                                        {{"kind", "flatten"}, {"name", "flat"}},
                                        {{"kind", "dense"}, {"name", "head"}, {"in", 512},
                                         {"out", 10}, {"bias", true}}})}};
            j["budget"] = {{"kind", "flops"}, {"rho", 0.5}, {"lambda", 1.0}};
            j["train"]["lr"] = 1e-3;
            j["train"]["iterations"] = 1500;
            j["train"]["batch_size"] = 64;
            break;
        case ExperimentKind::gradcheck_suite:
            j["output_dir"] = "gradcheck";
            j["dataset"] = {{"source", "synthetic_sine"}, {"train", 8}, {"test", 8},
                            {"frequency", 1.0}};
            j["train"]["iterations"] = 0;
            break;
    }
    return j;
}

namespace detail {

template <typename T>
T field(const nlohmann::json& j, const char* key, const char* where) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string(where) + "." + key + ": " + e.what());
    }
}

}  // namespace detail

// Parses a complete config document into typed form and validates it.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    try {
        if (!j.is_object()) throw config_error("config: expected a JSON object");
        if (detail::field<std::string>(j, "config", "config") != "tgl-experiment")
            throw config_error("config: unrecognized 'config' field");
        if (detail::field<int>(j, "version", "config") != 1)
            throw config_error("config: unsupported version");

        ExperimentConfig c;
        c.kind = experiment_kind_from_string(
            detail::field<std::string>(j, "experiment", "config"));
        c.output_dir = detail::field<std::string>(j, "output_dir", "config");
        c.seed = detail::field<std::uint64_t>(j, "seed", "config");

        const nlohmann::json& dj = j.at("dataset");
        c.dataset.source =
            data_source_from_string(detail::field<std::string>(dj, "source", "dataset"));
        if (c.dataset.source == DataSource::idx_files) {
            c.dataset.images = detail::field<std::string>(dj, "images", "dataset");
            c.dataset.labels = detail::field<std::string>(dj, "labels", "dataset");
            c.dataset.test_images = detail::field<std::string>(dj, "test_images", "dataset");
            c.dataset.test_labels = detail::field<std::string>(dj, "test_labels", "dataset");
        } else {
            c.dataset.train_n = detail::field<std::size_t>(dj, "train", "dataset");
            c.dataset.test_n = detail::field<std::size_t>(dj, "test", "dataset");
        }
        if (c.dataset.source == DataSource::synthetic_sine)
            c.dataset.frequency = detail::field<Real>(dj, "frequency", "dataset");
        if (c.dataset.source == DataSource::synthetic_planted) {
            c.dataset.features = detail::field<std::size_t>(dj, "features", "dataset");
            c.dataset.relevant = detail::field<std::size_t>(dj, "relevant", "dataset");
            c.dataset.noise = detail::field<Real>(dj, "noise", "dataset");
        }
        if (c.dataset.source == DataSource::synthetic_blobs) {
            c.dataset.side = dj.value("side", std::size_t{28});
            c.dataset.classes = dj.value("classes", std::size_t{10});
        }

        const nlohmann::json& gj = j.at("gates");
        c.gates.granularity = detail::field<Real>(gj, "granularity", "gates");
        c.gates.shape = gate_shape_from_string(detail::field<std::string>(gj, "shape", "gates"));
        c.gate_init_lo = detail::field<Real>(gj, "init_lo", "gates");
        c.gate_init_hi = detail::field<Real>(gj, "init_hi", "gates");

        const nlohmann::json& tj = j.at("train");
        c.train.iterations = detail::field<std::size_t>(tj, "iterations", "train");
        c.train.batch_size = detail::field<std::size_t>(tj, "batch_size", "train");
        c.train.lr = detail::field<Real>(tj, "lr", "train");
        c.train.optimizer = detail::field<std::string>(tj, "optimizer", "train");
        c.train.momentum = detail::field<Real>(tj, "momentum", "train");
        c.train.clip_norm = detail::field<Real>(tj, "clip_norm", "train");
        c.train.halve_lr_every = detail::field<std::size_t>(tj, "halve_lr_every", "train");
        c.train.record_every = detail::field<std::size_t>(tj, "record_every", "train");
        c.train.seed = c.seed;
        c.selection_only = detail::field<bool>(tj, "selection_only", "train");
        c.pretrain_iterations = detail::field<std::size_t>(tj, "pretrain_iterations", "train");

        const nlohmann::json& bj = j.at("budget");
        c.budget.kind = cost_kind_from_string(detail::field<std::string>(bj, "kind", "budget"));
        c.budget.rho = detail::field<Real>(bj, "rho", "budget");
        c.budget.lambda = detail::field<Real>(bj, "lambda", "budget");

        if (j.contains("model") && !j.at("model").is_null()) {
            const nlohmann::json& mj = j.at("model");
            if (mj.contains("layers")) {
                for (const nlohmann::json& lj : mj.at("layers")) {
                    LayerSpec ls;
                    ls.kind = detail::field<std::string>(lj, "kind", "layer");
                    ls.name = detail::field<std::string>(lj, "name", "layer");
                    if (ls.kind != "flatten") {
                        ls.in = detail::field<std::size_t>(lj, "in", "layer");
                        ls.out = detail::field<std::size_t>(lj, "out", "layer");
                        ls.bias = lj.value("bias", true);
                        ls.act = activation_from_string(lj.value("act", "none"));
                    }
                    if (ls.kind == "conv") {
                        ls.kernel = detail::field<std::size_t>(lj, "kernel", "layer");
                        ls.stride = lj.value("stride", std::size_t{1});
                        const std::string pad = lj.value("padding", "same");
                        if (pad != "same" && pad != "valid")
                            throw config_error("layer '" + ls.name + "': unknown padding '" +
                                               pad + "'");
                        ls.padding = pad == "same" ? Padding::same : Padding::valid;
                    }
                    if (lj.contains("gate") && !lj.at("gate").is_null()) {
                        ls.gated = true;
                        const nlohmann::json& lg = lj.at("gate");
                        if (lg.contains("share_with"))
                            ls.share_with = lg.at("share_with").get<std::string>();
                        else
                            ls.gate_mode = gate_mode_from_string(
                                detail::field<std::string>(lg, "mode", "gate"));
                    }
                    c.layers.push_back(std::move(ls));
                }
            }
        }

        c.validate();
        return c;
    } catch (const config_error&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config: ") + e.what());
    } catch (const error& e) {
        throw config_error(e.what());
    }
}

// Reads a config file: the named experiment's recipe with the file's
// overrides merged on top.
inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error(path + ": cannot open");
    nlohmann::json user;
    try {
        in >> user;
    } catch (const nlohmann::json::exception& e) {
        throw config_error(path + ": " + e.what());
    }
    if (!user.is_object() || !user.contains("experiment"))
        throw config_error(path + ": config must name an 'experiment'");
    nlohmann::json full;
    try {
        full = default_config(
            experiment_kind_from_string(user.at("experiment").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        throw config_error(path + ": " + e.what());
    }
    full.merge_patch(user);
    return config_from_json(full);
}

}  // namespace tgl
