#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tgl/budget.hpp"
#include "tgl/checkpoint.hpp"
#include "tgl/config.hpp"
#include "tgl/data.hpp"
#include "tgl/errors.hpp"
#include "tgl/gradcheck.hpp"
#include "tgl/idx.hpp"
#include "tgl/layers.hpp"
#include "tgl/prune.hpp"
#include "tgl/trainer.hpp"

namespace tgl {

// Executes a validated experiment config end to end: dataset synthesis or
// ingestion, model construction and seeding, one or two training phases, and
// evaluation. Pure in-memory work lives in run_experiment so tests can call
// it directly; artifact emission sits on top.

struct ExperimentData {
    Dataset train, test;
    PlantedProblem planted;  // populated for synthetic_planted only
};

inline ExperimentData make_experiment_data(const ExperimentConfig& cfg) {
    const DatasetSpec& d = cfg.dataset;
    ExperimentData out;
    switch (d.source) {
        case DataSource::synthetic_sine:
            out.train = make_sine_dataset(d.train_n, d.frequency, derive_seed(cfg.seed, 11));
            out.test = make_sine_dataset(d.test_n, d.frequency, derive_seed(cfg.seed, 12));
            break;
        case DataSource::synthetic_planted: {
            // one generation so train and test share the hidden support
            out.planted =
                make_planted_dataset(d.train_n + d.test_n, d.features, d.relevant, d.noise,
                                     derive_seed(cfg.seed, 11));
            std::vector<std::size_t> idx(d.train_n);
            std::iota(idx.begin(), idx.end(), 0);
            out.train = take_subset(out.planted.data, idx);
            idx.resize(d.test_n);
            std::iota(idx.begin(), idx.end(), d.train_n);
            out.test = take_subset(out.planted.data, idx);
            break;
        }
        case DataSource::synthetic_blobs:
            out.train = make_blob_dataset(d.train_n, derive_seed(cfg.seed, 11), d.side,
                                          d.classes);
            out.test = make_blob_dataset(d.test_n, derive_seed(cfg.seed, 12), d.side,
                                         d.classes);
            break;
        case DataSource::idx_files: {
            auto read_pair = [](const std::string& imgs, const std::string& labels) {
                Dataset ds;
                ds.inputs = read_idx_images(imgs);
                ds.labels = read_idx_labels(labels);
                if (ds.labels.size() != ds.inputs.dim(0))
                    throw parse_error(labels + ": " + std::to_string(ds.labels.size()) +
                                      " labels for " + std::to_string(ds.inputs.dim(0)) +
                                      " images in " + imgs);
                return ds;
            };
            out.train = read_pair(d.images, d.labels);
            out.test = read_pair(d.test_images, d.test_labels);
            break;
        }
    }
    return out;
}

struct ExperimentResult {
    ExperimentConfig cfg;
    GatedModel model;
    TrainResult pretrain;  // filled when pretrain_iterations > 0
    TrainResult train;
    Real eval_metric = std::numeric_limits<Real>::quiet_NaN();  // test MSE or accuracy
    Real final_cost_ratio = std::numeric_limits<Real>::quiet_NaN();
    std::size_t open_gates = 0, total_gates = 0;
    GradcheckReport gradcheck;  // gradcheck_suite only
    ExperimentData data;
    // exact values of every non-gate parameter when the pretraining phase
    // ended, for bit-level frozen-weight checks
    std::vector<std::vector<Real>> theta_after_pretrain;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentResult r;
    r.cfg = cfg;

    if (cfg.kind == ExperimentKind::gradcheck_suite) {
        r.gradcheck = run_gradcheck_suite(cfg.seed);
        r.eval_metric = r.gradcheck.worst;
        return r;
    }

    r.data = make_experiment_data(cfg);
    const Shape sample = r.data.train.sample_shape();
    const TaskKind task =
        cfg.dataset.classification() ? TaskKind::classification : TaskKind::regression;

    r.model = build_model(cfg);
    RandomStream init_rng(derive_seed(cfg.seed, 21));
    init_model(r.model, init_rng, cfg.gate_init_lo, cfg.gate_init_hi);

    if (cfg.pretrain_iterations > 0) {
        // weights first, gates parked open and silent (no budget pressure)
        TrainConfig pre = cfg.train;
        pre.iterations = cfg.pretrain_iterations;
        pre.train_task_params = true;
        pre.train_gate_params = false;
        pre.seed = derive_seed(cfg.seed, 31);
        BudgetSpec free = cfg.budget;
        free.lambda = 0;
        Trainer t(r.model, task, free, pre, sample);
        r.pretrain = t.fit(r.data.train, &r.data.test);
        for (const std::shared_ptr<Tensor>& p : r.model.params())
            r.theta_after_pretrain.push_back(p->vec());
    }

    TrainConfig main = cfg.train;
    main.train_task_params = !cfg.selection_only;
    main.train_gate_params = true;
    main.seed = derive_seed(cfg.seed, 32);
    Trainer t(r.model, task, cfg.budget, main, sample);
    r.train = t.fit(r.data.train, &r.data.test);

    r.eval_metric = task == TaskKind::regression ? evaluate_mse(r.model, r.data.test)
                                                 : evaluate_accuracy(r.model, r.data.test);
    if (r.model.gated_layer_count() > 0)
        r.final_cost_ratio = cost_ratio(r.model, cfg.budget.kind, sample);
    for (const std::shared_ptr<Tensor>& g : r.model.gate_params()) {
        r.open_gates += open_count(*g);
        r.total_gates += g->size();
    }
    return r;
}

namespace detail {

// Exclusive ownership of an output directory while a run writes into it.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / "lock") {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw config_error(path_.string() +
                               ": output directory is locked by another run (remove the lock "
                               "file if that run is gone)");
    }
    ~DirectoryLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            std::filesystem::remove(path_);
        }
    }
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::filesystem::path path_;
    int fd_ = -1;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc | std::ios::binary);
    if (!out) throw error(p.string() + ": cannot open for writing");
    out << text;
    if (!out) throw error(p.string() + ": write failed");
}

inline std::string format_real(Real v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
    return buf;
}

}  // namespace detail

// Root directory that experiment outputs land under: the TGL_OUTPUT_ROOT
// environment variable when set, the working directory otherwise.
inline std::filesystem::path output_root() {
    const char* env = std::getenv("TGL_OUTPUT_ROOT");
    return env && *env ? std::filesystem::path(env) : std::filesystem::current_path();
}

// Gate dump: per-layer weights and the hard decisions they encode. The mask
// column is step_gate of the weight column by construction.
inline std::string gate_dump(const GatedModel& model) {
    std::string out;
    for (const Layer& l : model.layers) {
        if (!l.gate) continue;
        const Tensor& w = *l.gate->weights;
        const std::vector<bool> mask = l.gate->mask();
        out += "layer " + l.name + " mode " + to_string(l.gate->mode) + " open " +
               std::to_string(open_count(w)) + "/" + std::to_string(w.size()) + "\n";
        for (std::size_t i = 0; i < w.size(); ++i)
            out += "  " + std::to_string(i) + " w " + detail::format_real(w[i]) + " mask " +
                   (mask[i] ? "1" : "0") + "\n";
    }
    return out.empty() ? "no gated layers\n" : out;
}

inline std::string cost_report_text(const CostReport& r) {
    std::string out = "cost kind: " + std::string(to_string(r.kind)) + "\n";
    for (const CostRow& row : r.rows)
        out += "  " + row.layer + ": dense " + detail::format_real(row.dense_cost) +
               ", masked " + detail::format_real(row.masked) + "\n";
    out += "total: dense " + detail::format_real(r.dense_total) + ", masked " +
           detail::format_real(r.masked_total) + ", ratio " + detail::format_real(r.ratio) +
           "\n";
    return out;
}

inline std::string cost_report_csv(const CostReport& r) {
    std::string out = "layer,dense_cost,masked_cost\n";
    for (const CostRow& row : r.rows)
        out += row.layer + "," + detail::format_real(row.dense_cost) + "," +
               detail::format_real(row.masked) + "\n";
    out += "total," + detail::format_real(r.dense_total) + "," +
           detail::format_real(r.masked_total) + "\n";
    return out;
}

// Plot data: one bar per gate weight (the selection picture), and the
// cost-ratio trajectory over iterations.
inline std::string plot_gates_csv(const GatedModel& model) {
    std::string out = "layer,gate,weight,open\n";
    for (const Layer& l : model.layers) {
        if (!l.gate) continue;
        const Tensor& w = *l.gate->weights;
        for (std::size_t i = 0; i < w.size(); ++i)
            out += l.name + "," + std::to_string(i) + "," + detail::format_real(w[i]) + "," +
                   (step_gate(w[i]) > 0 ? "1" : "0") + "\n";
    }
    return out;
}

inline std::string plot_cost_csv(const std::vector<MetricsRow>& history) {
    std::string out = "iteration,cost_ratio\n";
    for (const MetricsRow& r : history)
        out += std::to_string(r.iteration) + "," + detail::format_real(r.cost_ratio) + "\n";
    return out;
}

// Writes the artifact set for a finished run into `dir`.
inline void write_artifacts(const ExperimentResult& r, const std::filesystem::path& dir) {
    nlohmann::json meta = {{"experiment", to_string(r.cfg.kind)},
                           {"seed", r.cfg.seed},
                           {"eval_metric", r.eval_metric},
                           {"cost_ratio", r.final_cost_ratio},
                           {"open_gates", r.open_gates},
                           {"total_gates", r.total_gates}};
    if (r.cfg.kind != ExperimentKind::gradcheck_suite)
        meta["sample_shape"] = r.data.train.sample_shape();

    if (r.cfg.kind == ExperimentKind::gradcheck_suite) {
        detail::write_text(dir / "gradcheck.csv", gradcheck_csv(r.gradcheck));
        detail::write_text(dir / "metrics.csv", metrics_csv({}));
        std::string summary = std::string("gradcheck ") +
                              (r.gradcheck.pass() ? "PASS" : "FAIL") + " worst " +
                              detail::format_real(r.gradcheck.worst) + " tolerance " +
                              detail::format_real(r.gradcheck.tolerance) + "\n";
        detail::write_text(dir / "gradcheck.txt", summary);
        return;
    }

    detail::write_text(dir / "metrics.csv", metrics_csv(r.train.history));
    if (!r.pretrain.history.empty())
        detail::write_text(dir / "pretrain_metrics.csv", metrics_csv(r.pretrain.history));
    detail::write_text(dir / "gates.txt", gate_dump(r.model));

    const Shape sample = r.data.train.sample_shape();
    const CostReport report = make_cost_report(r.model, r.cfg.budget.kind, sample);
    detail::write_text(dir / "cost_report.txt", cost_report_text(report));
    detail::write_text(dir / "cost_report.csv", cost_report_csv(report));

    detail::write_text(dir / "plot_gates.csv", plot_gates_csv(r.model));
    detail::write_text(dir / "plot_cost.csv", plot_cost_csv(r.train.history));
    save_checkpoint((dir / "checkpoint.json").string(), r.model, meta);
}

// Full CLI-facing path: load, validate, run, write. Returns a process exit
// code: 0 success, 2 config problems (no artifacts are written), 3
// divergence.
inline int run_experiment_files(const std::string& config_path, std::string* out_dir = nullptr) {
    try {
        ExperimentConfig cfg;
        try {
            cfg = load_config(config_path);
        } catch (const parse_error& e) {
            throw config_error(e.what());
        }

        const std::filesystem::path dir = output_root() / cfg.output_dir;
        std::filesystem::create_directories(dir);
        detail::DirectoryLock lock(dir);

        ExperimentResult r;
        try {
            r = run_experiment(cfg);
        } catch (const parse_error& e) {  // dataset files went bad after validation
            throw config_error(e.what());
        }
        write_artifacts(r, dir);
        if (out_dir) *out_dir = dir.string();
        std::fprintf(stderr, "wrote %s\n", dir.string().c_str());
        return 0;
    } catch (const config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const divergence_error& e) {
        std::fprintf(stderr, "diverged: %s\n", e.what());
        return 3;
    }
}

}  // namespace tgl
