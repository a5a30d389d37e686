#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tgl/tgl.hpp"

namespace {

// Sample shape for a checkpoint: the stored one unless overridden.
tgl::Shape resolve_sample(const tgl::LoadedCheckpoint& ckpt,
                          const std::vector<std::size_t>& override_dims) {
    if (!override_dims.empty()) return tgl::Shape(override_dims.begin(), override_dims.end());
    if (ckpt.meta.contains("sample_shape"))
        return ckpt.meta.at("sample_shape").get<tgl::Shape>();
    throw tgl::config_error(
        "checkpoint records no sample shape; pass --sample (e.g. --sample 1 28 28)");
}

void print_cost_tables(const tgl::GatedModel& model, const tgl::Shape& sample) {
    for (tgl::CostKind kind :
         {tgl::CostKind::flops, tgl::CostKind::params, tgl::CostKind::channels}) {
        const tgl::CostReport r = tgl::make_cost_report(model, kind, sample);
        if (r.dense_total == 0) continue;  // kind does not apply (no such gates)
        std::fputs(tgl::cost_report_text(r).c_str(), stdout);
    }
}

int cmd_prune(const std::string& ckpt_path, const std::string& emit_path,
              const std::vector<std::size_t>& sample_dims) {
    tgl::LoadedCheckpoint ckpt = tgl::load_checkpoint(ckpt_path);
    const tgl::Shape sample = resolve_sample(ckpt, sample_dims);
    tgl::GatedModel pruned = tgl::hard_prune(ckpt.model, sample);

    nlohmann::json meta = ckpt.meta;
    meta["pruned_from"] = ckpt_path;
    tgl::save_checkpoint(emit_path, pruned, meta);

    const tgl::Real before = tgl::static_cost(ckpt.model, tgl::CostKind::flops, sample);
    const tgl::Real masked = tgl::masked_cost(ckpt.model, tgl::CostKind::flops, sample);
    const tgl::Real after = tgl::static_cost(pruned, tgl::CostKind::flops, sample);
    std::printf("flops: %.17g gated-static, %.17g masked, %.17g pruned-static\n",
                static_cast<double>(before), static_cast<double>(masked),
                static_cast<double>(after));
    std::printf("wrote %s\n", emit_path.c_str());
    return 0;
}

int cmd_report(const std::string& ckpt_path, const std::vector<std::size_t>& sample_dims) {
    tgl::LoadedCheckpoint ckpt = tgl::load_checkpoint(ckpt_path);
    const tgl::Shape sample = resolve_sample(ckpt, sample_dims);
    print_cost_tables(ckpt.model, sample);
    std::fputs(tgl::gate_dump(ckpt.model).c_str(), stdout);
    return 0;
}

int cmd_oracle(const std::string& config_path) {
    const tgl::ExperimentConfig cfg = tgl::load_config(config_path);
    if (cfg.dataset.source != tgl::DataSource::synthetic_planted)
        throw tgl::config_error("the oracle needs a planted-features dataset");
    const tgl::ExperimentData data = tgl::make_experiment_data(cfg);

    const tgl::OracleResult best = tgl::brute_force_select(
        data.train.inputs, data.train.targets, cfg.dataset.relevant);
    std::printf("planted support:");
    for (std::size_t j : data.planted.support) std::printf(" %zu", j);
    std::printf("\nbest subset:");
    for (std::size_t j : best.best_subset) std::printf(" %zu", j);
    std::printf("\nbest loss: %.17g over %zu subsets\n", static_cast<double>(best.best_loss),
                best.subsets_tried);
    return 0;
}

int cmd_synth(const std::string& out_dir, std::size_t train_n, std::size_t test_n,
              std::size_t side, std::size_t classes, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const tgl::Dataset train = tgl::make_blob_dataset(train_n, tgl::derive_seed(seed, 11),
                                                      side, classes);
    const tgl::Dataset test = tgl::make_blob_dataset(test_n, tgl::derive_seed(seed, 12),
                                                     side, classes);
    tgl::write_idx_images((fs::path(out_dir) / "train-images.idx").string(), train.inputs);
    tgl::write_idx_labels((fs::path(out_dir) / "train-labels.idx").string(), train.labels);
    tgl::write_idx_images((fs::path(out_dir) / "test-images.idx").string(), test.inputs);
    tgl::write_idx_labels((fs::path(out_dir) / "test-labels.idx").string(), test.labels);
    std::printf("wrote %zu train and %zu test samples under %s\n", train_n, test_n,
                out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trainable gate layers: train, prune, and inspect gated networks"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, emit_path, out_dir;
    std::vector<std::size_t> sample_dims;
    std::size_t train_n = 1024, test_n = 512, side = 28, classes = 10;
    std::uint64_t seed = 1;

    CLI::App* run = app.add_subcommand("run", "Run an experiment described by a JSON config");
    run->add_option("config", config_path, "experiment config file")->required();

    CLI::App* prune =
        app.add_subcommand("prune", "Hard-prune a checkpoint into a structurally smaller one");
    prune->add_option("checkpoint", ckpt_path, "trained checkpoint")->required();
    prune->add_option("--emit", emit_path, "path for the pruned checkpoint")->required();
    prune->add_option("--sample", sample_dims, "sample shape override, e.g. --sample 1 28 28");

    CLI::App* report = app.add_subcommand("report", "Print cost tables and gate states");
    report->add_option("checkpoint", ckpt_path, "checkpoint to inspect")->required();
    report->add_option("--sample", sample_dims, "sample shape override");

    CLI::App* oracle = app.add_subcommand(
        "oracle", "Exhaustive feature-selection baseline for a planted-features config");
    oracle->add_option("config", config_path, "experiment config file")->required();

    CLI::App* synth = app.add_subcommand("synth", "Write the synthetic blob dataset as IDX files");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--train", train_n, "training sample count");
    synth->add_option("--test", test_n, "test sample count");
    synth->add_option("--side", side, "image side length");
    synth->add_option("--classes", classes, "number of classes");
    synth->add_option("--seed", seed, "generation seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return tgl::run_experiment_files(config_path);
        if (prune->parsed()) return cmd_prune(ckpt_path, emit_path, sample_dims);
        if (report->parsed()) return cmd_report(ckpt_path, sample_dims);
        if (oracle->parsed()) return cmd_oracle(config_path);
        if (synth->parsed()) return cmd_synth(out_dir, train_n, test_n, side, classes, seed);
    } catch (const tgl::config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const tgl::parse_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const tgl::divergence_error& e) {
        std::fprintf(stderr, "diverged: %s\n", e.what());
        return 3;
    } catch (const tgl::error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
