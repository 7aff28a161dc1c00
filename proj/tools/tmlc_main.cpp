// Command-line driver for the label-correction lab: meta-training, frozen
// meta-testing, reference baselines, ablations, transfer grids, gradient
// certification, data generation, and log aggregation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tmlc/gradsuite.hpp"
#include "tmlc/harness.hpp"

namespace {

using namespace tmlc;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonArgs {
    std::string config_path;
    std::string out_override;
    std::int64_t seed_override = -1;
    std::string mode_override;
    std::string supervision_override;
    bool lookahead = false;
    int jobs = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "JSON experiment config");
    if (needs_config) opt->required();
    cmd->add_option("--seed", args.seed_override, "override the config's seed list");
    cmd->add_option("--out", args.out_override, "override the output directory");
    cmd->add_option("--mode", args.mode_override, "feature mode: standard|agnostic");
    cmd->add_option("--meta-supervision", args.supervision_override,
                    "meta target: softened_noisy|clean_meta");
    cmd->add_flag("--lookahead", args.lookahead, "outer update through a virtual inner step");
    cmd->add_option("--jobs", args.jobs, "concurrent grid cells");
}

ExperimentConfig load_config(const CommonArgs& args) {
    ExperimentConfig cfg = ExperimentConfig::from_file(args.config_path);
    if (args.seed_override >= 0)
        cfg.seeds = {static_cast<std::uint64_t>(args.seed_override)};
    if (!args.out_override.empty()) cfg.output_dir = args.out_override;
    if (!args.mode_override.empty()) cfg.meta.mode = feature_mode_from(args.mode_override);
    if (!args.supervision_override.empty())
        cfg.meta.supervision = meta_supervision_from(args.supervision_override);
    if (args.lookahead) cfg.meta.lookahead = true;
    return cfg;
}

void print_report(const MetricsReport& report, const std::string& label) {
    MeanStd acc = report.aggregate(
        [](const SeedMetrics& m) { return std::optional(m.accuracy); });
    MeanStd corrected = report.aggregate(
        [](const SeedMetrics& m) { return std::optional(m.corrected_label_accuracy); });
    std::printf("%s: test accuracy %.4f +/- %.4f (n=%zu), corrected-label accuracy %.4f\n",
                label.c_str(), acc.mean, acc.stddev, acc.count, corrected.mean);
}

int cmd_meta_train(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    cfg.method.kind = MethodKind::tmlc;
    print_report(run_experiment(cfg), cfg.name);
    return kExitOk;
}

int cmd_meta_test(const CommonArgs& args, const std::string& snapshot_dir) {
    ExperimentConfig cfg = load_config(args);
    namespace fs = std::filesystem;
    SnapshotSet snaps;
    std::vector<fs::path> files;
    if (!fs::exists(snapshot_dir))
        throw ConfigError("meta-test: snapshot directory not found: " + snapshot_dir);
    for (const auto& entry : fs::directory_iterator(snapshot_dir))
        if (entry.path().filename().string().rfind("snapshot_", 0) == 0)
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& p : files)
        snaps.entries.push_back({0, snapshot_load(p.string())});
    for (auto& e : snaps.entries) e.epoch_tag = e.params.epoch_tag;
    std::sort(snaps.entries.begin(), snaps.entries.end(),
              [](const auto& a, const auto& b) { return a.epoch_tag < b.epoch_tag; });
    snaps.validate();

    MetricsReport report;
    for (std::uint64_t master : cfg.seeds) {
        SeedRun run = run_meta_test_seed(cfg, snaps, master);
        write_seed_artifacts(cfg.output_dir + "/" + cfg.name + "/seed" +
                                 std::to_string(master),
                             cfg, master, run);
        report.per_seed.push_back(run.metrics);
    }
    print_report(report, cfg.name + " (meta-test)");
    return kExitOk;
}

int cmd_baseline(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    if (cfg.method.is_tmlc())
        throw ConfigError("baseline: method.kind must be a reference method, got " +
                          to_string(cfg.method.kind));
    print_report(run_experiment(cfg), cfg.name + " (" + to_string(cfg.method.kind) + ")");
    return kExitOk;
}

int cmd_ablate(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    if (cfg.method.ablation() == Ablation::none)
        throw ConfigError("ablate: method.kind must be one of tmlc_wo_nnp, tmlc_wo_tse, "
                          "tmlc_wo_sd");
    print_report(run_experiment(cfg), cfg.name + " (" + to_string(cfg.method.kind) + ")");
    return kExitOk;
}

int cmd_transfer(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    GridResult grid = run_transfer_grid(cfg, args.jobs);
    std::printf("%s", grid.to_csv().c_str());
    for (const GridCell& cell : grid.cells)
        if (cell.skipped)
            std::printf("skipped %s -> %s: %s\n", cell.source.c_str(), cell.target.c_str(),
                        cell.reason.c_str());
    return kExitOk;
}

int cmd_gradcheck() {
    GradSuiteResult suite = run_gradcheck_suite(20);
    for (const GradCheckCase& c : suite.cases)
        std::printf("%-32s max rel err %.3e\n", c.name.c_str(), c.max_rel_err);
    std::printf("overall max rel err %.3e\n", suite.max_rel_err);
    return suite.max_rel_err <= 1e-4 ? kExitOk : kExitRuntime;
}

int cmd_gen_data(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    namespace fs = std::filesystem;
    const std::string dir = cfg.output_dir + "/" + cfg.name;
    fs::create_directories(dir);
    for (std::uint64_t master : cfg.seeds) {
        Task task = build_task(cfg.dataset, cfg.noise, cfg.meta.query_fraction, master);
        export_jsonl(task.train, dir + "/train_seed" + std::to_string(master) + ".jsonl");
        export_jsonl(task.test, dir + "/test_seed" + std::to_string(master) + ".jsonl");
        std::printf("seed %llu: %zu train samples (noisy-label accuracy %.4f), %zu test\n",
                    static_cast<unsigned long long>(master), task.train.size(),
                    task.train.noisy_label_accuracy(), task.test.size());
    }
    return kExitOk;
}

int cmd_report(const std::string& dir) {
    std::vector<ReportRow> rows = aggregate_report(dir);
    const std::string csv = report_to_csv(rows);
    std::ofstream(dir + "/report.csv") << csv;
    std::printf("%s", report_to_text(rows).c_str());
    std::printf("wrote %s/report.csv\n", dir.c_str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"transferable meta label correction lab"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string snapshot_dir, report_dir;

    auto* train = app.add_subcommand("meta-train", "train the corrector alongside a model");
    add_common(train, args);
    auto* test = app.add_subcommand("meta-test", "apply frozen snapshots to a new task");
    add_common(test, args);
    test->add_option("--snapshots", snapshot_dir, "directory of snapshot_*.json files")
        ->required();
    auto* baseline = app.add_subcommand("baseline", "run a reference method");
    add_common(baseline, args);
    auto* ablate = app.add_subcommand("ablate", "run a component-ablated corrector");
    add_common(ablate, args);
    auto* transfer = app.add_subcommand("transfer", "meta-train sources, test on targets");
    add_common(transfer, args);
    app.add_subcommand("gradcheck", "finite-difference certification of all gradients");
    auto* gen = app.add_subcommand("gen-data", "generate datasets as JSON lines");
    add_common(gen, args);
    auto* report = app.add_subcommand("report", "aggregate run logs into a summary table");
    report->add_option("--dir", report_dir, "directory of runs")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (app.got_subcommand("meta-train")) return cmd_meta_train(args);
        if (app.got_subcommand("meta-test")) return cmd_meta_test(args, snapshot_dir);
        if (app.got_subcommand("baseline")) return cmd_baseline(args);
        if (app.got_subcommand("ablate")) return cmd_ablate(args);
        if (app.got_subcommand("transfer")) return cmd_transfer(args);
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck();
        if (app.got_subcommand("gen-data")) return cmd_gen_data(args);
        if (app.got_subcommand("report")) return cmd_report(report_dir);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitConfig;
}
