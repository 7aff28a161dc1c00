#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tmlc/config.hpp"
#include "tmlc/idx_io.hpp"
#include "tmlc/metrics.hpp"

namespace tmlc {

// ---------------------------------------------------------------------------
// task construction
// ---------------------------------------------------------------------------

struct Task {
    NoisyDataset train;
    NoisyDataset test;
    DataSplit split;
};

inline NoisyDataset build_dataset(const DatasetConfig& d, std::uint64_t seed, bool test_set) {
    if (d.kind == "blobs")
        return gen_blobs(d.classes, test_set ? d.test_per_class : d.per_class, d.dim, d.spread,
                         seed);
    if (d.kind == "moons")
        return gen_two_moons(test_set ? d.test_n : d.n, d.noise_std, seed);
    if (d.kind == "rings") return gen_rings(test_set ? d.test_n : d.n, seed);
    if (d.kind == "idx")
        return test_set ? load_idx(d.test_images, d.test_labels) : load_idx(d.images, d.labels);
    throw ConfigError("dataset: unknown kind \"" + d.kind + "\"");
}

inline Task build_task(const DatasetConfig& d, const NoiseConfig& n, double query_fraction,
                       std::uint64_t master) {
    Task task;
    task.train = build_dataset(d, derive_seed(master, SeedRole::dataset), false);
    task.test = build_dataset(d, derive_seed(master, SeedRole::test_set), true);
    if (n.kind != NoiseKind::none && n.rate > 0.0)
        task.train = inject_noise(task.train, n.to_spec(derive_seed(master, SeedRole::noise)));
    else
        task.train.noise = n.to_spec(derive_seed(master, SeedRole::noise));
    task.split = split_support_query(task.train, query_fraction,
                                     derive_seed(master, SeedRole::split));
    return task;
}

inline BaseModelState build_model(const ModelConfig& m, std::size_t input_dim,
                                  std::size_t num_classes, std::uint64_t master) {
    std::vector<std::size_t> sizes{input_dim};
    sizes.insert(sizes.end(), m.hidden_layers.begin(), m.hidden_layers.end());
    sizes.push_back(num_classes);
    return mlp_init(sizes, derive_seed(master, SeedRole::model_init));
}

inline MetaConfig seeded_meta(MetaConfig mc, std::uint64_t master) {
    mc.shuffle_seed = derive_seed(master, SeedRole::shuffle);
    mc.corrector_seed = derive_seed(master, SeedRole::corrector);
    mc.query_seed = derive_seed(master, SeedRole::query);
    return mc;
}

// ---------------------------------------------------------------------------
// per-seed runs
// ---------------------------------------------------------------------------

struct SeedRun {
    TrainResult result;
    SeedMetrics metrics;
};

inline SeedMetrics metrics_of(const TrainResult& r, const NoisyDataset& test,
                              int num_classes) {
    SeedMetrics m;
    ForwardResult fr = forward_batch(r.model, test.features);
    std::vector<int> preds;
    preds.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i)
        preds.push_back(static_cast<int>(argmax_row(fr.probs.row(i))));
    m.accuracy = accuracy(preds, test.true_labels);
    m.macro_f1 = macro_f1(preds, test.true_labels, num_classes);

    if (!r.final_labels.corrected.empty()) {
        CorrectionMetrics cm = correction_metrics(r.final_labels.corrected,
                                                  r.final_labels.noisy, r.final_labels.truth);
        m.corrected_label_accuracy = cm.corrected_label_accuracy;
        m.correction_precision = cm.precision;
        m.correction_recall = cm.recall;
    }
    for (auto it = r.log.rows.rbegin(); it != r.log.rows.rend(); ++it)
        if (it->kl_meta) {
            m.mean_kl = it->kl_meta;
            break;
        }
    m.seconds_per_epoch = r.seconds_per_epoch;
    return m;
}

inline Tensor forward_q_matrix(const ExperimentConfig& cfg, int num_classes) {
    if (cfg.method.q_source == "identity")
        return transition_matrix({.kind = NoiseKind::none}, num_classes);
    NoiseSpec spec = cfg.noise.to_spec(0);
    return transition_matrix(spec, num_classes);
}

// One method on one master seed. Baselines train on the support split so that
// paired comparisons against the meta loop differ only in target construction.
inline SeedRun run_method_seed(const ExperimentConfig& cfg, std::uint64_t master) {
    Task task = build_task(cfg.dataset, cfg.noise, cfg.meta.query_fraction, master);
    const int c = task.train.num_classes;
    BaseModelState model = build_model(cfg.model, task.train.dim(), c, master);

    SeedRun run;
    if (cfg.method.is_tmlc()) {
        MetaConfig mc = seeded_meta(cfg.meta, master);
        mc.ablation = cfg.method.ablation();
        run.result = meta_train(task.train, task.split, task.test, std::move(model),
                                cfg.model.optimizer, mc);
    } else {
        MethodSpec spec{.kind = cfg.method.kind,
                        .epsilon = cfg.method.epsilon,
                        .lambda = cfg.method.lambda};
        if (cfg.method.kind == MethodKind::forward_correction)
            spec.q = forward_q_matrix(cfg, c);
        run.result = run_baseline(task.train, task.split.support_indices, task.test,
                                  std::move(model), cfg.model.optimizer, spec,
                                  cfg.meta.epochs, cfg.meta.batch_size,
                                  derive_seed(master, SeedRole::shuffle));
    }
    run.metrics = metrics_of(run.result, task.test, c);
    return run;
}

// ---------------------------------------------------------------------------
// artifacts
// ---------------------------------------------------------------------------

inline void write_seed_artifacts(const std::string& dir, const ExperimentConfig& cfg,
                                 std::uint64_t master, const SeedRun& run) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    run.result.log.save(dir + "/log.csv");

    nlohmann::json meta;
    meta["method"] = cfg.method.to_json();
    meta["master_seed"] = master;
    meta["outer_updates"] = run.result.outer_updates;
    meta["warnings"] = run.result.warnings;
    if (cfg.method.kind == MethodKind::forward_correction)
        meta["note"] = "forward variant: prediction mapped through Q before the loss";
    nlohmann::json prints = nlohmann::json::array();
    for (const auto& e : run.result.snapshots.entries) prints.push_back(fingerprint(e.params));
    meta["snapshot_fingerprints"] = std::move(prints);
    std::ofstream(dir + "/meta.json") << meta.dump(2) << "\n";

    MetricsReport single;
    single.per_seed.push_back(run.metrics);
    nlohmann::json summary;
    summary["experiment_id"] = cfg.name + "-seed" + std::to_string(master);
    summary["config_hash"] = cfg.config_hash();
    summary["metrics"] = single.to_json();
    summary["wallclock_s"] = run.result.seconds_total;
    std::ofstream(dir + "/summary.json") << summary.dump(2) << "\n";

    for (const auto& e : run.result.snapshots.entries)
        snapshot_save(e.params, dir + "/snapshot_" + std::to_string(e.epoch_tag) + ".json");

    std::ofstream(dir + "/model.json") << model_to_json(run.result.model).dump(2) << "\n";
}

inline MetricsReport run_experiment(const ExperimentConfig& cfg, bool write_files = true) {
    MetricsReport report;
    double wall = 0.0;
    for (std::uint64_t master : cfg.seeds) {
        SeedRun run = run_method_seed(cfg, master);
        wall += run.result.seconds_total;
        if (write_files)
            write_seed_artifacts(cfg.output_dir + "/" + cfg.name + "/seed" +
                                     std::to_string(master),
                                 cfg, master, run);
        report.per_seed.push_back(run.metrics);
    }
    if (write_files) {
        nlohmann::json summary;
        summary["experiment_id"] = cfg.name;
        summary["config_hash"] = cfg.config_hash();
        summary["metrics"] = report.to_json();
        summary["wallclock_s"] = wall;
        std::filesystem::create_directories(cfg.output_dir + "/" + cfg.name);
        std::ofstream(cfg.output_dir + "/" + cfg.name + "/summary.json")
            << summary.dump(2) << "\n";
    }
    return report;
}

// CE trained on the full task (no support/query carve-out); the reference a
// frozen meta-test run is paired against, since that run also sees every
// training sample.
inline SeedRun run_ce_reference_seed(const ExperimentConfig& cfg, std::uint64_t master) {
    Task task = build_task(cfg.dataset, cfg.noise, cfg.meta.query_fraction, master);
    const int c = task.train.num_classes;
    BaseModelState model = build_model(cfg.model, task.train.dim(), c, master);
    std::vector<int> all(task.train.size());
    std::iota(all.begin(), all.end(), 0);
    SeedRun run;
    run.result = run_baseline(task.train, all, task.test, std::move(model),
                              cfg.model.optimizer, MethodSpec{.kind = MethodKind::ce},
                              cfg.test_epochs > 0 ? cfg.test_epochs : cfg.meta.epochs,
                              cfg.meta.batch_size, derive_seed(master, SeedRole::shuffle));
    run.metrics = metrics_of(run.result, task.test, c);
    return run;
}

// ---------------------------------------------------------------------------
// meta-test runs (single task pair)
// ---------------------------------------------------------------------------

inline SeedRun run_meta_test_seed(const ExperimentConfig& cfg, const SnapshotSet& snaps,
                                  std::uint64_t master) {
    Task task = build_task(cfg.dataset, cfg.noise, cfg.meta.query_fraction, master);
    const int c = task.train.num_classes;
    BaseModelState model = build_model(cfg.model, task.train.dim(), c, master);
    MetaTestOptions opts{.epochs = cfg.test_epochs > 0 ? cfg.test_epochs : cfg.meta.epochs,
                         .batch_size = cfg.meta.batch_size,
                         .shuffle_seed = derive_seed(master, SeedRole::shuffle)};
    SeedRun run;
    run.result = meta_test(task.train, task.test, std::move(model), cfg.model.optimizer,
                           snaps, opts);
    run.metrics = metrics_of(run.result, task.test, c);
    return run;
}

// ---------------------------------------------------------------------------
// transfer grid
// ---------------------------------------------------------------------------

struct GridCell {
    std::string source;
    std::string target;
    bool skipped = false;
    std::string reason;
    MetricsReport transfer;
    MetricsReport ce_reference;
};

struct GridResult {
    std::vector<GridCell> cells;

    std::string to_csv() const {
        std::string out =
            "source,target,skipped,reason,transfer_acc_mean,transfer_acc_std,"
            "ce_acc_mean,ce_acc_std,seeds\n";
        for (const GridCell& c : cells) {
            auto acc = [](const MetricsReport& r) {
                return r.aggregate(
                    [](const SeedMetrics& m) { return std::optional(m.accuracy); });
            };
            MeanStd t = acc(c.transfer), ce = acc(c.ce_reference);
            out += c.source + "," + c.target + "," + (c.skipped ? "1" : "0") + "," +
                   c.reason + "," + (c.skipped ? "" : format_double(t.mean)) + "," +
                   (c.skipped ? "" : format_double(t.stddev)) + "," +
                   format_double(ce.mean) + "," + format_double(ce.stddev) + "," +
                   std::to_string(ce.count) + "\n";
        }
        return out;
    }
};

namespace detail {

// Minimal fixed-size worker pool over an indexed job list.
inline void run_jobs(std::size_t count, int jobs,
                     const std::function<void(std::size_t)>& work) {
    if (jobs <= 1) {
        for (std::size_t i = 0; i < count; ++i) work(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int width = std::min<int>(jobs, static_cast<int>(count));
    std::mutex error_mutex;
    std::string first_error;
    for (int w = 0; w < width; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
                try {
                    work(i);
                } catch (const std::exception& e) {
                    std::lock_guard lock(error_mutex);
                    if (first_error.empty()) first_error = e.what();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (!first_error.empty()) throw Error(first_error);
}

} // namespace detail

// Meta-train once per source, frozen meta-test per (source, target) cell, a
// CE reference per target. Cells run concurrently up to `jobs`; each owns its
// RNGs and output directory, snapshots are shared read-only.
inline GridResult run_transfer_grid(const ExperimentConfig& cfg, int jobs = 1,
                                    bool write_files = true) {
    if (cfg.sources.empty() || cfg.targets.empty())
        throw ConfigError("transfer: config needs nonempty sources and targets");

    const std::string root = cfg.output_dir + "/" + cfg.name;

    // phase 1: meta-train each source on each seed
    std::vector<std::vector<SnapshotSet>> snapshots(
        cfg.sources.size(), std::vector<SnapshotSet>(cfg.seeds.size()));
    detail::run_jobs(cfg.sources.size() * cfg.seeds.size(), jobs, [&](std::size_t k) {
        const std::size_t si = k / cfg.seeds.size(), wi = k % cfg.seeds.size();
        ExperimentConfig source_cfg = cfg;
        source_cfg.dataset = cfg.sources[si].dataset;
        source_cfg.noise = cfg.sources[si].noise;
        source_cfg.method.kind = MethodKind::tmlc;
        source_cfg.name = cfg.name + "/src_" + cfg.sources[si].name;
        SeedRun run = run_method_seed(source_cfg, cfg.seeds[wi]);
        snapshots[si][wi] = run.result.snapshots;
        if (write_files)
            write_seed_artifacts(root + "/src_" + cfg.sources[si].name + "/seed" +
                                     std::to_string(cfg.seeds[wi]),
                                 source_cfg, cfg.seeds[wi], run);
    });

    // phase 2: CE reference per target, trained on the full target task
    std::vector<MetricsReport> ce_ref(cfg.targets.size());
    detail::run_jobs(cfg.targets.size(), jobs, [&](std::size_t ti) {
        ExperimentConfig target_cfg = cfg;
        target_cfg.dataset = cfg.targets[ti].dataset;
        target_cfg.noise = cfg.targets[ti].noise;
        target_cfg.method.kind = MethodKind::ce;
        for (std::uint64_t master : cfg.seeds) {
            SeedRun run = run_ce_reference_seed(target_cfg, master);
            if (write_files)
                write_seed_artifacts(root + "/ce_" + cfg.targets[ti].name + "/seed" +
                                         std::to_string(master),
                                     target_cfg, master, run);
            ce_ref[ti].per_seed.push_back(run.metrics);
        }
    });

    // phase 3: transfer cells
    GridResult grid;
    grid.cells.resize(cfg.sources.size() * cfg.targets.size());
    detail::run_jobs(grid.cells.size(), jobs, [&](std::size_t k) {
        const std::size_t si = k / cfg.targets.size(), ti = k % cfg.targets.size();
        GridCell& cell = grid.cells[k];
        cell.source = cfg.sources[si].name;
        cell.target = cfg.targets[ti].name;
        cell.ce_reference = ce_ref[ti];
        ExperimentConfig target_cfg = cfg;
        target_cfg.dataset = cfg.targets[ti].dataset;
        target_cfg.noise = cfg.targets[ti].noise;
        try {
            for (std::size_t wi = 0; wi < cfg.seeds.size(); ++wi) {
                SeedRun run =
                    run_meta_test_seed(target_cfg, snapshots[si][wi], cfg.seeds[wi]);
                if (write_files)
                    write_seed_artifacts(root + "/cell_" + cell.source + "__" + cell.target +
                                             "/seed" + std::to_string(cfg.seeds[wi]),
                                         target_cfg, cfg.seeds[wi], run);
                cell.transfer.per_seed.push_back(run.metrics);
            }
        } catch (const FormatError& e) {
            cell.skipped = true;
            cell.reason = e.what();
        }
    });

    if (write_files) {
        std::filesystem::create_directories(root);
        std::ofstream(root + "/grid.csv") << grid.to_csv();
    }
    return grid;
}

// ---------------------------------------------------------------------------
// report aggregation over run logs
// ---------------------------------------------------------------------------

struct ReportRow {
    std::string run;
    MeanStd loss_base, acc_train_true, acc_test, corrected;
    std::size_t num_seeds = 0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace detail

// Group runs by their directory with the seed component stripped; aggregate
// each group's final-epoch metrics. Deterministic: paths are sorted.
inline std::vector<ReportRow> aggregate_report(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir)) throw ConfigError("report: directory not found: " + dir);

    std::vector<fs::path> logs;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() == "log.csv")
            logs.push_back(entry.path());
    std::sort(logs.begin(), logs.end());

    std::map<std::string, std::vector<std::vector<std::string>>> groups;
    for (const fs::path& p : logs) {
        std::ifstream in(p);
        std::string line, last;
        std::getline(in, line); // header
        while (std::getline(in, line))
            if (!line.empty()) last = line;
        if (last.empty()) continue;
        std::string key = fs::relative(p.parent_path(), dir).string();
        const std::size_t seed_pos = key.rfind("seed");
        if (seed_pos != std::string::npos && seed_pos > 0)
            key = key.substr(0, seed_pos - 1);
        groups[key].push_back(detail::split_csv_line(last));
    }

    std::vector<ReportRow> rows;
    for (const auto& [key, finals] : groups) {
        ReportRow row;
        row.run = key;
        row.num_seeds = finals.size();
        std::vector<double> loss, true_acc, test_acc, corr;
        for (const auto& f : finals) {
            // columns: epoch,split,loss_base,loss_meta,acc_train_noisy,
            //          acc_train_true,acc_test,corrected_label_acc,kl_meta
            loss.push_back(std::stod(f.at(2)));
            true_acc.push_back(std::stod(f.at(5)));
            test_acc.push_back(std::stod(f.at(6)));
            if (!f.at(7).empty()) corr.push_back(std::stod(f.at(7)));
        }
        row.loss_base = mean_std(loss);
        row.acc_train_true = mean_std(true_acc);
        row.acc_test = mean_std(test_acc);
        row.corrected = mean_std(corr);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string report_to_csv(const std::vector<ReportRow>& rows) {
    std::string out =
        "run,seeds,loss_base_mean,loss_base_std,acc_train_true_mean,acc_train_true_std,"
        "acc_test_mean,acc_test_std,corrected_label_acc_mean,corrected_label_acc_std\n";
    for (const ReportRow& r : rows)
        out += r.run + "," + std::to_string(r.num_seeds) + "," +
               format_double(r.loss_base.mean) + "," + format_double(r.loss_base.stddev) +
               "," + format_double(r.acc_train_true.mean) + "," +
               format_double(r.acc_train_true.stddev) + "," +
               format_double(r.acc_test.mean) + "," + format_double(r.acc_test.stddev) + "," +
               format_double(r.corrected.mean) + "," + format_double(r.corrected.stddev) +
               "\n";
    return out;
}

inline std::string report_to_text(const std::vector<ReportRow>& rows) {
    std::ostringstream out;
    out << "run" << std::string(42, ' ') << "seeds  acc_test (mean+/-std)   corrected\n";
    for (const ReportRow& r : rows) {
        std::string name = r.run;
        if (name.size() < 45) name += std::string(45 - name.size(), ' ');
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%5zu  %.4f +/- %.4f      %.4f\n", r.num_seeds,
                      r.acc_test.mean, r.acc_test.stddev, r.corrected.mean);
        out << name << buf;
    }
    return out.str();
}

} // namespace tmlc
