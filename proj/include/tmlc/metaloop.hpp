#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tmlc/basemodel.hpp"
#include "tmlc/corrector.hpp"
#include "tmlc/dataset.hpp"
#include "tmlc/dynamics.hpp"
#include "tmlc/errors.hpp"
#include "tmlc/runlog.hpp"

namespace tmlc {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

// What the meta loss is measured against on the query batch: the softened
// noisy label, or the true label where provenance makes one available.
enum class MetaSupervision { softened_noisy, clean_meta };

inline std::string to_string(MetaSupervision s) {
    return s == MetaSupervision::softened_noisy ? "softened_noisy" : "clean_meta";
}

inline MetaSupervision meta_supervision_from(const std::string& s) {
    if (s == "softened_noisy") return MetaSupervision::softened_noisy;
    if (s == "clean_meta") return MetaSupervision::clean_meta;
    throw ConfigError("unknown meta supervision: " + s);
}

struct MetaConfig {
    int epochs = 60;
    double outer_lr = 1e-3;
    double epsilon = 0.1; // label smoothing for targets
    int t_val = 1;        // outer update period, in epochs
    int warmup_epochs = 5;
    std::vector<double> snapshot_fractions{1.0 / 3.0, 2.0 / 3.0, 1.0};
    double query_fraction = 0.1;
    int batch_size = 64;
    int hidden_size = 64;
    FeatureMode mode = FeatureMode::standard;
    MetaSupervision supervision = MetaSupervision::softened_noisy;
    Ablation ablation = Ablation::none;
    bool lookahead = false;
    bool include_raw_features = false;
    std::size_t history_depth = 1;
    std::uint64_t shuffle_seed = 1;
    std::uint64_t corrector_seed = 2;
    std::uint64_t query_seed = 3;
    std::string dynamics_export_path; // empty: no export

    void validate() const {
        if (epochs < 1) throw ConfigError("meta: epochs must be >= 1");
        if (epsilon < 0.0 || epsilon > 1.0) throw ConfigError("meta: epsilon must be in [0,1]");
        if (t_val < 1) throw ConfigError("meta: t_val must be >= 1");
        if (warmup_epochs < 0 || warmup_epochs >= epochs)
            throw ConfigError("meta: warmup_epochs must be in [0, epochs)");
        if (snapshot_fractions.empty()) throw ConfigError("meta: no snapshot fractions");
        for (double f : snapshot_fractions)
            if (f <= 0.0 || f > 1.0)
                throw ConfigError("meta: snapshot fractions must be in (0,1]");
        if (query_fraction <= 0.0 || query_fraction >= 1.0)
            throw ConfigError("meta: query_fraction must be in (0,1)");
        if (batch_size < 1) throw ConfigError("meta: batch_size must be >= 1");
        if (hidden_size < 1) throw ConfigError("meta: hidden_size must be >= 1");
        if (outer_lr <= 0.0) throw ConfigError("meta: outer_lr must be > 0");
    }
};

// ---------------------------------------------------------------------------
// label softening
// ---------------------------------------------------------------------------

inline Tensor soften_label(int noisy, double epsilon, int num_classes) {
    if (noisy < 0 || noisy >= num_classes)
        throw ContractError("soften_label: label " + std::to_string(noisy) +
                            " out of range for C=" + std::to_string(num_classes));
    if (epsilon < 0.0 || epsilon > 1.0)
        throw ContractError("soften_label: epsilon must be in [0,1]");
    Tensor t({static_cast<std::size_t>(num_classes)});
    const double base = epsilon / num_classes;
    for (auto& v : t.data()) v = base;
    t[static_cast<std::size_t>(noisy)] += 1.0 - epsilon;
    return t;
}

inline Tensor soften_rows(const std::vector<int>& noisy, double epsilon, int num_classes) {
    Tensor t({noisy.size(), static_cast<std::size_t>(num_classes)});
    for (std::size_t i = 0; i < noisy.size(); ++i) {
        Tensor row = soften_label(noisy[i], epsilon, num_classes);
        for (int c = 0; c < num_classes; ++c) t.at(i, c) = row[c];
    }
    return t;
}

// Row-wise argmax to exact one-hots; ties go to the lowest class index.
inline Tensor harden_to_onehot(const Tensor& dist) {
    Tensor out({dist.rows(), dist.cols()});
    for (std::size_t r = 0; r < dist.rows(); ++r) out.at(r, argmax_row(dist.row(r))) = 1.0;
    return out;
}

// ---------------------------------------------------------------------------
// snapshots
// ---------------------------------------------------------------------------

struct SnapshotEntry {
    int epoch_tag = 0;
    CorrectorParams params;
};

struct SnapshotSet {
    std::vector<SnapshotEntry> entries;

    void validate() const {
        if (entries.empty()) throw ContractError("snapshot set is empty");
        for (std::size_t k = 1; k < entries.size(); ++k)
            if (entries[k].epoch_tag <= entries[k - 1].epoch_tag)
                throw ContractError("snapshot epoch tags must strictly increase");
    }
};

// Epochs at which snapshots are captured: ceil(fraction * T), deduplicated.
inline std::vector<int> snapshot_epochs(const std::vector<double>& fractions, int epochs) {
    std::vector<int> out;
    for (double f : fractions) {
        int e = static_cast<int>(std::ceil(f * epochs));
        out.push_back(std::clamp(e, 1, epochs));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// shared loop helpers
// ---------------------------------------------------------------------------

inline std::vector<std::vector<int>> make_batches(std::vector<int> indices, int batch_size,
                                                  Rng& rng) {
    std::shuffle(indices.begin(), indices.end(), rng);
    std::vector<std::vector<int>> batches;
    for (std::size_t start = 0; start < indices.size();
         start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
        batches.emplace_back(indices.begin() + start, indices.begin() + end);
    }
    return batches;
}

inline std::vector<int> sample_batch(const std::vector<int>& pool, int batch_size, Rng& rng) {
    std::vector<int> copy = pool;
    std::shuffle(copy.begin(), copy.end(), rng);
    copy.resize(std::min<std::size_t>(copy.size(), static_cast<std::size_t>(batch_size)));
    return copy;
}

inline std::vector<int> labels_at(const std::vector<int>& labels, const std::vector<int>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
    return out;
}

struct DatasetEval {
    double acc_noisy = 0.0;
    double acc_true = 0.0;
};

inline DatasetEval eval_train_accuracy(const BaseModelState& m, const NoisyDataset& ds) {
    ForwardResult fr = forward_batch(m, ds.features);
    DatasetEval e;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int pred = static_cast<int>(argmax_row(fr.probs.row(i)));
        if (pred == ds.noisy_labels[i]) e.acc_noisy += 1.0;
        if (pred == ds.true_labels[i]) e.acc_true += 1.0;
    }
    e.acc_noisy /= static_cast<double>(ds.size());
    e.acc_true /= static_cast<double>(ds.size());
    return e;
}

inline double eval_test_accuracy(const BaseModelState& m, const NoisyDataset& ds) {
    ForwardResult fr = forward_batch(m, ds.features);
    double acc = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (static_cast<int>(argmax_row(fr.probs.row(i))) == ds.true_labels[i]) acc += 1.0;
    return acc / static_cast<double>(ds.size());
}

// argmax of the training targets actually used in the final epoch, alongside
// the sample's noisy and true labels; feeds the correction metrics.
struct LabelOutcome {
    std::vector<int> corrected;
    std::vector<int> noisy;
    std::vector<int> truth;
};

struct TrainResult {
    BaseModelState model;
    SnapshotSet snapshots; // empty for baselines and meta-test
    RunLog log;
    LabelOutcome final_labels;
    double seconds_total = 0.0;
    double seconds_per_epoch = 0.0;
    int outer_updates = 0;
    std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// meta-train
// ---------------------------------------------------------------------------

class MetaTrainer {
public:
    MetaTrainer(const NoisyDataset& train, const DataSplit& split, const NoisyDataset& test,
                BaseModelState model, const OptimizerConfig& inner_cfg, const MetaConfig& mc)
        : train_(train),
          split_(split),
          test_(test),
          model_(std::move(model)),
          mc_(mc),
          opt_inner_(inner_cfg),
          opt_outer_(OptimizerConfig{.kind = OptimizerConfig::Kind::adam,
                                     .learning_rate = mc.outer_lr}),
          phi_(corrector_init(mc.mode, mc.hidden_size, train.num_classes, mc.corrector_seed,
                              mc.ablation == Ablation::wo_sd ? Ablation::none : mc.ablation,
                              mc.include_raw_features)),
          store_(train.size(), static_cast<std::size_t>(mc.hidden_size),
                 static_cast<std::size_t>(train.num_classes), mc.history_depth),
          shuffle_rng_(make_rng(mc.shuffle_seed)),
          query_rng_(make_rng(mc.query_seed)) {
        mc_.validate();
        if (model_.num_classes() != static_cast<std::size_t>(train.num_classes))
            throw ConfigError("meta: model output width does not match dataset classes");
        if (!mc_.dynamics_export_path.empty())
            exporter_.emplace(mc_.dynamics_export_path);
        snap_epochs_ = snapshot_epochs(mc_.snapshot_fractions, mc_.epochs);
    }

    TrainResult run() {
        TrainResult result;
        const auto t_start = std::chrono::steady_clock::now();
        for (int t = 1; t <= mc_.epochs; ++t) {
            opt_inner_.begin_epoch(t);
            store_.set_epoch(t);
            EpochRow row = run_inner_epoch(t);
            if (t % mc_.t_val == 0) {
                outer_update(sample_batch(split_.query_indices, mc_.batch_size, query_rng_));
                row.loss_meta = last_loss_meta_;
                row.kl_meta = last_kl_mean_;
            }
            if (std::find(snap_epochs_.begin(), snap_epochs_.end(), t) != snap_epochs_.end()) {
                CorrectorParams snap = phi_;
                snap.epoch_tag = t;
                snapshots_.entries.push_back({t, std::move(snap)});
            }
            DatasetEval train_eval = eval_train_accuracy(model_, train_);
            row.acc_train_noisy = train_eval.acc_noisy;
            row.acc_train_true = train_eval.acc_true;
            row.acc_test = eval_test_accuracy(model_, test_);
            log_.rows.push_back(std::move(row));
        }
        const auto t_end = std::chrono::steady_clock::now();
        result.model = model_;
        result.snapshots = snapshots_;
        result.log = log_;
        result.final_labels = labels_;
        result.seconds_total = std::chrono::duration<double>(t_end - t_start).count();
        result.seconds_per_epoch = result.seconds_total / mc_.epochs;
        result.outer_updates = outer_updates_;
        result.warnings = warnings_;
        return result;
    }

    // One outer step on an explicit query batch; exposed so tests can drive
    // the meta objective directly.
    void outer_update(const std::vector<int>& query_batch) {
        if (query_batch.empty()) throw ContractError("outer update: empty query batch");
        if (mc_.lookahead && mc_.ablation == Ablation::wo_sd && !warned_lookahead_) {
            warnings_.push_back(
                "lookahead disabled: hard-label targets break the virtual-step path");
            warned_lookahead_ = true;
        }
        const bool lookahead =
            mc_.lookahead && mc_.ablation != Ablation::wo_sd;

        CorrectorNodes pn = corrector_param_nodes(phi_);
        NodePtr loss = lookahead
                           ? lookahead_meta_loss(phi_, pn, query_batch,
                                                 sample_batch(split_.support_indices,
                                                              mc_.batch_size, query_rng_))
                           : direct_meta_loss(phi_, pn, query_batch);
        backward(loss);
        std::vector<Tensor> grads;
        for (const NodePtr& leaf : pn.all(phi_.ff_stub)) grads.push_back(leaf->grad());
        opt_outer_.step(phi_.param_list(), grads);

        last_loss_meta_ = loss->value[0];
        last_kl_mean_ = loss->value[0] / static_cast<double>(query_batch.size());
        ++outer_updates_;
    }

    // The meta objective at given corrector parameters, as a graph over pn.
    // Query-side recurrent state advances as a side effect (matching what the
    // update itself does), so pure evaluations should pass advance=false.
    NodePtr direct_meta_loss(const CorrectorParams& phi, const CorrectorNodes& pn,
                             const std::vector<int>& query_batch, bool advance = true) {
        Tensor xq = gather_rows(train_.features, query_batch);
        std::vector<int> noisy_q = labels_at(train_.noisy_labels, query_batch);
        ForwardResult fwd = forward_batch(model_, xq);
        Tensor losses_q =
            per_sample_losses(fwd.probs, onehot_matrix(noisy_q, train_.num_classes));
        CorrectionGraph g = correct_batch_nodes(
            phi, pn, constant(fwd.probs), constant(losses_q), noisy_q, train_.num_classes,
            store_.gather_h(query_batch), store_.gather_c(query_batch),
            store_.gather_prev_probs(query_batch));
        if (advance) {
            store_.update_states(query_batch, g.h_new->value, g.c_new->value);
            store_.update_prev_probs(query_batch, fwd.probs);
        }
        return sum_all(kl_rows(meta_targets(query_batch), g.yhat));
    }

    // Meta loss evaluated after a virtual inner step: theta_hat depends on the
    // support batch's corrected labels, so the adjoint reaches phi both through
    // the query-side corrector and through the virtual step.
    NodePtr lookahead_meta_loss(const CorrectorParams& phi, const CorrectorNodes& pn,
                                const std::vector<int>& query_batch,
                                const std::vector<int>& support_batch, bool advance = true,
                                double alpha_override = -1.0) {
        const int c = train_.num_classes;
        const auto b = support_batch.size();
        Tensor xs = gather_rows(train_.features, support_batch);
        std::vector<int> noisy_s = labels_at(train_.noisy_labels, support_batch);

        // per-(sample,class) gradient basis at the current model parameters
        ModelGraph gs = forward_graph(model_, xs);
        NodePtr neglog = neg_log_clamped(gs.probs);
        std::vector<NodePtr> leaves;
        for (std::size_t l = 0; l < gs.weights.size(); ++l) {
            leaves.push_back(gs.weights[l]);
            leaves.push_back(gs.biases[l]);
        }
        std::vector<std::vector<Tensor>> basis(leaves.size());
        for (std::size_t i = 0; i < b; ++i)
            for (int cls = 0; cls < c; ++cls) {
                backward(scale(pick_entry(neglog, i * c + cls), 1.0 / static_cast<double>(b)));
                for (std::size_t k = 0; k < leaves.size(); ++k) {
                    basis[k].push_back(leaves[k]->grad());
                    leaves[k]->reset_grad();
                }
            }

        // corrected support labels as a function of phi
        CorrectionGraph g_s = correct_batch_nodes(
            phi, pn, constant(gs.probs->value),
            constant(per_sample_losses(gs.probs->value, onehot_matrix(noisy_s, c))), noisy_s,
            c, store_.gather_h(support_batch), store_.gather_c(support_batch),
            store_.gather_prev_probs(support_batch));

        // virtual plain-SGD step through those labels
        const double alpha = alpha_override >= 0.0 ? alpha_override : opt_inner_.current_lr();
        std::vector<NodePtr> w_hat, b_hat;
        auto model_params = model_.params();
        for (std::size_t k = 0; k < leaves.size(); ++k) {
            NodePtr stepped =
                virtual_sgd_step(*model_params[k], g_s.yhat, std::move(basis[k]), alpha);
            (k % 2 == 0 ? w_hat : b_hat).push_back(stepped);
        }

        // query pass at the virtual parameters
        Tensor xq = gather_rows(train_.features, query_batch);
        std::vector<int> noisy_q = labels_at(train_.noisy_labels, query_batch);
        auto [logits_q, probs_q] = mlp_forward_nodes(w_hat, b_hat, constant(xq));
        NodePtr losses_q = soft_ce_rows(probs_q, onehot_matrix(noisy_q, c));
        CorrectionGraph g_q = correct_batch_nodes(
            phi, pn, probs_q, losses_q, noisy_q, c, store_.gather_h(query_batch),
            store_.gather_c(query_batch), store_.gather_prev_probs(query_batch));
        if (advance) {
            store_.update_states(query_batch, g_q.h_new->value, g_q.c_new->value);
            store_.update_prev_probs(query_batch, probs_q->value);
        }
        return sum_all(kl_rows(meta_targets(query_batch), g_q.yhat));
    }

    const CorrectorParams& corrector() const { return phi_; }
    CorrectorParams& corrector_mutable() { return phi_; }
    const BaseModelState& model() const { return model_; }
    DynamicsStore& store() { return store_; }
    const DataSplit& split() const { return split_; }
    double last_meta_loss() const { return last_loss_meta_; }
    double last_mean_kl() const { return last_kl_mean_; }
    int outer_updates() const { return outer_updates_; }

private:
    Tensor meta_targets(const std::vector<int>& query_batch) const {
        if (mc_.supervision == MetaSupervision::clean_meta)
            return onehot_matrix(labels_at(train_.true_labels, query_batch),
                                 train_.num_classes);
        return soften_rows(labels_at(train_.noisy_labels, query_batch), mc_.epsilon,
                           train_.num_classes);
    }

    EpochRow run_inner_epoch(int t) {
        EpochRow row;
        row.epoch = t;
        double loss_sum = 0.0;
        std::size_t seen = 0, corrected_ok = 0;
        const int c = train_.num_classes;
        labels_.corrected.clear();
        labels_.noisy.clear();
        labels_.truth.clear();

        for (const auto& batch : make_batches(split_.support_indices, mc_.batch_size,
                                              shuffle_rng_)) {
            Tensor xb = gather_rows(train_.features, batch);
            std::vector<int> noisy_b = labels_at(train_.noisy_labels, batch);
            ModelGraph g = forward_graph(model_, xb);
            Tensor feat_losses =
                per_sample_losses(g.probs->value, onehot_matrix(noisy_b, c));
            Tensor yhat = correct_batch(g.probs->value, feat_losses, noisy_b, batch, store_,
                                        phi_);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const int pred = static_cast<int>(argmax_row(yhat.row(i)));
                const int truth = train_.true_labels[static_cast<std::size_t>(batch[i])];
                if (pred == truth) ++corrected_ok;
                labels_.corrected.push_back(pred);
                labels_.noisy.push_back(noisy_b[i]);
                labels_.truth.push_back(truth);
            }

            Tensor targets;
            if (t <= mc_.warmup_epochs) {
                targets = soften_rows(noisy_b, mc_.epsilon, c);
            } else if (mc_.ablation == Ablation::wo_sd) {
                targets = harden_to_onehot(yhat);
            } else {
                targets = yhat;
            }

            NodePtr loss = mean_all(soft_ce_rows(g.probs, targets));
            if (!std::isfinite(loss->value[0]))
                throw TrainingError("meta-train diverged at epoch " + std::to_string(t) +
                                    ", batch starting with sample " +
                                    std::to_string(batch.front()));
            backward(loss);
            std::vector<Tensor> grads;
            for (std::size_t l = 0; l < g.weights.size(); ++l) {
                grads.push_back(g.weights[l]->grad());
                grads.push_back(g.biases[l]->grad());
            }
            try {
                opt_inner_.step(model_.params(), grads);
            } catch (const TrainingError& e) {
                throw TrainingError(std::string(e.what()) + " (epoch " + std::to_string(t) +
                                    ")");
            }

            if (exporter_) {
                Tensor cnl = compute_cnl(feat_losses, noisy_b);
                Tensor gnl = compute_gnl(feat_losses);
                Tensor pe = compute_pe(g.probs->value);
                for (std::size_t i = 0; i < batch.size(); ++i)
                    exporter_->record(batch[i], t, cnl[i], gnl[i], pe[i], feat_losses[i],
                                      noisy_b[i],
                                      train_.true_labels[static_cast<std::size_t>(batch[i])]);
            }

            loss_sum += loss->value[0] * static_cast<double>(batch.size());
            seen += batch.size();
        }
        row.loss_base = loss_sum / static_cast<double>(seen);
        row.corrected_label_acc = static_cast<double>(corrected_ok) /
                                  static_cast<double>(seen);
        return row;
    }

    const NoisyDataset& train_;
    const DataSplit& split_;
    const NoisyDataset& test_;
    BaseModelState model_;
    MetaConfig mc_;
    Optimizer opt_inner_;
    Optimizer opt_outer_;
    CorrectorParams phi_;
    DynamicsStore store_;
    Rng shuffle_rng_;
    Rng query_rng_;
    RunLog log_;
    SnapshotSet snapshots_;
    LabelOutcome labels_;
    std::vector<int> snap_epochs_;
    std::vector<std::string> warnings_;
    std::optional<DynamicsExporter> exporter_;
    double last_loss_meta_ = 0.0;
    double last_kl_mean_ = 0.0;
    int outer_updates_ = 0;
    bool warned_lookahead_ = false;
};

inline TrainResult meta_train(const NoisyDataset& train, const DataSplit& split,
                              const NoisyDataset& test, BaseModelState model,
                              const OptimizerConfig& inner_cfg, const MetaConfig& mc) {
    MetaTrainer trainer(train, split, test, std::move(model), inner_cfg, mc);
    return trainer.run();
}

// ---------------------------------------------------------------------------
// meta-test
// ---------------------------------------------------------------------------

struct MetaTestOptions {
    int epochs = 60;
    int batch_size = 64;
    std::uint64_t shuffle_seed = 1;

    void validate() const {
        if (epochs < 1) throw ConfigError("meta-test: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("meta-test: batch_size must be >= 1");
    }
};

// Snapshot used during epoch t (1-based) when the run is partitioned into
// |S| contiguous, equal-as-possible ranges in ascending tag order.
inline std::size_t snapshot_index_for_epoch(int t, int epochs, std::size_t num_snapshots) {
    const auto idx = static_cast<std::size_t>(
        (static_cast<long long>(t) - 1) * static_cast<long long>(num_snapshots) / epochs);
    return std::min(idx, num_snapshots - 1);
}

// Algorithm: train a fresh model on the new task while the frozen snapshots
// replace every batch's labels with corrected distributions. No corrector
// parameter is touched; fingerprints are checked to prove it.
inline TrainResult meta_test(const NoisyDataset& train, const NoisyDataset& test,
                             BaseModelState model, const OptimizerConfig& opt_cfg,
                             const SnapshotSet& snaps, const MetaTestOptions& opts) {
    opts.validate();
    snaps.validate();
    const int c = train.num_classes;
    for (const SnapshotEntry& e : snaps.entries) check_snapshot_compatible(e.params, c);
    const auto& first = snaps.entries.front().params;
    for (const SnapshotEntry& e : snaps.entries)
        if (e.params.hidden_size != first.hidden_size || e.params.mode != first.mode ||
            e.params.feature_width != first.feature_width)
            throw FormatError("snapshot set mixes incompatible corrector layouts");

    std::vector<std::uint64_t> prints;
    for (const SnapshotEntry& e : snaps.entries) prints.push_back(fingerprint(e.params));

    if (model.num_classes() != static_cast<std::size_t>(c))
        throw ConfigError("meta-test: model output width does not match dataset classes");

    Optimizer opt(opt_cfg);
    DynamicsStore store(train.size(), static_cast<std::size_t>(first.hidden_size),
                        static_cast<std::size_t>(c));
    Rng shuffle_rng = make_rng(opts.shuffle_seed);
    std::vector<int> all_indices(train.size());
    std::iota(all_indices.begin(), all_indices.end(), 0);

    TrainResult result;
    const auto t_start = std::chrono::steady_clock::now();
    for (int t = 1; t <= opts.epochs; ++t) {
        opt.begin_epoch(t);
        store.set_epoch(t);
        const CorrectorParams& phi =
            snaps.entries[snapshot_index_for_epoch(t, opts.epochs, snaps.entries.size())]
                .params;

        EpochRow row;
        row.epoch = t;
        double loss_sum = 0.0;
        std::size_t seen = 0, corrected_ok = 0;
        result.final_labels = LabelOutcome{};
        for (const auto& batch : make_batches(all_indices, opts.batch_size, shuffle_rng)) {
            Tensor xb = gather_rows(train.features, batch);
            std::vector<int> noisy_b = labels_at(train.noisy_labels, batch);
            ModelGraph g = forward_graph(model, xb);
            Tensor feat_losses = per_sample_losses(g.probs->value, onehot_matrix(noisy_b, c));
            Tensor yhat =
                correct_batch(g.probs->value, feat_losses, noisy_b, batch, store, phi);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const int pred = static_cast<int>(argmax_row(yhat.row(i)));
                const int truth = train.true_labels[static_cast<std::size_t>(batch[i])];
                if (pred == truth) ++corrected_ok;
                result.final_labels.corrected.push_back(pred);
                result.final_labels.noisy.push_back(noisy_b[i]);
                result.final_labels.truth.push_back(truth);
            }

            NodePtr loss = mean_all(soft_ce_rows(g.probs, yhat));
            if (!std::isfinite(loss->value[0]))
                throw TrainingError("meta-test diverged at epoch " + std::to_string(t));
            backward(loss);
            std::vector<Tensor> grads;
            for (std::size_t l = 0; l < g.weights.size(); ++l) {
                grads.push_back(g.weights[l]->grad());
                grads.push_back(g.biases[l]->grad());
            }
            opt.step(model.params(), grads);
            loss_sum += loss->value[0] * static_cast<double>(batch.size());
            seen += batch.size();
        }
        row.loss_base = loss_sum / static_cast<double>(seen);
        row.corrected_label_acc =
            static_cast<double>(corrected_ok) / static_cast<double>(seen);
        DatasetEval train_eval = eval_train_accuracy(model, train);
        row.acc_train_noisy = train_eval.acc_noisy;
        row.acc_train_true = train_eval.acc_true;
        row.acc_test = eval_test_accuracy(model, test);
        result.log.rows.push_back(std::move(row));
    }
    const auto t_end = std::chrono::steady_clock::now();

    for (std::size_t k = 0; k < snaps.entries.size(); ++k)
        if (fingerprint(snaps.entries[k].params) != prints[k])
            throw Error("meta-test mutated a frozen snapshot");

    result.model = std::move(model);
    result.seconds_total = std::chrono::duration<double>(t_end - t_start).count();
    result.seconds_per_epoch = result.seconds_total / opts.epochs;
    return result;
}

} // namespace tmlc
