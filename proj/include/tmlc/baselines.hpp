#pragma once

#include <string>
#include <vector>

#include "tmlc/metaloop.hpp"

namespace tmlc {

enum class MethodKind {
    ce,
    label_smoothing,
    forward_correction,
    bootstrap,
    tmlc,
    tmlc_wo_nnp,
    tmlc_wo_tse,
    tmlc_wo_sd,
};

inline std::string to_string(MethodKind k) {
    switch (k) {
        case MethodKind::ce: return "ce";
        case MethodKind::label_smoothing: return "label_smoothing";
        case MethodKind::forward_correction: return "forward_correction";
        case MethodKind::bootstrap: return "bootstrap";
        case MethodKind::tmlc: return "tmlc";
        case MethodKind::tmlc_wo_nnp: return "tmlc_wo_nnp";
        case MethodKind::tmlc_wo_tse: return "tmlc_wo_tse";
        case MethodKind::tmlc_wo_sd: return "tmlc_wo_sd";
    }
    return "?";
}

inline MethodKind method_kind_from(const std::string& s) {
    for (MethodKind k : {MethodKind::ce, MethodKind::label_smoothing,
                         MethodKind::forward_correction, MethodKind::bootstrap,
                         MethodKind::tmlc, MethodKind::tmlc_wo_nnp, MethodKind::tmlc_wo_tse,
                         MethodKind::tmlc_wo_sd})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown method kind: " + s);
}

struct MethodSpec {
    MethodKind kind = MethodKind::ce;
    double epsilon = 0.1; // label smoothing strength
    double lambda = 0.8;  // bootstrap weight on the noisy label
    Tensor q;             // forward correction transition matrix (row-stochastic)

    bool is_tmlc() const {
        return kind == MethodKind::tmlc || kind == MethodKind::tmlc_wo_nnp ||
               kind == MethodKind::tmlc_wo_tse || kind == MethodKind::tmlc_wo_sd;
    }

    Ablation ablation() const {
        switch (kind) {
            case MethodKind::tmlc_wo_nnp: return Ablation::wo_nnp;
            case MethodKind::tmlc_wo_tse: return Ablation::wo_tse;
            case MethodKind::tmlc_wo_sd: return Ablation::wo_sd;
            default: return Ablation::none;
        }
    }

    void validate(int num_classes) const {
        if (kind == MethodKind::label_smoothing && (epsilon < 0.0 || epsilon > 1.0))
            throw ConfigError("label smoothing: epsilon must be in [0,1]");
        if (kind == MethodKind::bootstrap && (lambda < 0.0 || lambda > 1.0))
            throw ConfigError("bootstrap: lambda must be in [0,1]");
        if (kind == MethodKind::forward_correction) {
            const auto c = static_cast<std::size_t>(num_classes);
            if (q.rows() != c || q.cols() != c)
                throw ConfigError("forward correction: Q must be " + std::to_string(c) + "x" +
                                  std::to_string(c) + ", got " + q.shape_str());
            for (std::size_t r = 0; r < c; ++r) {
                double sum = 0.0;
                for (std::size_t cc = 0; cc < c; ++cc) {
                    if (q.at(r, cc) < -1e-12)
                        throw ConfigError("forward correction: Q has a negative entry");
                    sum += q.at(r, cc);
                }
                if (std::abs(sum - 1.0) > 1e-6)
                    throw ConfigError("forward correction: Q row " + std::to_string(r) +
                                      " sums to " + std::to_string(sum));
            }
        }
    }
};

// Target distribution for one batch. Forward correction keeps the one-hot
// target and instead maps the prediction through Q before the loss.
inline Tensor baseline_targets(const MethodSpec& method, const std::vector<int>& noisy,
                               const Tensor& probs, int num_classes) {
    switch (method.kind) {
        case MethodKind::label_smoothing:
            return soften_rows(noisy, method.epsilon, num_classes);
        case MethodKind::bootstrap: {
            Tensor targets = onehot_matrix(noisy, num_classes);
            for (std::size_t i = 0; i < noisy.size(); ++i)
                for (int c = 0; c < num_classes; ++c)
                    targets.at(i, c) = method.lambda * targets.at(i, c) +
                                       (1.0 - method.lambda) * probs.at(i, c);
            return targets;
        }
        default:
            return onehot_matrix(noisy, num_classes);
    }
}

// One shared epoch loop; methods differ only in how each batch's targets (or
// the prediction fed to the loss) are built. That keeps the parameter-identity
// reductions to plain cross-entropy bitwise.
inline TrainResult run_baseline(const NoisyDataset& train,
                                const std::vector<int>& train_indices,
                                const NoisyDataset& test, BaseModelState model,
                                const OptimizerConfig& opt_cfg, const MethodSpec& method,
                                int epochs, int batch_size, std::uint64_t shuffle_seed) {
    if (method.is_tmlc())
        throw ConfigError("run_baseline handles reference methods; use meta_train for tmlc");
    method.validate(train.num_classes);
    if (train_indices.empty()) throw ConfigError("baseline: empty training index set");
    if (model.num_classes() != static_cast<std::size_t>(train.num_classes))
        throw ConfigError("baseline: model output width does not match dataset classes");

    const int c = train.num_classes;
    Optimizer opt(opt_cfg);
    Rng shuffle_rng = make_rng(shuffle_seed);

    TrainResult result;
    const auto t_start = std::chrono::steady_clock::now();
    for (int t = 1; t <= epochs; ++t) {
        opt.begin_epoch(t);
        EpochRow row;
        row.epoch = t;
        double loss_sum = 0.0;
        std::size_t seen = 0, target_ok = 0;
        result.final_labels = LabelOutcome{};

        for (const auto& batch : make_batches(train_indices, batch_size, shuffle_rng)) {
            Tensor xb = gather_rows(train.features, batch);
            std::vector<int> noisy_b = labels_at(train.noisy_labels, batch);
            ModelGraph g = forward_graph(model, xb);

            Tensor targets = baseline_targets(method, noisy_b, g.probs->value, c);
            NodePtr pred = g.probs;
            if (method.kind == MethodKind::forward_correction)
                pred = matmul(g.probs, constant(method.q)); // rows stay stochastic

            for (std::size_t i = 0; i < batch.size(); ++i) {
                const int amax = static_cast<int>(argmax_row(targets.row(i)));
                const int truth = train.true_labels[static_cast<std::size_t>(batch[i])];
                if (amax == truth) ++target_ok;
                result.final_labels.corrected.push_back(amax);
                result.final_labels.noisy.push_back(noisy_b[i]);
                result.final_labels.truth.push_back(truth);
            }

            NodePtr loss = mean_all(soft_ce_rows(pred, targets));
            if (!std::isfinite(loss->value[0]))
                throw TrainingError("baseline " + to_string(method.kind) +
                                    " diverged at epoch " + std::to_string(t));
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
        row.corrected_label_acc = static_cast<double>(target_ok) / static_cast<double>(seen);
        DatasetEval train_eval = eval_train_accuracy(model, train);
        row.acc_train_noisy = train_eval.acc_noisy;
        row.acc_train_true = train_eval.acc_true;
        row.acc_test = eval_test_accuracy(model, test);
        result.log.rows.push_back(std::move(row));
    }
    const auto t_end = std::chrono::steady_clock::now();
    result.model = std::move(model);
    result.seconds_total = std::chrono::duration<double>(t_end - t_start).count();
    result.seconds_per_epoch = result.seconds_total / epochs;
    return result;
}

inline TrainResult run_ce(const NoisyDataset& train, const std::vector<int>& idx,
                          const NoisyDataset& test, BaseModelState model,
                          const OptimizerConfig& opt_cfg, int epochs, int batch_size,
                          std::uint64_t shuffle_seed) {
    return run_baseline(train, idx, test, std::move(model), opt_cfg,
                        MethodSpec{.kind = MethodKind::ce}, epochs, batch_size, shuffle_seed);
}

inline TrainResult run_label_smoothing(const NoisyDataset& train, const std::vector<int>& idx,
                                       const NoisyDataset& test, BaseModelState model,
                                       const OptimizerConfig& opt_cfg, double epsilon,
                                       int epochs, int batch_size,
                                       std::uint64_t shuffle_seed) {
    return run_baseline(train, idx, test, std::move(model), opt_cfg,
                        MethodSpec{.kind = MethodKind::label_smoothing, .epsilon = epsilon},
                        epochs, batch_size, shuffle_seed);
}

inline TrainResult run_forward_correction(const NoisyDataset& train,
                                          const std::vector<int>& idx,
                                          const NoisyDataset& test, BaseModelState model,
                                          const OptimizerConfig& opt_cfg, Tensor q, int epochs,
                                          int batch_size, std::uint64_t shuffle_seed) {
    MethodSpec spec{.kind = MethodKind::forward_correction};
    spec.q = std::move(q);
    return run_baseline(train, idx, test, std::move(model), opt_cfg, spec, epochs, batch_size,
                        shuffle_seed);
}

inline TrainResult run_bootstrap(const NoisyDataset& train, const std::vector<int>& idx,
                                 const NoisyDataset& test, BaseModelState model,
                                 const OptimizerConfig& opt_cfg, double lambda, int epochs,
                                 int batch_size, std::uint64_t shuffle_seed) {
    return run_baseline(train, idx, test, std::move(model), opt_cfg,
                        MethodSpec{.kind = MethodKind::bootstrap, .lambda = lambda}, epochs,
                        batch_size, shuffle_seed);
}

// Ablated meta-training runs end to end with the same logging contract.
inline TrainResult run_ablation(Ablation kind, const NoisyDataset& train,
                                const DataSplit& split, const NoisyDataset& test,
                                BaseModelState model, const OptimizerConfig& inner_cfg,
                                MetaConfig mc) {
    if (kind == Ablation::none) throw ConfigError("run_ablation: pick a component to remove");
    mc.ablation = kind;
    return meta_train(train, split, test, std::move(model), inner_cfg, mc);
}

} // namespace tmlc
