#pragma once

#include <deque>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmlc/errors.hpp"
#include "tmlc/graph.hpp"
#include "tmlc/tensor.hpp"

namespace tmlc {

// Feature layout fed to the corrector.
//   standard: [CNL, GNL, PE, onehot(noisy)]            width 3 + C
//   agnostic: [CNL, GNL, PE, p_noisy, agreement]       width 5, class-count free
enum class FeatureMode { standard, agnostic };

// Component knockouts; wo_nnp swaps the normalized losses for the raw loss,
// wo_tse replaces the recurrence with a feed-forward stub, wo_sd hardens the
// corrected distribution to a one-hot before it reaches the base loss.
enum class Ablation { none, wo_nnp, wo_tse, wo_sd };

inline std::string to_string(FeatureMode m) {
    return m == FeatureMode::standard ? "standard" : "agnostic";
}

inline FeatureMode feature_mode_from(const std::string& s) {
    if (s == "standard") return FeatureMode::standard;
    if (s == "agnostic") return FeatureMode::agnostic;
    throw ConfigError("unknown feature mode: " + s);
}

inline std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::wo_nnp: return "wo_nnp";
        case Ablation::wo_tse: return "wo_tse";
        case Ablation::wo_sd: return "wo_sd";
    }
    return "?";
}

inline std::size_t feature_width(FeatureMode mode, int num_classes, Ablation ab = Ablation::none) {
    if (mode == FeatureMode::agnostic) {
        if (ab == Ablation::wo_nnp)
            throw ConfigError("wo_nnp ablation is defined for standard features only");
        return 5;
    }
    if (ab == Ablation::wo_nnp) return 2 + static_cast<std::size_t>(num_classes);
    return 3 + static_cast<std::size_t>(num_classes);
}

// ---------------------------------------------------------------------------
// normalized noise perception
// ---------------------------------------------------------------------------

inline NodePtr cnl_nodes(const NodePtr& losses, const std::vector<int>& noisy_labels) {
    return div(losses, clamp_min(group_mean_rows(losses, noisy_labels), kLogClamp));
}

inline NodePtr gnl_nodes(const NodePtr& losses) {
    return div(losses, clamp_min(mean_all(losses), kLogClamp));
}

inline Tensor compute_cnl(const Tensor& losses, const std::vector<int>& noisy_labels) {
    return cnl_nodes(constant(losses), noisy_labels)->value;
}

inline Tensor compute_gnl(const Tensor& losses) {
    return gnl_nodes(constant(losses))->value;
}

inline Tensor compute_pe(const Tensor& probs) {
    return entropy_rows(constant(probs))->value;
}

inline Tensor onehot_matrix(const std::vector<int>& labels, int num_classes) {
    Tensor t({labels.size(), static_cast<std::size_t>(num_classes)});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw ContractError("label " + std::to_string(labels[i]) + " out of range for C=" +
                                std::to_string(num_classes));
        t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return t;
}

// Graph feature assembly; losses/probs may be constants (plain path) or live
// nodes (lookahead path). The label-derived columns are always constants.
inline NodePtr feature_nodes(const NodePtr& losses, const NodePtr& probs,
                             const std::vector<int>& noisy_labels, int num_classes,
                             FeatureMode mode, Ablation ab = Ablation::none) {
    if (losses->value.size() != probs->value.rows() ||
        losses->value.size() != noisy_labels.size())
        throw DimensionError("feature_nodes: losses " + losses->value.shape_str() +
                             ", probs " + probs->value.shape_str() + ", " +
                             std::to_string(noisy_labels.size()) + " labels");
    NodePtr pe = entropy_rows(probs);
    if (mode == FeatureMode::agnostic) {
        NodePtr p_noisy = select_col_per_row(probs, noisy_labels);
        Tensor agree({noisy_labels.size()});
        for (std::size_t i = 0; i < noisy_labels.size(); ++i)
            agree[i] = static_cast<int>(argmax_row(probs->value.row(i))) == noisy_labels[i]
                           ? 1.0
                           : 0.0;
        return concat_cols({cnl_nodes(losses, noisy_labels), gnl_nodes(losses), pe, p_noisy,
                            constant(agree)});
    }
    NodePtr nlo = constant(onehot_matrix(noisy_labels, num_classes));
    if (ab == Ablation::wo_nnp) return concat_cols({losses, pe, nlo});
    return concat_cols({cnl_nodes(losses, noisy_labels), gnl_nodes(losses), pe, nlo});
}

inline Tensor build_features(const Tensor& losses, const Tensor& probs,
                             const std::vector<int>& noisy_labels, int num_classes,
                             FeatureMode mode, Ablation ab = Ablation::none) {
    return feature_nodes(constant(losses), constant(probs), noisy_labels, num_classes, mode, ab)
        ->value;
}

// ---------------------------------------------------------------------------
// per-sample dynamics store
// ---------------------------------------------------------------------------

struct RecurrentState {
    Tensor h;
    Tensor c;
};

// Holds each training sample's latest recurrent state, its previous-epoch
// prediction (for the mixing decoder) and a short feature history ring.
// States start at zero; prev predictions start uniform.
class DynamicsStore {
public:
    struct HistoryEntry {
        int epoch = 0;
        double loss = 0.0;
        std::vector<double> features;
    };

    DynamicsStore(std::size_t num_samples, std::size_t hidden, std::size_t num_classes,
                  std::size_t history_depth = 1)
        : n_(num_samples),
          hidden_(hidden),
          classes_(num_classes),
          depth_(history_depth),
          h_(num_samples * hidden, 0.0),
          c_(num_samples * hidden, 0.0),
          prev_probs_(num_samples * num_classes, 1.0 / static_cast<double>(num_classes)),
          history_(num_samples) {}

    std::size_t size() const { return n_; }
    std::size_t hidden_size() const { return hidden_; }
    std::size_t num_classes() const { return classes_; }

    int epoch() const { return epoch_; }
    void set_epoch(int t) { epoch_ = t; }

    RecurrentState get(int i) const {
        check(i);
        RecurrentState s{Tensor({hidden_}), Tensor({hidden_})};
        for (std::size_t k = 0; k < hidden_; ++k) {
            s.h[k] = h_[i * hidden_ + k];
            s.c[k] = c_[i * hidden_ + k];
        }
        return s;
    }

    void set(int i, const RecurrentState& s) {
        check(i);
        if (s.h.size() != hidden_ || s.c.size() != hidden_)
            throw DimensionError("store set: state width " + std::to_string(s.h.size()) +
                                 " vs hidden " + std::to_string(hidden_));
        for (std::size_t k = 0; k < hidden_; ++k) {
            h_[i * hidden_ + k] = s.h[k];
            c_[i * hidden_ + k] = s.c[k];
        }
    }

    Tensor gather_h(const std::vector<int>& idx) const { return gather(h_, hidden_, idx); }
    Tensor gather_c(const std::vector<int>& idx) const { return gather(c_, hidden_, idx); }
    Tensor gather_prev_probs(const std::vector<int>& idx) const {
        return gather(prev_probs_, classes_, idx);
    }

    void update_states(const std::vector<int>& idx, const Tensor& h, const Tensor& c) {
        scatter(h_, hidden_, idx, h);
        scatter(c_, hidden_, idx, c);
    }

    void update_prev_probs(const std::vector<int>& idx, const Tensor& probs) {
        scatter(prev_probs_, classes_, idx, probs);
    }

    void push_history(const std::vector<int>& idx, const Tensor& features,
                      const Tensor& losses, int epoch) {
        for (std::size_t r = 0; r < idx.size(); ++r) {
            check(idx[r]);
            auto& ring = history_[idx[r]];
            ring.push_back({epoch, losses[r],
                            {features.row(r).begin(), features.row(r).end()}});
            while (ring.size() > depth_) ring.pop_front();
        }
    }

    const std::deque<HistoryEntry>& history(int i) const {
        check(i);
        return history_[i];
    }

private:
    void check(int i) const {
        if (i < 0 || static_cast<std::size_t>(i) >= n_)
            throw ContractError("dynamics store: index " + std::to_string(i) +
                                " out of range for " + std::to_string(n_) + " samples");
    }

    Tensor gather(const std::vector<double>& flat, std::size_t width,
                  const std::vector<int>& idx) const {
        Tensor out({idx.size(), width});
        for (std::size_t r = 0; r < idx.size(); ++r) {
            check(idx[r]);
            for (std::size_t k = 0; k < width; ++k)
                out.at(r, k) = flat[idx[r] * width + k];
        }
        return out;
    }

    void scatter(std::vector<double>& flat, std::size_t width, const std::vector<int>& idx,
                 const Tensor& rows) {
        if (rows.rows() != idx.size() || rows.cols() != width)
            throw DimensionError("store update: rows " + rows.shape_str() + " vs " +
                                 std::to_string(idx.size()) + "x" + std::to_string(width));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            check(idx[r]);
            for (std::size_t k = 0; k < width; ++k)
                flat[idx[r] * width + k] = rows.at(r, k);
        }
    }

    std::size_t n_, hidden_, classes_, depth_;
    std::vector<double> h_, c_, prev_probs_;
    std::vector<std::deque<HistoryEntry>> history_;
    int epoch_ = 0;
};

// Streams one JSONL record per (sample, epoch) observation.
class DynamicsExporter {
public:
    explicit DynamicsExporter(const std::string& path) : out_(path) {
        if (!out_) throw ConfigError("dynamics export: cannot open " + path);
    }

    void record(int index, int epoch, double cnl, double gnl, double pe, double loss,
                int noisy_label, int true_label) {
        nlohmann::json j;
        j["index"] = index;
        j["epoch"] = epoch;
        j["cnl"] = cnl;
        j["gnl"] = gnl;
        j["pe"] = pe;
        j["loss"] = loss;
        j["noisy_label"] = noisy_label;
        j["true_label"] = true_label;
        out_ << j.dump() << "\n";
    }

private:
    std::ofstream out_;
};

} // namespace tmlc
