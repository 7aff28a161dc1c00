#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <json.hpp>

#include "tmlc/errors.hpp"
#include "tmlc/tensor.hpp"

namespace tmlc {

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.empty()) throw ContractError("accuracy: empty input");
    if (preds.size() != labels.size())
        throw DimensionError("accuracy: " + std::to_string(preds.size()) + " preds vs " +
                             std::to_string(labels.size()) + " labels");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == labels[i]) ++ok;
    return static_cast<double>(ok) / static_cast<double>(preds.size());
}

// Unweighted mean of per-class F1; classes absent from both preds and labels
// contribute zero.
inline double macro_f1(const std::vector<int>& preds, const std::vector<int>& labels,
                       int num_classes) {
    if (preds.empty()) throw ContractError("macro_f1: empty input");
    if (preds.size() != labels.size())
        throw DimensionError("macro_f1: " + std::to_string(preds.size()) + " preds vs " +
                             std::to_string(labels.size()) + " labels");
    double total = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const bool p = preds[i] == c, l = labels[i] == c;
            tp += p && l;
            fp += p && !l;
            fn += !p && l;
        }
        if (tp + fp + fn == 0) continue; // class absent entirely: F1 = 0
        const double denom = 2.0 * tp + fp + fn;
        total += denom > 0 ? 2.0 * tp / denom : 0.0;
    }
    return total / num_classes;
}

// A sample counts as corrected when argmax(yhat) leaves the noisy label.
// Precision: corrected samples that landed on the true label. Recall: actually
// corrupted samples that were corrected to their true label. 0/0 cases are
// null, never NaN.
struct CorrectionMetrics {
    std::optional<double> precision;
    std::optional<double> recall;
    double corrected_label_accuracy = 0.0;
};

inline CorrectionMetrics correction_metrics(const std::vector<int>& corrected_argmax,
                                            const std::vector<int>& noisy_labels,
                                            const std::vector<int>& true_labels) {
    if (corrected_argmax.size() != noisy_labels.size() ||
        corrected_argmax.size() != true_labels.size())
        throw DimensionError("correction_metrics: inconsistent lengths");
    if (corrected_argmax.empty()) throw ContractError("correction_metrics: empty input");

    std::size_t corrections = 0, good_corrections = 0, corrupted = 0, recovered = 0, hit = 0;
    for (std::size_t i = 0; i < corrected_argmax.size(); ++i) {
        const int y = true_labels[i], noisy = noisy_labels[i], pred = corrected_argmax[i];
        if (pred == y) ++hit;
        if (pred != noisy) {
            ++corrections;
            if (pred == y) ++good_corrections;
        }
        if (noisy != y) {
            ++corrupted;
            if (pred == y) ++recovered;
        }
    }
    CorrectionMetrics m;
    if (corrections > 0)
        m.precision = static_cast<double>(good_corrections) / corrections;
    if (corrupted > 0)
        m.recall = static_cast<double>(recovered) / corrupted;
    m.corrected_label_accuracy =
        static_cast<double>(hit) / static_cast<double>(corrected_argmax.size());
    return m;
}

inline CorrectionMetrics correction_metrics(const Tensor& yhat,
                                            const std::vector<int>& noisy_labels,
                                            const std::vector<int>& true_labels) {
    std::vector<int> preds;
    preds.reserve(yhat.rows());
    for (std::size_t r = 0; r < yhat.rows(); ++r)
        preds.push_back(static_cast<int>(argmax_row(yhat.row(r))));
    return correction_metrics(preds, noisy_labels, true_labels);
}

// ---------------------------------------------------------------------------
// per-seed metrics and their aggregate
// ---------------------------------------------------------------------------

struct SeedMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double corrected_label_accuracy = 0.0;
    std::optional<double> correction_precision;
    std::optional<double> correction_recall;
    std::optional<double> mean_kl;
    double seconds_per_epoch = 0.0;
};

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd out;
    out.count = xs.size();
    if (xs.empty()) return out;
    for (double x : xs) out.mean += x;
    out.mean /= static_cast<double>(xs.size());
    for (double x : xs) out.stddev += (x - out.mean) * (x - out.mean);
    out.stddev = xs.size() > 1 ? std::sqrt(out.stddev / (xs.size() - 1)) : 0.0;
    return out;
}

struct MetricsReport {
    std::vector<SeedMetrics> per_seed;

    template <typename Get>
    MeanStd aggregate(Get get) const {
        std::vector<double> xs;
        for (const SeedMetrics& m : per_seed) {
            auto v = get(m);
            if (v) xs.push_back(*v);
        }
        return mean_std(xs);
    }

    nlohmann::json to_json() const {
        auto opt_json = [](const std::optional<double>& v) {
            return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
        };
        nlohmann::json seeds = nlohmann::json::array();
        for (const SeedMetrics& m : per_seed) {
            seeds.push_back({{"accuracy", m.accuracy},
                             {"macro_f1", m.macro_f1},
                             {"corrected_label_accuracy", m.corrected_label_accuracy},
                             {"correction_precision", opt_json(m.correction_precision)},
                             {"correction_recall", opt_json(m.correction_recall)},
                             {"mean_kl", opt_json(m.mean_kl)},
                             {"seconds_per_epoch", m.seconds_per_epoch}});
        }
        auto pack = [this](auto get) {
            MeanStd ms = aggregate(get);
            return nlohmann::json{{"mean", ms.mean}, {"std", ms.stddev}, {"n", ms.count}};
        };
        nlohmann::json j;
        j["per_seed"] = std::move(seeds);
        j["accuracy"] = pack([](const SeedMetrics& m) { return std::optional(m.accuracy); });
        j["macro_f1"] = pack([](const SeedMetrics& m) { return std::optional(m.macro_f1); });
        j["corrected_label_accuracy"] = pack(
            [](const SeedMetrics& m) { return std::optional(m.corrected_label_accuracy); });
        j["correction_precision"] =
            pack([](const SeedMetrics& m) { return m.correction_precision; });
        j["correction_recall"] =
            pack([](const SeedMetrics& m) { return m.correction_recall; });
        j["mean_kl"] = pack([](const SeedMetrics& m) { return m.mean_kl; });
        j["seconds_per_epoch"] =
            pack([](const SeedMetrics& m) { return std::optional(m.seconds_per_epoch); });
        return j;
    }
};

} // namespace tmlc
