#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmlc/errors.hpp"
#include "tmlc/rng.hpp"
#include "tmlc/tensor.hpp"

namespace tmlc {

enum class NoiseKind { none, symmetric, asymmetric, instance_dependent };

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::none: return "none";
        case NoiseKind::symmetric: return "symmetric";
        case NoiseKind::asymmetric: return "asymmetric";
        case NoiseKind::instance_dependent: return "instance_dependent";
    }
    return "?";
}

inline NoiseKind noise_kind_from(const std::string& s) {
    if (s == "none") return NoiseKind::none;
    if (s == "symmetric") return NoiseKind::symmetric;
    if (s == "asymmetric") return NoiseKind::asymmetric;
    if (s == "instance_dependent") return NoiseKind::instance_dependent;
    throw ConfigError("unknown noise kind: " + s);
}

struct NoiseSpec {
    NoiseKind kind = NoiseKind::none;
    double rate = 0.0;
    std::map<int, int> pair_map; // asymmetric: class -> flip target
    std::uint64_t seed = 0;

    void validate(int num_classes) const {
        if (rate < 0.0 || rate > 1.0)
            throw ConfigError("noise rate must be in [0,1], got " + std::to_string(rate));
        if (kind == NoiseKind::asymmetric) {
            if (pair_map.empty())
                throw ConfigError("asymmetric noise requires a pair_map");
            for (auto [from, to] : pair_map) {
                if (from < 0 || from >= num_classes || to < 0 || to >= num_classes)
                    throw ConfigError("pair_map entry " + std::to_string(from) + "->" +
                                      std::to_string(to) + " out of range for C=" +
                                      std::to_string(num_classes));
                if (from == to)
                    throw ConfigError("pair_map may not map a class to itself (" +
                                      std::to_string(from) + ")");
            }
        }
    }
};

struct NoisyDataset {
    Tensor features; // N x d
    std::vector<int> true_labels;
    std::vector<int> noisy_labels;
    int num_classes = 0;
    std::string name;
    std::optional<NoiseSpec> noise; // provenance of noisy_labels, if injected

    std::size_t size() const { return true_labels.size(); }
    std::size_t dim() const { return features.cols(); }

    double noisy_label_accuracy() const {
        std::size_t ok = 0;
        for (std::size_t i = 0; i < size(); ++i)
            if (noisy_labels[i] == true_labels[i]) ++ok;
        return size() ? static_cast<double>(ok) / size() : 0.0;
    }
};

struct DataSplit {
    std::vector<int> support_indices;
    std::vector<int> query_indices;
};

// ---------------------------------------------------------------------------
// generators
// ---------------------------------------------------------------------------

// C Gaussian clusters with centers evenly spaced on a circle of radius
// 4*spread*C/pi, so inter-center distance grows with C and spread.
inline NoisyDataset gen_blobs(int num_classes, int per_class, int dim, double spread,
                              std::uint64_t seed) {
    if (num_classes < 2 || per_class < 1 || dim < 1)
        throw ConfigError("gen_blobs: need C >= 2, per_class >= 1, dim >= 1");
    if (spread <= 0.0) throw ConfigError("gen_blobs: spread must be > 0");

    const double radius = 4.0 * spread * num_classes / std::numbers::pi;
    const std::size_t n = static_cast<std::size_t>(num_classes) * per_class;
    NoisyDataset ds;
    ds.features = Tensor({n, static_cast<std::size_t>(dim)});
    ds.num_classes = num_classes;
    ds.name = "blobs_c" + std::to_string(num_classes);
    Rng rng = make_rng(seed);
    std::normal_distribution<double> noise(0.0, spread);
    std::size_t row = 0;
    for (int c = 0; c < num_classes; ++c) {
        const double angle = 2.0 * std::numbers::pi * c / num_classes;
        std::vector<double> center(dim, 0.0);
        center[0] = radius * std::cos(angle);
        if (dim >= 2) center[1] = radius * std::sin(angle);
        for (int j = 0; j < per_class; ++j, ++row) {
            for (int k = 0; k < dim; ++k)
                ds.features.at(row, k) = center[k] + noise(rng);
            ds.true_labels.push_back(c);
            ds.noisy_labels.push_back(c);
        }
    }
    return ds;
}

// Two interleaved half circles; class 0 is the upper arc of the unit circle.
inline NoisyDataset gen_two_moons(int n, double noise_std, std::uint64_t seed) {
    if (n < 2 || n % 2 != 0) throw ConfigError("gen_two_moons: n must be even and >= 2");
    const int half = n / 2;
    NoisyDataset ds;
    ds.features = Tensor({static_cast<std::size_t>(n), 2});
    ds.num_classes = 2;
    ds.name = "two_moons";
    Rng rng = make_rng(seed);
    std::normal_distribution<double> noise(0.0, noise_std > 0 ? noise_std : 1.0);
    for (int i = 0; i < half; ++i) {
        const double t = std::numbers::pi * i / (half - 1);
        double x0 = std::cos(t), y0 = std::sin(t);
        double x1 = 1.0 - std::cos(t), y1 = 0.5 - std::sin(t);
        if (noise_std > 0) {
            x0 += noise(rng);
            y0 += noise(rng);
            x1 += noise(rng);
            y1 += noise(rng);
        }
        ds.features.at(i, 0) = x0;
        ds.features.at(i, 1) = y0;
        ds.features.at(half + i, 0) = x1;
        ds.features.at(half + i, 1) = y1;
        ds.true_labels.push_back(0);
        ds.noisy_labels.push_back(0);
    }
    for (int i = 0; i < half; ++i) {
        ds.true_labels.push_back(1);
        ds.noisy_labels.push_back(1);
    }
    return ds;
}

// Two concentric annuli: radii in [0.8,1.2] and [1.8,2.2].
inline NoisyDataset gen_rings(int n, std::uint64_t seed) {
    if (n < 2 || n % 2 != 0) throw ConfigError("gen_rings: n must be even and >= 2");
    const int half = n / 2;
    NoisyDataset ds;
    ds.features = Tensor({static_cast<std::size_t>(n), 2});
    ds.num_classes = 2;
    ds.name = "rings";
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> jitter(-0.2, 0.2);
    for (int i = 0; i < n; ++i) {
        const int cls = i < half ? 0 : 1;
        const double base = cls == 0 ? 1.0 : 2.0;
        const double r = base + jitter(rng);
        const double a = angle(rng);
        ds.features.at(i, 0) = r * std::cos(a);
        ds.features.at(i, 1) = r * std::sin(a);
        ds.true_labels.push_back(cls);
        ds.noisy_labels.push_back(cls);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// noise models
// ---------------------------------------------------------------------------

// Row-stochastic Q with Q[c][c'] = P(noisy = c' | true = c). Instance-dependent
// noise has no class-level matrix; its marginal over features equals the
// symmetric one, which is what the empirical confusion converges to.
inline Tensor transition_matrix(const NoiseSpec& spec, int num_classes) {
    spec.validate(num_classes);
    const std::size_t c = static_cast<std::size_t>(num_classes);
    Tensor q({c, c});
    switch (spec.kind) {
        case NoiseKind::none:
            for (std::size_t i = 0; i < c; ++i) q.at(i, i) = 1.0;
            break;
        case NoiseKind::symmetric:
        case NoiseKind::instance_dependent:
            for (std::size_t i = 0; i < c; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    q.at(i, j) = i == j ? 1.0 - spec.rate : spec.rate / (num_classes - 1);
            break;
        case NoiseKind::asymmetric:
            for (std::size_t i = 0; i < c; ++i) q.at(i, i) = 1.0;
            for (auto [from, to] : spec.pair_map) {
                q.at(from, from) = 1.0 - spec.rate;
                q.at(from, to) = spec.rate;
            }
            break;
    }
    return q;
}

inline NoisyDataset inject_noise(const NoisyDataset& clean, const NoiseSpec& spec) {
    spec.validate(clean.num_classes);
    if (clean.noisy_labels != clean.true_labels)
        throw ContractError("inject_noise: dataset already carries noisy labels");

    NoisyDataset ds = clean;
    ds.noise = spec;
    if (spec.kind == NoiseKind::none || spec.rate == 0.0) return ds;

    Rng rng = make_rng(spec.seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const int c = clean.num_classes;

    auto flip_uniform_other = [&](int y) {
        std::uniform_int_distribution<int> pick(0, c - 2);
        const int k = pick(rng);
        return k >= y ? k + 1 : k;
    };

    switch (spec.kind) {
        case NoiseKind::symmetric:
            for (std::size_t i = 0; i < ds.size(); ++i)
                if (coin(rng) < spec.rate)
                    ds.noisy_labels[i] = flip_uniform_other(ds.true_labels[i]);
            break;
        case NoiseKind::asymmetric:
            for (std::size_t i = 0; i < ds.size(); ++i) {
                const double u = coin(rng);
                auto it = spec.pair_map.find(ds.true_labels[i]);
                if (it != spec.pair_map.end() && u < spec.rate)
                    ds.noisy_labels[i] = it->second;
            }
            break;
        case NoiseKind::instance_dependent: {
            // flip prob_i = clamp(rate * sigma(w.x_i) / mean_j sigma(w.x_j), [0,1])
            // with w ~ N(0, I); flip target uniform over the other classes.
            const std::size_t d = ds.dim();
            std::vector<double> w(d);
            std::normal_distribution<double> gauss(0.0, 1.0);
            for (auto& v : w) v = gauss(rng);
            std::vector<double> s(ds.size());
            double mean = 0.0;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                double dot = 0.0;
                for (std::size_t k = 0; k < d; ++k) dot += w[k] * ds.features.at(i, k);
                s[i] = 1.0 / (1.0 + std::exp(-dot));
                mean += s[i];
            }
            mean /= static_cast<double>(ds.size());
            for (std::size_t i = 0; i < ds.size(); ++i) {
                const double p = std::clamp(spec.rate * s[i] / std::max(mean, 1e-12), 0.0, 1.0);
                if (coin(rng) < p)
                    ds.noisy_labels[i] = flip_uniform_other(ds.true_labels[i]);
            }
            break;
        }
        case NoiseKind::none:
            break;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// splitting
// ---------------------------------------------------------------------------

// Stratified by noisy label; every class lands in both sides.
inline DataSplit split_support_query(const NoisyDataset& ds, double query_fraction,
                                     std::uint64_t seed) {
    if (query_fraction <= 0.0 || query_fraction >= 1.0)
        throw ConfigError("query_fraction must be in (0,1), got " +
                          std::to_string(query_fraction));
    std::vector<std::vector<int>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[ds.noisy_labels[i]].push_back(static_cast<int>(i));

    Rng rng = make_rng(seed);
    DataSplit split;
    for (int cls = 0; cls < ds.num_classes; ++cls) {
        auto& members = by_class[cls];
        if (members.size() < 2)
            throw ConfigError("split_support_query: noisy class " + std::to_string(cls) +
                              " has fewer than 2 samples");
        std::shuffle(members.begin(), members.end(), rng);
        auto q = static_cast<std::size_t>(std::llround(query_fraction * members.size()));
        q = std::clamp<std::size_t>(q, 1, members.size() - 1);
        split.query_indices.insert(split.query_indices.end(), members.begin(),
                                   members.begin() + q);
        split.support_indices.insert(split.support_indices.end(), members.begin() + q,
                                     members.end());
    }
    std::sort(split.query_indices.begin(), split.query_indices.end());
    std::sort(split.support_indices.begin(), split.support_indices.end());
    return split;
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

inline void export_jsonl(const NoisyDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("export_jsonl: cannot open " + path);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        nlohmann::json rec;
        std::vector<double> feats(ds.features.row(i).begin(), ds.features.row(i).end());
        rec["features"] = feats;
        rec["y"] = ds.true_labels[i];
        rec["y_noisy"] = ds.noisy_labels[i];
        out << rec.dump() << "\n";
    }
}

} // namespace tmlc
