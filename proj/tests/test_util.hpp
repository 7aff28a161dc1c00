#pragma once

// Shared helpers for the unit suites: a minimal hand-rolled training loop and
// a closed-form least-squares classifier used as independent oracles.

#include <numeric>
#include <vector>

#include "tmlc/basemodel.hpp"
#include "tmlc/dataset.hpp"
#include "tmlc/graph.hpp"
#include "tmlc/rng.hpp"

namespace tmlc::test {

inline Tensor onehot_rows(const std::vector<int>& labels, int num_classes) {
    Tensor t({labels.size(), static_cast<std::size_t>(num_classes)});
    for (std::size_t i = 0; i < labels.size(); ++i)
        t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
    return t;
}

inline double eval_accuracy(const BaseModelState& m, const NoisyDataset& ds) {
    ForwardResult fr = forward_batch(m, ds.features);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (static_cast<int>(argmax_row(fr.probs.row(i))) == ds.true_labels[i]) ++ok;
    return static_cast<double>(ok) / ds.size();
}

// Plain cross-entropy training on hard labels; independent of the baselines
// and meta-loop modules.
inline void train_ce(BaseModelState& m, const NoisyDataset& ds, int epochs, int batch,
                     double lr, std::uint64_t shuffle_seed) {
    Optimizer opt(OptimizerConfig{.kind = OptimizerConfig::Kind::sgd_momentum,
                                  .learning_rate = lr,
                                  .momentum = 0.9});
    Rng rng = make_rng(shuffle_seed);
    std::vector<int> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    for (int e = 1; e <= epochs; ++e) {
        opt.begin_epoch(e);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::vector<int> idx(order.begin() + start, order.begin() + end);
            Tensor xb = gather_rows(ds.features, idx);
            std::vector<int> yb;
            for (int i : idx) yb.push_back(ds.noisy_labels[i]);
            Tensor tb = onehot_rows(yb, ds.num_classes);

            ModelGraph g = forward_graph(m, xb);
            NodePtr loss = mean_all(soft_ce_rows(g.probs, tb));
            backward(loss);
            std::vector<Tensor> grads;
            for (std::size_t l = 0; l < g.weights.size(); ++l) {
                grads.push_back(g.weights[l]->grad());
                grads.push_back(g.biases[l]->grad());
            }
            opt.step(m.params(), grads);
        }
    }
}

// Closed-form ridge-regularized least squares, one-vs-rest, with bias column.
// Returns training-set accuracy.
inline double least_squares_ovr_accuracy(const NoisyDataset& ds) {
    const std::size_t n = ds.size(), d = ds.dim(), p = d + 1;
    const int c = ds.num_classes;
    // normal matrix M = Phi^T Phi + lambda I
    std::vector<std::vector<double>> m(p, std::vector<double>(p, 0.0));
    std::vector<std::vector<double>> rhs(c, std::vector<double>(p, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> phi(p, 1.0);
        for (std::size_t j = 0; j < d; ++j) phi[j] = ds.features.at(i, j);
        for (std::size_t a = 0; a < p; ++a) {
            for (std::size_t b = 0; b < p; ++b) m[a][b] += phi[a] * phi[b];
            rhs[ds.true_labels[i]][a] += phi[a];
        }
    }
    for (std::size_t a = 0; a < p; ++a) m[a][a] += 1e-8;

    // gaussian elimination with partial pivoting, shared factor for all rhs
    std::vector<std::vector<double>> w(c, std::vector<double>(p, 0.0));
    for (int cls = 0; cls < c; ++cls) {
        auto a = m;
        auto b = rhs[cls];
        for (std::size_t col = 0; col < p; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < p; ++r)
                if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
            std::swap(a[col], a[piv]);
            std::swap(b[col], b[piv]);
            for (std::size_t r = col + 1; r < p; ++r) {
                const double f = a[r][col] / a[col][col];
                for (std::size_t cc = col; cc < p; ++cc) a[r][cc] -= f * a[col][cc];
                b[r] -= f * b[col];
            }
        }
        for (std::size_t col = p; col-- > 0;) {
            double acc = b[col];
            for (std::size_t cc = col + 1; cc < p; ++cc) acc -= a[col][cc] * w[cls][cc];
            w[cls][col] = acc / a[col][col];
        }
    }

    std::size_t ok = 0;
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        double best_score = -1e300;
        for (int cls = 0; cls < c; ++cls) {
            double s = w[cls][d];
            for (std::size_t j = 0; j < d; ++j) s += w[cls][j] * ds.features.at(i, j);
            if (s > best_score) {
                best_score = s;
                best = cls;
            }
        }
        if (best == ds.true_labels[i]) ++ok;
    }
    return static_cast<double>(ok) / n;
}

} // namespace tmlc::test
