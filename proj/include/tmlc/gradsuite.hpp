#pragma once

#include <string>
#include <vector>

#include "tmlc/basemodel.hpp"
#include "tmlc/corrector.hpp"
#include "tmlc/gradcheck.hpp"

// The full finite-difference certification sweep: every differentiable op,
// the base model, and the end-to-end corrector pipeline, each over a set of
// seeded random instances. Backs the `gradcheck` CLI command and the
// gradient acceptance gate.

namespace tmlc {

struct GradCheckCase {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradSuiteResult {
    std::vector<GradCheckCase> cases;
    double max_rel_err = 0.0;
};

namespace detail {

inline Tensor off_kink(std::vector<std::size_t> shape, Rng& rng) {
    Tensor t = random_uniform(std::move(shape), 0.1, 1.0, rng);
    std::uniform_int_distribution<int> coin(0, 1);
    for (auto& v : t.data())
        if (coin(rng)) v = -v;
    return t;
}

inline Tensor simplex_rows(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        Tensor row = random_simplex(cols, rng);
        for (std::size_t c = 0; c < cols; ++c) t.at(r, c) = row[c];
    }
    return t;
}

} // namespace detail

inline GradSuiteResult run_gradcheck_suite(int num_seeds = 20) {
    GradSuiteResult suite;
    auto record = [&suite](const std::string& name, double err) {
        suite.cases.push_back({name, err});
        suite.max_rel_err = std::max(suite.max_rel_err, err);
    };

    for (int s = 0; s < num_seeds; ++s) {
        const auto seed = static_cast<std::uint64_t>(s);
        Rng rng = make_rng(7000 + seed);

        {
            Tensor a = random_normal({3, 4}, 0.0, 1.0, rng);
            Tensor b = random_normal({4, 2}, 0.0, 1.0, rng);
            record("matmul_lhs", check_graph_gradient(
                                     [&](const NodePtr& l) {
                                         return sum_all(matmul(l, constant(b)));
                                     },
                                     a));
            record("matmul_rhs", check_graph_gradient(
                                     [&](const NodePtr& l) {
                                         return sum_all(matmul(constant(a), l));
                                     },
                                     b));
        }
        {
            Tensor x = detail::off_kink({4, 3}, rng);
            Tensor m = detail::off_kink({4, 3}, rng);
            record("relu", check_graph_gradient(
                               [&](const NodePtr& l) {
                                   return sum_all(mul(relu(l), constant(m)));
                               },
                               x));
            record("tanh", check_graph_gradient(
                               [&](const NodePtr& l) {
                                   return sum_all(mul(tanh_op(l), constant(m)));
                               },
                               x));
            record("sigmoid", check_graph_gradient(
                                  [&](const NodePtr& l) {
                                      return sum_all(mul(sigmoid(l), constant(m)));
                                  },
                                  x));
            Tensor bias = detail::off_kink({3}, rng);
            record("add_bias", check_graph_gradient(
                                   [&](const NodePtr& l) {
                                       return sum_all(tanh_op(add_bias(constant(m), l)));
                                   },
                                   bias));
        }
        {
            Tensor logits = random_normal({3, 5}, 0.0, 2.0, rng);
            Tensor targets = detail::simplex_rows(3, 5, rng);
            record("softmax_cross_entropy",
                   check_graph_gradient(
                       [&](const NodePtr& l) {
                           return mean_all(soft_ce_rows(softmax_rows(l), targets));
                       },
                       logits));
            record("kl_divergence", check_graph_gradient(
                                        [&](const NodePtr& l) {
                                            return sum_all(kl_rows(targets, softmax_rows(l)));
                                        },
                                        logits));
            record("entropy", check_graph_gradient(
                                  [&](const NodePtr& l) {
                                      return sum_all(entropy_rows(softmax_rows(l)));
                                  },
                                  logits));
        }
        {
            Tensor losses = random_uniform({6}, 0.2, 2.0, rng);
            std::vector<int> groups = {0, 1, 0, 2, 1, 0};
            record("category_normalized_loss",
                   check_graph_gradient(
                       [&](const NodePtr& l) {
                           auto cnl = div(l, clamp_min(group_mean_rows(l, groups), kLogClamp));
                           return sum_all(mul(cnl, cnl));
                       },
                       losses));
            record("global_normalized_loss",
                   check_graph_gradient(
                       [&](const NodePtr& l) {
                           auto gnl = div(l, clamp_min(mean_all(l), kLogClamp));
                           return sum_all(mul(gnl, gnl));
                       },
                       losses));
        }
        {
            // base model: mean loss against random soft targets
            BaseModelState m = mlp_init({3, 5, 3}, 7100 + seed);
            Tensor x = random_normal({6, 3}, 0.0, 1.0, rng);
            Tensor targets = detail::simplex_rows(6, 3, rng);
            ModelGraph g = forward_graph(m, x);
            backward(mean_all(soft_ce_rows(g.probs, targets)));
            double worst = 0.0;
            for (std::size_t l = 0; l < m.weights.size(); ++l)
                for (bool is_weight : {true, false}) {
                    const Tensor& analytic =
                        is_weight ? g.weights[l]->grad() : g.biases[l]->grad();
                    const Tensor& at = is_weight ? m.weights[l] : m.biases[l];
                    auto eval = [&](const Tensor& p) {
                        BaseModelState probe = m;
                        (is_weight ? probe.weights[l] : probe.biases[l]) = p;
                        ForwardResult fr = forward_batch(probe, x);
                        return per_sample_losses(fr.probs, targets).sum() / 6.0;
                    };
                    worst = std::max(worst, finite_difference_check(eval, at, analytic));
                }
            record("base_model", worst);
        }
        for (auto mode : {FeatureMode::standard, FeatureMode::agnostic}) {
            // end-to-end corrector pipeline: NNP -> LSTM -> decoder -> KL
            CorrectorParams p = corrector_init(mode, 4, 3, 7200 + seed);
            Tensor probs = detail::simplex_rows(4, 3, rng);
            Tensor losses = random_uniform({4}, 0.2, 2.5, rng);
            Tensor targets = detail::simplex_rows(4, 3, rng);
            std::vector<int> noisy = {0, 1, 2, 1};
            Tensor h0 = random_uniform({4, 4}, -0.5, 0.5, rng);
            Tensor c0 = random_uniform({4, 4}, -0.5, 0.5, rng);
            Tensor prev = Tensor::full({4, 3}, 1.0 / 3.0);

            auto loss_of = [&](const CorrectorParams& params) {
                CorrectionGraph g =
                    correct_batch_nodes(params, constant(probs), constant(losses), noisy, 3,
                                        h0, c0, prev);
                return sum_all(kl_rows(targets, g.yhat));
            };
            CorrectionGraph g = correct_batch_nodes(p, constant(probs), constant(losses),
                                                    noisy, 3, h0, c0, prev);
            backward(sum_all(kl_rows(targets, g.yhat)));
            auto nodes = g.pn.all(p.ff_stub);
            auto tensors = p.param_list();
            double worst = 0.0;
            for (std::size_t k = 0; k < tensors.size(); ++k) {
                auto eval = [&](const Tensor& probe) {
                    CorrectorParams copy = p;
                    *copy.param_list()[k] = probe;
                    return loss_of(copy)->value[0];
                };
                worst = std::max(worst,
                                 finite_difference_check(eval, *tensors[k],
                                                         nodes[k]->grad()));
            }
            record(mode == FeatureMode::standard ? "corrector_pipeline_standard"
                                                 : "corrector_pipeline_agnostic",
                   worst);
        }
        {
            Tensor theta = random_normal({2, 3}, 0.0, 1.0, rng);
            std::vector<Tensor> basis;
            for (int k = 0; k < 4; ++k) basis.push_back(random_normal({2, 3}, 0.0, 1.0, rng));
            Tensor yhat = random_uniform({2, 2}, 0.1, 0.9, rng);
            record("virtual_sgd_step",
                   check_graph_gradient(
                       [&](const NodePtr& l) {
                           auto stepped = virtual_sgd_step(theta, l, basis, 0.3);
                           return sum_all(mul(stepped, stepped));
                       },
                       yhat));
        }
    }

    // collapse duplicate case names to their worst error
    std::vector<GradCheckCase> folded;
    for (const GradCheckCase& c : suite.cases) {
        bool found = false;
        for (GradCheckCase& f : folded)
            if (f.name == c.name) {
                f.max_rel_err = std::max(f.max_rel_err, c.max_rel_err);
                found = true;
                break;
            }
        if (!found) folded.push_back(c);
    }
    suite.cases = std::move(folded);
    return suite;
}

} // namespace tmlc
