#pragma once

#include <functional>

#include "tmlc/graph.hpp"
#include "tmlc/tensor.hpp"

namespace tmlc {

// Central finite differences against a supplied analytic gradient.
// Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
// The evaluation function must be pure (no graph, forward only), which keeps
// this oracle independent of the backward pass it is used to certify.
inline double finite_difference_check(const std::function<double(const Tensor&)>& f,
                                      const Tensor& x, const Tensor& analytic,
                                      double h = 1e-5) {
    if (!x.same_shape(analytic))
        throw DimensionError("finite_difference_check: x " + x.shape_str() +
                             " vs gradient " + analytic.shape_str());
    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic[i] - numeric) /
                           std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

// Convenience wrapper: a scalar graph g(x) with one free leaf. Computes the
// analytic gradient via backward() and checks it against finite differences
// of the same graph's forward value.
inline double check_graph_gradient(const std::function<NodePtr(const NodePtr&)>& build,
                                   const Tensor& x, double h = 1e-5) {
    NodePtr leaf = param(x, "x");
    NodePtr loss = build(leaf);
    backward(loss);
    Tensor analytic = leaf->grad();
    auto eval = [&build](const Tensor& p) {
        NodePtr l = param(p, "x");
        return build(l)->value[0];
    };
    return finite_difference_check(eval, x, analytic, h);
}

} // namespace tmlc
