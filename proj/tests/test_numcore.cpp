#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tmlc/gradcheck.hpp"
#include "tmlc/graph.hpp"
#include "tmlc/rng.hpp"
#include "tmlc/tensor.hpp"

using namespace tmlc;

namespace {

// Random values bounded away from relu/clamp kinks so central differences
// stay on one side of every non-smooth point.
Tensor random_off_kink(std::vector<std::size_t> shape, Rng& rng) {
    Tensor t = random_uniform(std::move(shape), 0.1, 1.0, rng);
    std::uniform_int_distribution<int> coin(0, 1);
    for (auto& v : t.data())
        if (coin(rng)) v = -v;
    return t;
}

} // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3});
    REQUIRE(t.size() == 6);
    REQUIRE(t.rows() == 2);
    REQUIRE(t.cols() == 3);
    t.at(1, 2) = 5.0;
    REQUIRE(t[5] == 5.0);
    REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST_CASE("matmul identity and direct arithmetic") {
    auto I = constant(Tensor({2, 2}, {1, 0, 0, 1}));
    auto A = constant(Tensor({2, 2}, {1, 2, 3, 4}));
    auto out = matmul(I, A);
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(out->value[i] == A->value[i]);

    auto B = constant(Tensor({2, 2}, {5, 6, 7, 8}));
    auto C = matmul(A, B);
    REQUIRE(C->value[0] == 19.0);
    REQUIRE(C->value[1] == 22.0);
    REQUIRE(C->value[2] == 43.0);
    REQUIRE(C->value[3] == 50.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto A = constant(Tensor({2, 3}));
    auto B = constant(Tensor({2, 2}));
    try {
        matmul(A, B);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("[2x3]") != std::string::npos);
        REQUIRE(msg.find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches central finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng = make_rng(100 + seed);
        Tensor A = random_normal({3, 4}, 0.0, 1.0, rng);
        Tensor B = random_normal({4, 2}, 0.0, 1.0, rng);
        double err = check_graph_gradient(
            [&](const NodePtr& leaf) { return sum_all(matmul(leaf, constant(B))); }, A);
        REQUIRE(err <= 1e-4);
        err = check_graph_gradient(
            [&](const NodePtr& leaf) { return sum_all(matmul(constant(A), leaf)); }, B);
        REQUIRE(err <= 1e-4);
    }
}

TEST_CASE("softmax symmetry, normalization, shift invariance") {
    Tensor two = softmax(Tensor({2}, {0.0, 0.0}));
    REQUIRE(two[0] == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(two[1] == Catch::Approx(0.5).margin(1e-15));

    Tensor one = softmax(Tensor({1}, {-3.7}));
    REQUIRE(one[0] == Catch::Approx(1.0).margin(1e-15));

    Rng rng = make_rng(7);
    Tensor z = random_normal({6}, 0.0, 3.0, rng);
    Tensor shifted = z;
    for (auto& v : shifted.data()) v += 7.3;
    Tensor a = softmax(z), b = softmax(shifted);
    for (std::size_t i = 0; i < a.size(); ++i)
        REQUIRE(std::abs(a[i] - b[i]) <= 1e-12);
}

TEST_CASE("softmax stays on the simplex for extreme logits") {
    Rng rng = make_rng(11);
    for (int k = 0; k < 200; ++k) {
        Tensor z = random_uniform({5}, -700.0, 700.0, rng);
        Tensor p = softmax(z);
        double sum = 0.0;
        for (double v : p.data()) {
            REQUIRE(v >= 0.0);
            sum += v;
        }
        REQUIRE(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("soft cross-entropy on pinned cases") {
    REQUIRE(soft_cross_entropy(Tensor({3}, {1, 0, 0}), Tensor({3}, {1, 0, 0})) <= 1e-11);

    Tensor uniform4 = Tensor::full({4}, 0.25);
    Tensor onehot2({4});
    onehot2[2] = 1.0;
    REQUIRE(soft_cross_entropy(uniform4, onehot2) == Catch::Approx(std::log(4.0)).epsilon(1e-12));

    const double expected = -0.5 * std::log(0.7) - 0.5 * std::log(0.3);
    REQUIRE(soft_cross_entropy(Tensor({2}, {0.7, 0.3}), Tensor({2}, {0.5, 0.5})) ==
            Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("soft cross-entropy rejects off-simplex targets") {
    REQUIRE_THROWS_AS(soft_cross_entropy(Tensor({2}, {0.5, 0.5}), Tensor({2}, {0.9, 0.9})),
                      ContractError);
}

TEST_CASE("kl divergence identities and hand-computed value") {
    Rng rng = make_rng(3);
    for (int k = 0; k < 50; ++k) {
        Tensor p = random_simplex(6, rng);
        REQUIRE(std::abs(kl_divergence(p, p)) <= 1e-9);
    }

    Tensor onehot1({4});
    onehot1[1] = 1.0;
    REQUIRE(kl_divergence(onehot1, Tensor::full({4}, 0.25)) ==
            Catch::Approx(std::log(4.0)).epsilon(1e-12));

    // hand computation: 0.91*ln(0.91/0.1) + 9*0.01*ln(0.01/0.1)
    Tensor spiky({10});
    spiky[0] = 0.91;
    for (std::size_t i = 1; i < 10; ++i) spiky[i] = 0.01;
    const double byhand = 0.91 * std::log(9.1) + 9 * 0.01 * std::log(0.1);
    REQUIRE(kl_divergence(spiky, Tensor::full({10}, 0.1)) ==
            Catch::Approx(byhand).epsilon(1e-12));
}

TEST_CASE("kl divergence is nonnegative over random simplex pairs") {
    Rng rng = make_rng(17);
    for (int k = 0; k < 500; ++k) {
        Tensor t = random_simplex(5, rng);
        Tensor p = random_simplex(5, rng);
        REQUIRE(kl_divergence(t, p) >= -1e-9);
    }
}

TEST_CASE("backward of sum gives all-ones; of half square norm gives x") {
    auto x = param(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    backward(sum_all(x));
    for (std::size_t i = 0; i < 6; ++i) REQUIRE(x->grad()[i] == 1.0);

    auto y = param(Tensor({3}, {1, -2, 3}));
    auto loss = scale(sum_all(mul(y, y)), 0.5);
    backward(loss);
    REQUIRE(y->grad()[0] == Catch::Approx(1.0));
    REQUIRE(y->grad()[1] == Catch::Approx(-2.0));
    REQUIRE(y->grad()[2] == Catch::Approx(3.0));
}

TEST_CASE("backward rejects non-scalar roots") {
    auto x = param(Tensor({3}, {1, 2, 3}));
    REQUIRE_THROWS_AS(backward(add(x, x)), ContractError);
}

TEST_CASE("running backward twice accumulates exactly twice the gradient") {
    auto x = param(Tensor({3}, {0.3, -0.7, 1.2}));
    auto loss = mean_all(mul(x, x));
    backward(loss);
    Tensor once = x->grad();
    backward(loss);
    for (std::size_t i = 0; i < 3; ++i)
        REQUIRE(x->grad()[i] == Catch::Approx(2.0 * once[i]).epsilon(1e-15));
}

TEST_CASE("unreachable leaves keep zero gradient") {
    auto x = param(Tensor({2}, {1, 2}));
    auto y = param(Tensor({2}, {3, 4}));
    backward(sum_all(x));
    REQUIRE(y->grad()[0] == 0.0);
    REQUIRE(y->grad()[1] == 0.0);
}

TEST_CASE("composite chain matmul/relu/softmax/cross-entropy matches finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng = make_rng(500 + seed);
        std::uniform_int_distribution<std::size_t> dim(2, 8);
        const std::size_t b = dim(rng), d = dim(rng), c = dim(rng);
        Tensor X = random_off_kink({b, d}, rng);
        Tensor targets({b, c});
        for (std::size_t r = 0; r < b; ++r) {
            Tensor row = random_simplex(c, rng);
            for (std::size_t j = 0; j < c; ++j) targets.at(r, j) = row[j];
        }
        Tensor W = random_off_kink({d, c}, rng);

        double err = check_graph_gradient(
            [&](const NodePtr& leaf) {
                auto probs = softmax_rows(relu(matmul(constant(X), leaf)));
                return mean_all(soft_ce_rows(probs, targets));
            },
            W);
        REQUIRE(err <= 1e-4);
    }
}

TEST_CASE("elementwise and structural ops match finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng = make_rng(900 + seed);
        Tensor x = random_off_kink({3, 4}, rng);
        Tensor m = random_off_kink({3, 4}, rng);

        auto checks = {
            check_graph_gradient(
                [&](const NodePtr& l) { return sum_all(mul(relu(l), relu(l))); }, x),
            check_graph_gradient(
                [&](const NodePtr& l) { return sum_all(mul(tanh_op(l), constant(m))); }, x),
            check_graph_gradient(
                [&](const NodePtr& l) { return sum_all(mul(sigmoid(l), constant(m))); }, x),
            check_graph_gradient(
                [&](const NodePtr& l) { return sum_all(mul(l, constant(m))); }, x),
            check_graph_gradient(
                [&](const NodePtr& l) { return sum_all(mul(slice_cols(l, 1, 3),
                                                           slice_cols(l, 0, 2))); }, x),
            check_graph_gradient(
                [&](const NodePtr& l) {
                    return sum_all(mul(concat_cols({l, constant(m)}),
                                       concat_cols({constant(m), l})));
                },
                x),
        };
        for (double err : checks) REQUIRE(err <= 1e-4);

        Tensor bias = random_off_kink({4}, rng);
        REQUIRE(check_graph_gradient(
                    [&](const NodePtr& l) {
                        return sum_all(tanh_op(add_bias(constant(m), l)));
                    },
                    bias) <= 1e-4);
        REQUIRE(check_graph_gradient(
                    [&](const NodePtr& l) {
                        return sum_all(tanh_op(add_bias(l, constant(bias))));
                    },
                    m) <= 1e-4);
    }
}

TEST_CASE("normalization ops match finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng = make_rng(1300 + seed);
        Tensor losses = random_uniform({6}, 0.2, 2.0, rng);
        std::vector<int> groups = {0, 1, 0, 2, 1, 0};

        double err = check_graph_gradient(
            [&](const NodePtr& l) {
                auto cnl = div(l, clamp_min(group_mean_rows(l, groups), kLogClamp));
                return sum_all(mul(cnl, cnl));
            },
            losses);
        REQUIRE(err <= 1e-4);

        err = check_graph_gradient(
            [&](const NodePtr& l) {
                auto gnl = div(l, clamp_min(mean_all(l), kLogClamp));
                return sum_all(mul(gnl, gnl));
            },
            losses);
        REQUIRE(err <= 1e-4);

        Tensor logits = random_normal({4, 5}, 0.0, 1.5, rng);
        err = check_graph_gradient(
            [&](const NodePtr& l) { return sum_all(entropy_rows(softmax_rows(l))); },
            logits);
        REQUIRE(err <= 1e-4);

        std::vector<int> picks = {2, 0, 4, 1};
        err = check_graph_gradient(
            [&](const NodePtr& l) {
                auto p = softmax_rows(l);
                auto sel = select_col_per_row(p, picks);
                return sum_all(mul(sel, sel));
            },
            logits);
        REQUIRE(err <= 1e-4);
    }
}

TEST_CASE("rows_scale matches finite differences in both arguments") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng = make_rng(1700 + seed);
        Tensor dist = random_uniform({4, 3}, 0.1, 1.0, rng);
        Tensor w = random_uniform({4}, 0.2, 1.5, rng);

        double err = check_graph_gradient(
            [&](const NodePtr& l) {
                return sum_all(mul(rows_scale(constant(dist), l), constant(dist)));
            },
            w);
        REQUIRE(err <= 1e-4);

        err = check_graph_gradient(
            [&](const NodePtr& l) {
                return sum_all(mul(rows_scale(l, constant(w)), l));
            },
            dist);
        REQUIRE(err <= 1e-4);
    }
}

TEST_CASE("kl rows gradient matches finite differences through pred") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng = make_rng(2100 + seed);
        Tensor target({3, 4});
        for (std::size_t r = 0; r < 3; ++r) {
            Tensor row = random_simplex(4, rng);
            for (std::size_t j = 0; j < 4; ++j) target.at(r, j) = row[j];
        }
        Tensor logits = random_normal({3, 4}, 0.0, 1.0, rng);
        double err = check_graph_gradient(
            [&](const NodePtr& l) { return sum_all(kl_rows(target, softmax_rows(l))); },
            logits);
        REQUIRE(err <= 1e-4);
    }
}

TEST_CASE("virtual sgd step routes adjoints into the combination weights") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng = make_rng(2500 + seed);
        Tensor theta = random_normal({2, 3}, 0.0, 1.0, rng);
        std::vector<Tensor> basis;
        for (int k = 0; k < 4; ++k) basis.push_back(random_normal({2, 3}, 0.0, 1.0, rng));
        Tensor yhat = random_uniform({2, 2}, 0.1, 0.9, rng);
        const double alpha = 0.3;

        double err = check_graph_gradient(
            [&](const NodePtr& l) {
                auto stepped = virtual_sgd_step(theta, l, basis, alpha);
                return sum_all(mul(stepped, stepped));
            },
            yhat);
        REQUIRE(err <= 1e-4);
    }
}

TEST_CASE("finite difference harness self checks") {
    // smooth quadratic: error should be at noise floor
    auto sum_sq = [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data()) s += v * v;
        return s;
    };
    Tensor x({2}, {1.0, 2.0});
    Tensor grad({2}, {2.0, 4.0});
    REQUIRE(finite_difference_check(sum_sq, x, grad) <= 1e-8);

    // cross-entropy of softmax against a fixed target
    Rng rng = make_rng(42);
    Tensor z = random_normal({5}, 0.0, 1.0, rng);
    Tensor target = random_simplex(5, rng);
    double err = check_graph_gradient(
        [&](const NodePtr& l) { return sum_all(soft_ce_rows(softmax_rows(l), target)); }, z);
    REQUIRE(err <= 1e-4);

    // negative control: a deliberately wrong gradient must be flagged
    Tensor wrong({2}, {2.5, 4.0});
    REQUIRE(finite_difference_check(sum_sq, x, wrong) > 1e-2);
}
