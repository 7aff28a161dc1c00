#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tmlc/corrector.hpp"
#include "tmlc/gradcheck.hpp"
#include "tmlc/rng.hpp"

using namespace tmlc;

namespace {

CorrectorParams zero_corrector(FeatureMode mode, int hidden, int num_classes) {
    CorrectorParams p = corrector_init(mode, hidden, num_classes, 1);
    for (Tensor* t : p.param_list()) t->fill(0.0);
    return p;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// A small batch of plausible inputs for pipeline tests.
struct PipelineFixture {
    Tensor probs;
    Tensor losses;
    std::vector<int> noisy = {0, 1, 2, 1};
    Tensor targets;

    explicit PipelineFixture(std::uint64_t seed) {
        Rng rng = make_rng(seed);
        probs = Tensor({4, 3});
        targets = Tensor({4, 3});
        for (std::size_t r = 0; r < 4; ++r) {
            Tensor row = random_simplex(3, rng);
            Tensor trow = random_simplex(3, rng);
            for (std::size_t c = 0; c < 3; ++c) {
                probs.at(r, c) = row[c];
                targets.at(r, c) = trow[c];
            }
        }
        losses = random_uniform({4}, 0.2, 2.5, rng);
    }
};

} // namespace

TEST_CASE("zero weights and zero state give a zero next state") {
    CorrectorParams p = zero_corrector(FeatureMode::standard, 3, 2);
    Tensor f({static_cast<std::size_t>(p.feature_width)}, {0.5, 1.0, 0.3, 1.0, 0.0});
    RecurrentState s{Tensor({3}), Tensor({3})};
    RecurrentState next = lstm_step(f, s, p);
    for (std::size_t k = 0; k < 3; ++k) {
        REQUIRE(next.h[k] == 0.0); // gates sit at 0.5, candidate at 0
        REQUIRE(next.c[k] == 0.0);
    }
}

TEST_CASE("scalar cell matches a hand-computed step") {
    CorrectorParams p;
    p.mode = FeatureMode::standard;
    p.hidden_size = 1;
    p.feature_width = 2;
    p.c_out = 2;
    p.w_x = Tensor({2, 4}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
    p.u_h = Tensor({1, 4}, {-0.1, 0.2, -0.3, 0.4});
    p.b_g = Tensor({4}, {0.01, 0.02, 0.03, 0.04});
    p.w1 = Tensor({1, 1}, {1.0});
    p.b1 = Tensor({1});
    p.w2 = Tensor({1, 2}, {1.0, -1.0});
    p.b2 = Tensor({2});

    const double f0 = 1.0, f1 = -0.5, h0 = 0.3, c0 = -0.2;
    RecurrentState next =
        lstm_step(Tensor({2}, {f0, f1}), {Tensor({1}, {h0}), Tensor({1}, {c0})}, p);

    // independent scalar route
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    const double gi = sig(f0 * 0.1 + f1 * 0.5 + h0 * -0.1 + 0.01);
    const double gf = sig(f0 * 0.2 + f1 * 0.6 + h0 * 0.2 + 0.02);
    const double go = sig(f0 * 0.3 + f1 * 0.7 + h0 * -0.3 + 0.03);
    const double gu = std::tanh(f0 * 0.4 + f1 * 0.8 + h0 * 0.4 + 0.04);
    const double c1 = gf * c0 + gi * gu;
    const double h1 = go * std::tanh(c1);

    REQUIRE(next.c[0] == Catch::Approx(c1).epsilon(1e-14));
    REQUIRE(next.h[0] == Catch::Approx(h1).epsilon(1e-14));
}

TEST_CASE("lstm step rejects width mismatches") {
    CorrectorParams p = corrector_init(FeatureMode::standard, 4, 3, 2);
    RecurrentState s{Tensor({4}), Tensor({4})};
    REQUIRE_THROWS_AS(lstm_step(Tensor({3}), s, p), DimensionError);
}

TEST_CASE("lstm gradients match finite differences for every weight") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CorrectorParams p = corrector_init(FeatureMode::standard, 3, 2, 100 + seed);
        Rng rng = make_rng(200 + seed);
        Tensor f = random_normal({4, static_cast<std::size_t>(p.feature_width)}, 0.0, 1.0, rng);
        Tensor h0 = random_uniform({4, 3}, -0.5, 0.5, rng);
        Tensor c0 = random_uniform({4, 3}, -0.5, 0.5, rng);

        auto names = p.param_names();
        auto tensors = p.param_list();
        for (std::size_t k = 0; k < tensors.size(); ++k) {
            auto run = [&](const CorrectorParams& params) {
                CorrectorNodes pn = corrector_param_nodes(params);
                auto [h1, c1] =
                    lstm_step_nodes(params, pn, constant(f), constant(h0), constant(c0));
                return sum_all(mul(add(h1, c1), add(h1, c1)));
            };
            CorrectorNodes pn = corrector_param_nodes(p);
            auto [h1, c1] = lstm_step_nodes(p, pn, constant(f), constant(h0), constant(c0));
            backward(sum_all(mul(add(h1, c1), add(h1, c1))));
            Tensor analytic = pn.all(false)[k]->grad();

            auto eval = [&](const Tensor& probe) {
                CorrectorParams copy = p;
                *copy.param_list()[k] = probe;
                return run(copy)->value[0];
            };
            REQUIRE(finite_difference_check(eval, *tensors[k], analytic) <= 1e-4);
        }
    }
}

TEST_CASE("zero-weight decoder emits the uniform distribution, ties break low") {
    CorrectorParams p = zero_corrector(FeatureMode::standard, 4, 5);
    Rng rng = make_rng(3);
    Tensor h = random_uniform({4}, -0.9, 0.9, rng);
    Tensor y = decode(h, p);
    for (std::size_t c = 0; c < 5; ++c) REQUIRE(y[c] == Catch::Approx(0.2).margin(1e-12));
    REQUIRE(argmax_row(y.data()) == 0);
}

TEST_CASE("decode output stays on the simplex for random hidden states") {
    CorrectorParams p = corrector_init(FeatureMode::standard, 8, 4, 5);
    Rng rng = make_rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor h = random_uniform({8}, -0.99, 0.99, rng);
        Tensor y = decode(h, p);
        double sum = 0.0;
        for (double v : y.data()) {
            REQUIRE(v >= 0.0);
            sum += v;
        }
        REQUIRE(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("decode refuses agnostic-mode parameters") {
    CorrectorParams p = corrector_init(FeatureMode::agnostic, 4, 3, 7);
    REQUIRE_THROWS_AS(decode(Tensor({4}), p), ContractError);

    CorrectorParams std_p = corrector_init(FeatureMode::standard, 4, 3, 7);
    REQUIRE_THROWS_AS(decode_mixing(Tensor({4}), std_p, Tensor({1, 3}), Tensor({1, 3}),
                                    Tensor({1, 3})),
                      ContractError);
}

TEST_CASE("mixing decoder: zero weights average the three distributions") {
    CorrectorParams p = zero_corrector(FeatureMode::agnostic, 4, 3);
    Tensor onehot({1, 3}, {1, 0, 0});
    Tensor now({1, 3}, {0.2, 0.5, 0.3});
    Tensor prev({1, 3}, {0.1, 0.1, 0.8});
    Tensor y = decode_mixing(Tensor({4}), p, onehot, now, prev);
    for (std::size_t c = 0; c < 3; ++c)
        REQUIRE(y[c] == Catch::Approx((onehot[c] + now[c] + prev[c]) / 3.0).epsilon(1e-12));
}

TEST_CASE("mixing decoder saturates to the noisy label at the w1 endpoint") {
    CorrectorParams p = zero_corrector(FeatureMode::agnostic, 4, 3);
    p.b2 = Tensor({3}, {50.0, 0.0, 0.0}); // softmax weight ~1 on the label route
    Tensor onehot({1, 3}, {0, 1, 0});
    Tensor now({1, 3}, {0.2, 0.5, 0.3});
    Tensor prev = Tensor::full({1, 3}, 1.0 / 3.0);
    Tensor y = decode_mixing(Tensor({4}), p, onehot, now, prev);
    REQUIRE(y[1] == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("mixing decoder output is a convex combination") {
    CorrectorParams p = corrector_init(FeatureMode::agnostic, 4, 4, 9);
    Rng rng = make_rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor h = random_uniform({1, 4}, -0.9, 0.9, rng);
        // all three distributions assign zero to class 3
        auto padded = [&] {
            Tensor row = random_simplex(3, rng);
            Tensor out({1, 4});
            for (std::size_t c = 0; c < 3; ++c) out.at(0, c) = row[c];
            return out;
        };
        Tensor onehot({1, 4});
        onehot.at(0, trial % 3) = 1.0;
        Tensor now = padded(), prev = padded();
        Tensor y = decode_mixing(h, p, onehot, now, prev);
        double sum = 0.0;
        for (double v : y.data()) {
            REQUIRE(v >= 0.0);
            sum += v;
        }
        REQUIRE(std::abs(sum - 1.0) <= 1e-9);
        REQUIRE(y[3] == 0.0);
    }
}

TEST_CASE("untrained corrector yields uniform corrections; the store advances them") {
    PipelineFixture fx(11);
    CorrectorParams zero = zero_corrector(FeatureMode::standard, 4, 3);
    DynamicsStore store(10, 4, 3);
    std::vector<int> idx = {0, 1, 2, 3};
    Tensor y = correct_batch(fx.probs, fx.losses, fx.noisy, idx, store, zero);
    for (std::size_t i = 0; i < y.size(); ++i)
        REQUIRE(y[i] == Catch::Approx(1.0 / 3.0).margin(1e-12));

    CorrectorParams p = corrector_init(FeatureMode::standard, 4, 3, 12);
    DynamicsStore store2(10, 4, 3);
    Tensor y1 = correct_batch(fx.probs, fx.losses, fx.noisy, idx, store2, p);
    Tensor y2 = correct_batch(fx.probs, fx.losses, fx.noisy, idx, store2, p);
    double diff = 0.0;
    for (std::size_t i = 0; i < y1.size(); ++i) diff += std::abs(y1[i] - y2[i]);
    REQUIRE(diff > 1e-9); // same inputs, advanced state, different output
}

TEST_CASE("hidden state magnitudes stay strictly below one") {
    CorrectorParams p = corrector_init(FeatureMode::standard, 6, 3, 13);
    for (Tensor* t : p.param_list())
        for (auto& v : t->data()) v *= 5.0; // exaggerate to push the gates
    DynamicsStore store(4, 6, 3);
    PipelineFixture fx(14);
    std::vector<int> idx = {0, 1, 2, 3};
    for (int step = 0; step < 30; ++step)
        correct_batch(fx.probs, fx.losses, fx.noisy, idx, store, p);
    for (int i : idx) {
        RecurrentState s = store.get(i);
        for (std::size_t k = 0; k < 6; ++k) REQUIRE(std::abs(s.h[k]) < 1.0);
    }
}

TEST_CASE("pipeline gradient matches finite differences on a 4-sample batch") {
    for (auto mode : {FeatureMode::standard, FeatureMode::agnostic}) {
        PipelineFixture fx(15);
        CorrectorParams p = corrector_init(mode, 4, 3, 16);
        Rng rng = make_rng(17);
        Tensor h0 = random_uniform({4, 4}, -0.5, 0.5, rng);
        Tensor c0 = random_uniform({4, 4}, -0.5, 0.5, rng);
        Tensor prev = Tensor::full({4, 3}, 1.0 / 3.0);

        auto loss_value = [&](const CorrectorParams& params) {
            CorrectionGraph g =
                correct_batch_nodes(params, constant(fx.probs), constant(fx.losses), fx.noisy,
                                    3, h0, c0, prev);
            return sum_all(kl_rows(fx.targets, g.yhat));
        };

        CorrectionGraph g = correct_batch_nodes(p, constant(fx.probs), constant(fx.losses),
                                                fx.noisy, 3, h0, c0, prev);
        backward(sum_all(kl_rows(fx.targets, g.yhat)));
        auto nodes = g.pn.all(p.ff_stub);
        auto tensors = p.param_list();
        for (std::size_t k = 0; k < tensors.size(); ++k) {
            Tensor analytic = nodes[k]->grad();
            auto eval = [&](const Tensor& probe) {
                CorrectorParams copy = p;
                *copy.param_list()[k] = probe;
                return loss_value(copy)->value[0];
            };
            REQUIRE(finite_difference_check(eval, *tensors[k], analytic) <= 1e-4);
        }
    }
}

TEST_CASE("feed-forward stub ignores epoch ordering") {
    PipelineFixture fx(18);
    CorrectorParams p = corrector_init(FeatureMode::standard, 4, 3, 19, Ablation::wo_tse);
    DynamicsStore s1(4, 4, 3), s2(4, 4, 3);
    std::vector<int> idx = {0, 1, 2, 3};
    // push unrelated history into s2 before the real batch
    PipelineFixture other(20);
    correct_batch(other.probs, other.losses, other.noisy, idx, s2, p);
    Tensor y1 = correct_batch(fx.probs, fx.losses, fx.noisy, idx, s1, p);
    Tensor y2 = correct_batch(fx.probs, fx.losses, fx.noisy, idx, s2, p);
    for (std::size_t i = 0; i < y1.size(); ++i) REQUIRE(y1[i] == y2[i]);
}

TEST_CASE("raw-loss corrector carries its feature layout through snapshots") {
    CorrectorParams p = corrector_init(FeatureMode::standard, 4, 3, 24, Ablation::wo_nnp);
    REQUIRE(p.feature_width == 5);
    nlohmann::json j = snapshot_to_json(p);
    CorrectorParams back = snapshot_from_json(j);
    REQUIRE(back.raw_loss_features);
    REQUIRE(back.feature_width == 5);
    REQUIRE_NOTHROW(check_snapshot_compatible(back, 3));
}

TEST_CASE("snapshots round trip byte for byte with metadata") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "tmlc_snap_test";
    fs::create_directories(dir);
    const std::string path1 = (dir / "a.json").string();
    const std::string path2 = (dir / "b.json").string();

    CorrectorParams p = corrector_init(FeatureMode::standard, 5, 3, 21);
    p.epoch_tag = 40;
    snapshot_save(p, path1);
    CorrectorParams loaded = snapshot_load(path1);
    REQUIRE(loaded.epoch_tag == 40);
    REQUIRE(loaded.hidden_size == 5);
    REQUIRE(loaded.mode == FeatureMode::standard);
    snapshot_save(loaded, path2);
    REQUIRE(slurp(path1) == slurp(path2));
    REQUIRE(fingerprint(loaded) == fingerprint(p));

    // corrupt one parameter array: the error names the field
    nlohmann::json j = snapshot_to_json(p);
    j["params"]["w1"].erase(0);
    try {
        snapshot_from_json(j);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        REQUIRE(std::string(e.what()).find("w1") != std::string::npos);
    }

    nlohmann::json bad_version = snapshot_to_json(p);
    bad_version["version"] = 2;
    REQUIRE_THROWS_AS(snapshot_from_json(bad_version), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("snapshot compatibility: standard pins C, agnostic travels") {
    CorrectorParams std_p = corrector_init(FeatureMode::standard, 4, 3, 22);
    REQUIRE_NOTHROW(check_snapshot_compatible(std_p, 3));
    REQUIRE_THROWS_AS(check_snapshot_compatible(std_p, 5), FormatError);

    CorrectorParams agn = corrector_init(FeatureMode::agnostic, 4, 3, 23);
    REQUIRE_NOTHROW(check_snapshot_compatible(agn, 3));
    REQUIRE_NOTHROW(check_snapshot_compatible(agn, 17));
}
