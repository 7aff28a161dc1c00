#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"
#include "tmlc/baselines.hpp"

using namespace tmlc;

namespace {

struct Bench {
    NoisyDataset train;
    NoisyDataset test;
    std::vector<int> all;

    Bench(int per_class, double rate, std::uint64_t seed) {
        train = gen_blobs(3, per_class, 2, 0.5, seed);
        if (rate > 0)
            train = inject_noise(train,
                                 {.kind = NoiseKind::symmetric, .rate = rate, .seed = seed + 1});
        else
            train.noise = NoiseSpec{.kind = NoiseKind::symmetric, .rate = 0.0, .seed = seed + 1};
        test = gen_blobs(3, per_class / 2, 2, 0.5, seed + 2);
        all.resize(train.size());
        std::iota(all.begin(), all.end(), 0);
    }
};

OptimizerConfig sgd(double lr = 0.05) {
    return OptimizerConfig{.kind = OptimizerConfig::Kind::sgd_momentum,
                           .learning_rate = lr,
                           .momentum = 0.9};
}

} // namespace

TEST_CASE("baseline target construction endpoints") {
    Rng rng = make_rng(1);
    Tensor probs({3, 4});
    for (std::size_t r = 0; r < 3; ++r) {
        Tensor row = random_simplex(4, rng);
        for (std::size_t c = 0; c < 4; ++c) probs.at(r, c) = row[c];
    }
    std::vector<int> noisy = {2, 0, 3};

    Tensor ce = baseline_targets(MethodSpec{.kind = MethodKind::ce}, noisy, probs, 4);
    Tensor smooth0 = baseline_targets(
        MethodSpec{.kind = MethodKind::label_smoothing, .epsilon = 0.0}, noisy, probs, 4);
    Tensor boot1 = baseline_targets(
        MethodSpec{.kind = MethodKind::bootstrap, .lambda = 1.0}, noisy, probs, 4);
    for (std::size_t i = 0; i < ce.size(); ++i) {
        REQUIRE(ce[i] == smooth0[i]);
        REQUIRE(ce[i] == boot1[i]);
    }

    // lambda = 0: the target is the model's own prediction
    Tensor boot0 = baseline_targets(
        MethodSpec{.kind = MethodKind::bootstrap, .lambda = 0.0}, noisy, probs, 4);
    for (std::size_t i = 0; i < probs.size(); ++i) REQUIRE(boot0[i] == probs[i]);

    // smoothing floor
    Tensor smooth = baseline_targets(
        MethodSpec{.kind = MethodKind::label_smoothing, .epsilon = 0.2}, noisy, probs, 4);
    for (double v : smooth.data()) REQUIRE(v >= 0.05 - 1e-12);

    // bootstrap targets stay on the simplex
    Tensor boot = baseline_targets(
        MethodSpec{.kind = MethodKind::bootstrap, .lambda = 0.3}, noisy, probs, 4);
    for (std::size_t r = 0; r < 3; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 4; ++c) sum += boot.at(r, c);
        REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("reduction identities are bitwise on the run logs") {
    Bench bench(80, 0.4, 10);
    BaseModelState init = mlp_init({2, 8, 3}, 11);
    const int epochs = 5, batch = 32;
    const std::uint64_t seed = 12;

    TrainResult ce = run_ce(bench.train, bench.all, bench.test, init, sgd(), epochs, batch,
                            seed);
    TrainResult smooth = run_label_smoothing(bench.train, bench.all, bench.test, init, sgd(),
                                             0.0, epochs, batch, seed);
    Tensor identity = transition_matrix({.kind = NoiseKind::none}, 3);
    TrainResult fwd = run_forward_correction(bench.train, bench.all, bench.test, init, sgd(),
                                             identity, epochs, batch, seed);
    TrainResult boot = run_bootstrap(bench.train, bench.all, bench.test, init, sgd(), 1.0,
                                     epochs, batch, seed);

    const std::string ce_csv = ce.log.to_csv();
    REQUIRE(smooth.log.to_csv() == ce_csv);
    REQUIRE(fwd.log.to_csv() == ce_csv);
    REQUIRE(boot.log.to_csv() == ce_csv);

    TrainResult ce2 = run_ce(bench.train, bench.all, bench.test, init, sgd(), epochs, batch,
                             seed);
    REQUIRE(ce2.log.to_csv() == ce_csv); // determinism under rerun
}

TEST_CASE("clean training reaches the oracle bound; noisy training overfits noise") {
    Bench clean(400, 0.0, 20);
    BaseModelState init = mlp_init({2, 32, 3}, 21);
    TrainResult on_clean = run_ce(clean.train, clean.all, clean.test, init, sgd(), 60, 64, 22);
    REQUIRE(on_clean.log.rows.back().acc_test >= 0.95);

    Bench noisy(400, 0.4, 20); // same generator seed, corrupted labels
    TrainResult on_noisy = run_ce(noisy.train, noisy.all, noisy.test, init, sgd(), 60, 64, 22);
    REQUIRE(on_noisy.log.rows.back().acc_train_true <
            on_clean.log.rows.back().acc_train_true);
}

TEST_CASE("forward correction with the true matrix beats plain ce on average") {
    double ce_sum = 0.0, fwd_sum = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Bench bench(200, 0.4, 30 + seed * 7);
        Tensor q = transition_matrix(*bench.train.noise, 3);
        BaseModelState init = mlp_init({2, 16, 3}, 31 + seed);
        TrainResult ce = run_ce(bench.train, bench.all, bench.test, init, sgd(), 40, 64,
                                32 + seed);
        TrainResult fwd = run_forward_correction(bench.train, bench.all, bench.test, init,
                                                 sgd(), q, 40, 64, 32 + seed);
        ce_sum += ce.log.rows.back().acc_test;
        fwd_sum += fwd.log.rows.back().acc_test;
    }
    REQUIRE(fwd_sum / 5.0 >= ce_sum / 5.0);
}

TEST_CASE("corrected predictions through Q stay on the simplex") {
    Bench bench(40, 0.4, 40);
    Tensor q = transition_matrix(*bench.train.noise, 3);
    BaseModelState m = mlp_init({2, 8, 3}, 41);
    ForwardResult fr = forward_batch(m, bench.train.features);
    NodePtr mixed = matmul(constant(fr.probs), constant(q));
    for (std::size_t r = 0; r < mixed->value.rows(); ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            REQUIRE(mixed->value.at(r, c) >= 0.0);
            sum += mixed->value.at(r, c);
        }
        REQUIRE(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("bad transition matrices are rejected") {
    Bench bench(20, 0.4, 50);
    BaseModelState init = mlp_init({2, 4, 3}, 51);
    Tensor bad({3, 3}, {0.5, 0.5, 0.5, 0, 1, 0, 0, 0, 1});
    REQUIRE_THROWS_AS(run_forward_correction(bench.train, bench.all, bench.test, init, sgd(),
                                             bad, 2, 16, 52),
                      ConfigError);
}

TEST_CASE("all three ablations run end to end and emit complete logs") {
    NoisyDataset train = gen_blobs(3, 60, 2, 0.5, 60);
    train = inject_noise(train, {.kind = NoiseKind::symmetric, .rate = 0.4, .seed = 61});
    NoisyDataset test = gen_blobs(3, 30, 2, 0.5, 62);
    DataSplit split = split_support_query(train, 0.2, 63);

    MetaConfig mc;
    mc.epochs = 5;
    mc.warmup_epochs = 1;
    mc.batch_size = 32;
    mc.hidden_size = 4;
    mc.query_fraction = 0.2;

    for (Ablation ab : {Ablation::wo_nnp, Ablation::wo_tse, Ablation::wo_sd}) {
        TrainResult r = run_ablation(ab, train, split, test, mlp_init({2, 6, 3}, 64),
                                     sgd(), mc);
        REQUIRE(r.log.rows.size() == 5);
        for (const EpochRow& row : r.log.rows) {
            REQUIRE(std::isfinite(row.loss_base));
            REQUIRE(row.corrected_label_acc.has_value());
        }
    }
    REQUIRE_THROWS_AS(run_ablation(Ablation::none, train, split, test,
                                   mlp_init({2, 6, 3}, 64), sgd(), mc),
                      ConfigError);
}
