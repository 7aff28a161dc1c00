#pragma once

#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmlc/baselines.hpp"
#include "tmlc/dataset.hpp"
#include "tmlc/metaloop.hpp"

namespace tmlc {

inline void expect_keys(const nlohmann::json& j, const std::string& where,
                        std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
    }
}

// Component seeds derive from one master seed so a whole experiment replays
// from a single number.
enum class SeedRole : std::uint64_t {
    dataset = 0,
    noise = 1,
    model_init = 2,
    shuffle = 3,
    corrector = 4,
    query = 5,
    test_set = 6,
    split = 7,
};

inline std::uint64_t derive_seed(std::uint64_t master, SeedRole role) {
    return master * 10 + static_cast<std::uint64_t>(role);
}

// ---------------------------------------------------------------------------
// sections
// ---------------------------------------------------------------------------

struct DatasetConfig {
    std::string kind = "blobs"; // blobs | moons | rings | idx
    int classes = 3;
    int per_class = 1000;
    int dim = 2;
    double spread = 0.5;
    int n = 2000;          // moons/rings size
    double noise_std = 0.1; // moons jitter
    int test_per_class = 500;
    int test_n = 1000;
    std::string images, labels, test_images, test_labels; // idx paths

    static DatasetConfig from_json(const nlohmann::json& j) {
        expect_keys(j, "dataset",
                    {"kind", "classes", "per_class", "dim", "spread", "n", "noise_std",
                     "test_per_class", "test_n", "images", "labels", "test_images",
                     "test_labels"});
        DatasetConfig c;
        c.kind = j.value("kind", c.kind);
        if (c.kind != "blobs" && c.kind != "moons" && c.kind != "rings" && c.kind != "idx")
            throw ConfigError("dataset: unknown kind \"" + c.kind + "\"");
        c.classes = j.value("classes", c.classes);
        c.per_class = j.value("per_class", c.per_class);
        c.dim = j.value("dim", c.dim);
        c.spread = j.value("spread", c.spread);
        c.n = j.value("n", c.n);
        c.noise_std = j.value("noise_std", c.noise_std);
        c.test_per_class = j.value("test_per_class", c.test_per_class);
        c.test_n = j.value("test_n", c.test_n);
        c.images = j.value("images", c.images);
        c.labels = j.value("labels", c.labels);
        c.test_images = j.value("test_images", c.test_images);
        c.test_labels = j.value("test_labels", c.test_labels);
        return c;
    }

    nlohmann::json to_json() const {
        return {{"kind", kind},       {"classes", classes},
                {"per_class", per_class}, {"dim", dim},
                {"spread", spread},   {"n", n},
                {"noise_std", noise_std}, {"test_per_class", test_per_class},
                {"test_n", test_n},   {"images", images},
                {"labels", labels},   {"test_images", test_images},
                {"test_labels", test_labels}};
    }
};

struct NoiseConfig {
    NoiseKind kind = NoiseKind::symmetric;
    double rate = 0.4;
    std::vector<std::pair<int, int>> pairs;

    static NoiseConfig from_json(const nlohmann::json& j) {
        expect_keys(j, "noise", {"kind", "rate", "pairs"});
        NoiseConfig c;
        c.kind = noise_kind_from(j.value("kind", std::string("symmetric")));
        c.rate = j.value("rate", c.rate);
        if (j.contains("pairs"))
            for (const auto& p : j.at("pairs"))
                c.pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
        return c;
    }

    NoiseSpec to_spec(std::uint64_t seed) const {
        NoiseSpec s;
        s.kind = kind;
        s.rate = rate;
        s.seed = seed;
        for (auto [from, to] : pairs) s.pair_map[from] = to;
        return s;
    }

    nlohmann::json to_json() const {
        nlohmann::json jp = nlohmann::json::array();
        for (auto [from, to] : pairs) jp.push_back({from, to});
        return {{"kind", to_string(kind)}, {"rate", rate}, {"pairs", std::move(jp)}};
    }
};

struct ModelConfig {
    std::vector<std::size_t> hidden_layers{32};
    OptimizerConfig optimizer{.kind = OptimizerConfig::Kind::sgd_momentum,
                              .learning_rate = 0.05,
                              .momentum = 0.9};

    static ModelConfig from_json(const nlohmann::json& j) {
        expect_keys(j, "model", {"hidden_layers", "optimizer"});
        ModelConfig c;
        if (j.contains("hidden_layers"))
            c.hidden_layers = j.at("hidden_layers").get<std::vector<std::size_t>>();
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            expect_keys(o, "model.optimizer",
                        {"kind", "learning_rate", "momentum", "beta1", "beta2", "eps",
                         "decay_milestones", "decay_factor"});
            const std::string kind = o.value("kind", std::string("sgd_momentum"));
            if (kind == "sgd_momentum")
                c.optimizer.kind = OptimizerConfig::Kind::sgd_momentum;
            else if (kind == "adam")
                c.optimizer.kind = OptimizerConfig::Kind::adam;
            else
                throw ConfigError("optimizer: unknown kind \"" + kind + "\"");
            c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
            c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
            c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
            c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
            c.optimizer.eps = o.value("eps", c.optimizer.eps);
            if (o.contains("decay_milestones"))
                c.optimizer.decay_milestones =
                    o.at("decay_milestones").get<std::vector<int>>();
            c.optimizer.decay_factor = o.value("decay_factor", c.optimizer.decay_factor);
        }
        c.optimizer.validate();
        return c;
    }

    nlohmann::json to_json() const {
        nlohmann::json o;
        o["kind"] = optimizer.kind == OptimizerConfig::Kind::adam ? "adam" : "sgd_momentum";
        o["learning_rate"] = optimizer.learning_rate;
        o["momentum"] = optimizer.momentum;
        o["beta1"] = optimizer.beta1;
        o["beta2"] = optimizer.beta2;
        o["eps"] = optimizer.eps;
        o["decay_milestones"] = optimizer.decay_milestones;
        o["decay_factor"] = optimizer.decay_factor;
        return {{"hidden_layers", hidden_layers}, {"optimizer", std::move(o)}};
    }
};

struct MethodConfig {
    MethodKind kind = MethodKind::tmlc;
    double epsilon = 0.1;
    double lambda = 0.8;
    std::string q_source = "true"; // true | identity

    bool is_tmlc() const { return MethodSpec{.kind = kind}.is_tmlc(); }
    Ablation ablation() const { return MethodSpec{.kind = kind}.ablation(); }

    static MethodConfig from_json(const nlohmann::json& j) {
        expect_keys(j, "method", {"kind", "epsilon", "lambda", "q_source"});
        MethodConfig c;
        c.kind = method_kind_from(j.value("kind", std::string("tmlc")));
        c.epsilon = j.value("epsilon", c.epsilon);
        c.lambda = j.value("lambda", c.lambda);
        c.q_source = j.value("q_source", c.q_source);
        if (c.q_source != "true" && c.q_source != "identity")
            throw ConfigError("method: q_source must be \"true\" or \"identity\"");
        return c;
    }

    nlohmann::json to_json() const {
        return {{"kind", to_string(kind)},
                {"epsilon", epsilon},
                {"lambda", lambda},
                {"q_source", q_source}};
    }
};

inline MetaConfig meta_config_from_json(const nlohmann::json& j) {
    expect_keys(j, "meta",
                {"epochs", "outer_lr", "epsilon", "t_val", "warmup_epochs",
                 "snapshot_fractions", "query_fraction", "batch_size", "hidden_size",
                 "mode", "supervision", "lookahead", "include_raw_features",
                 "history_depth", "dynamics_export_path", "test_epochs"});
    MetaConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.outer_lr = j.value("outer_lr", c.outer_lr);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.t_val = j.value("t_val", c.t_val);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    if (j.contains("snapshot_fractions"))
        c.snapshot_fractions = j.at("snapshot_fractions").get<std::vector<double>>();
    c.query_fraction = j.value("query_fraction", c.query_fraction);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.hidden_size = j.value("hidden_size", c.hidden_size);
    c.mode = feature_mode_from(j.value("mode", std::string("standard")));
    c.supervision =
        meta_supervision_from(j.value("supervision", std::string("softened_noisy")));
    c.lookahead = j.value("lookahead", c.lookahead);
    c.include_raw_features = j.value("include_raw_features", c.include_raw_features);
    c.history_depth = j.value("history_depth", c.history_depth);
    c.dynamics_export_path = j.value("dynamics_export_path", c.dynamics_export_path);
    c.validate();
    return c;
}

inline nlohmann::json meta_config_to_json(const MetaConfig& c) {
    return {{"epochs", c.epochs},
            {"outer_lr", c.outer_lr},
            {"epsilon", c.epsilon},
            {"t_val", c.t_val},
            {"warmup_epochs", c.warmup_epochs},
            {"snapshot_fractions", c.snapshot_fractions},
            {"query_fraction", c.query_fraction},
            {"batch_size", c.batch_size},
            {"hidden_size", c.hidden_size},
            {"mode", to_string(c.mode)},
            {"supervision", to_string(c.supervision)},
            {"lookahead", c.lookahead},
            {"include_raw_features", c.include_raw_features},
            {"history_depth", c.history_depth},
            {"dynamics_export_path", c.dynamics_export_path}};
}

// One dataset+noise variation inside a transfer grid.
struct TaskVariant {
    std::string name;
    DatasetConfig dataset;
    NoiseConfig noise;

    static TaskVariant from_json(const nlohmann::json& j, const std::string& where) {
        expect_keys(j, where, {"name", "dataset", "noise"});
        TaskVariant v;
        v.name = j.at("name").get<std::string>();
        v.dataset = DatasetConfig::from_json(j.at("dataset"));
        if (j.contains("noise")) v.noise = NoiseConfig::from_json(j.at("noise"));
        return v;
    }

    nlohmann::json to_json() const {
        return {{"name", name}, {"dataset", dataset.to_json()}, {"noise", noise.to_json()}};
    }
};

// ---------------------------------------------------------------------------
// top level
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::string name = "experiment";
    DatasetConfig dataset;
    NoiseConfig noise;
    ModelConfig model;
    MethodConfig method;
    MetaConfig meta;
    int test_epochs = 0; // meta-test length; 0 means meta.epochs
    std::vector<std::uint64_t> seeds{1};
    std::string output_dir = "out";
    std::vector<TaskVariant> sources, targets; // transfer grids only

    static ExperimentConfig from_json(const nlohmann::json& j) {
        expect_keys(j, "config",
                    {"name", "dataset", "noise", "model", "method", "meta", "test_epochs",
                     "seeds", "output_dir", "sources", "targets"});
        ExperimentConfig c;
        c.name = j.value("name", c.name);
        if (j.contains("dataset")) c.dataset = DatasetConfig::from_json(j.at("dataset"));
        if (j.contains("noise")) c.noise = NoiseConfig::from_json(j.at("noise"));
        if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
        if (j.contains("method")) c.method = MethodConfig::from_json(j.at("method"));
        if (j.contains("meta")) c.meta = meta_config_from_json(j.at("meta"));
        c.test_epochs = j.value("test_epochs", c.test_epochs);
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (c.seeds.empty()) throw ConfigError("config: seeds must be nonempty");
        c.output_dir = j.value("output_dir", c.output_dir);
        if (j.contains("sources"))
            for (const auto& s : j.at("sources"))
                c.sources.push_back(TaskVariant::from_json(s, "sources"));
        if (j.contains("targets"))
            for (const auto& t : j.at("targets"))
                c.targets.push_back(TaskVariant::from_json(t, "targets"));
        return c;
    }

    static ExperimentConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config file not found: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config " + path + ": invalid JSON: " + e.what());
        }
        return from_json(j);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["name"] = name;
        j["dataset"] = dataset.to_json();
        j["noise"] = noise.to_json();
        j["model"] = model.to_json();
        j["method"] = method.to_json();
        j["meta"] = meta_config_to_json(meta);
        j["test_epochs"] = test_epochs;
        j["seeds"] = seeds;
        j["output_dir"] = output_dir;
        nlohmann::json src = nlohmann::json::array(), tgt = nlohmann::json::array();
        for (const auto& s : sources) src.push_back(s.to_json());
        for (const auto& t : targets) tgt.push_back(t.to_json());
        j["sources"] = std::move(src);
        j["targets"] = std::move(tgt);
        return j;
    }

    std::uint64_t config_hash() const {
        const std::string dump = to_json().dump();
        std::uint64_t hash = 1469598103934665603ULL;
        for (unsigned char b : dump) {
            hash ^= b;
            hash *= 1099511628211ULL;
        }
        return hash;
    }
};

} // namespace tmlc
