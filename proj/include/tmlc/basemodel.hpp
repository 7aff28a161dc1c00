#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmlc/errors.hpp"
#include "tmlc/graph.hpp"
#include "tmlc/rng.hpp"
#include "tmlc/tensor.hpp"

namespace tmlc {

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

// Fully connected classifier with ReLU hidden layers and softmax output.
struct BaseModelState {
    std::vector<std::size_t> layer_sizes;
    std::vector<Tensor> weights; // layer l: [in x out]
    std::vector<Tensor> biases;  // layer l: [out]

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t num_classes() const { return layer_sizes.back(); }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.push_back(&weights[l]);
            out.push_back(&biases[l]);
        }
        return out;
    }
};

// Glorot-uniform weights, zero biases.
inline BaseModelState mlp_init(std::vector<std::size_t> layer_sizes, std::uint64_t seed) {
    if (layer_sizes.size() < 2)
        throw ConfigError("mlp_init: need at least input and output layers");
    for (auto w : layer_sizes)
        if (w == 0) throw ConfigError("mlp_init: zero-width layer");
    BaseModelState m;
    m.layer_sizes = std::move(layer_sizes);
    Rng rng = make_rng(seed);
    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
        const std::size_t fan_in = m.layer_sizes[l], fan_out = m.layer_sizes[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        m.weights.push_back(random_uniform({fan_in, fan_out}, -bound, bound, rng));
        m.biases.push_back(Tensor({fan_out}));
    }
    return m;
}

// Forward over caller-supplied parameter nodes; lets the meta loop route a
// virtual parameter step through the graph.
inline std::pair<NodePtr, NodePtr> mlp_forward_nodes(const std::vector<NodePtr>& weights,
                                                     const std::vector<NodePtr>& biases,
                                                     const NodePtr& x) {
    if (x->value.cols() != weights.front()->value.rows())
        throw DimensionError("forward: input " + x->value.shape_str() + " vs first layer " +
                             weights.front()->value.shape_str());
    NodePtr h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        h = add_bias(matmul(h, weights[l]), biases[l]);
        if (l + 1 < weights.size()) h = relu(h);
    }
    return {h, softmax_rows(h)};
}

struct ModelGraph {
    std::vector<NodePtr> weights, biases;
    NodePtr logits, probs;
};

inline ModelGraph forward_graph(const BaseModelState& m, const Tensor& x) {
    ModelGraph g;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        g.weights.push_back(param(m.weights[l], "w" + std::to_string(l)));
        g.biases.push_back(param(m.biases[l], "b" + std::to_string(l)));
    }
    auto [logits, probs] = mlp_forward_nodes(g.weights, g.biases, constant(x));
    g.logits = std::move(logits);
    g.probs = std::move(probs);
    return g;
}

struct ForwardResult {
    Tensor logits;
    Tensor probs;
};

inline ForwardResult forward_batch(const BaseModelState& m, const Tensor& x) {
    ModelGraph g = forward_graph(m, x);
    return {g.logits->value, g.probs->value};
}

// l_i = soft cross-entropy of row i; the batch mean of this vector is the
// training loss, computed from the same graph node during optimization.
inline Tensor per_sample_losses(const Tensor& probs, const Tensor& targets) {
    return soft_ce_rows(constant(probs), targets)->value;
}

// ---------------------------------------------------------------------------
// optimizers
// ---------------------------------------------------------------------------

struct OptimizerConfig {
    enum class Kind { sgd_momentum, adam };
    Kind kind = Kind::sgd_momentum;
    double learning_rate = 0.1;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<int> decay_milestones; // lr multiplies by decay_factor after each
    double decay_factor = 0.1;

    void validate() const {
        if (learning_rate <= 0.0) throw ConfigError("learning rate must be > 0");
        if (decay_factor <= 0.0) throw ConfigError("decay factor must be > 0");
    }
};

// Stateful first-order optimizer over an arbitrary parameter list. Buffers are
// keyed by position, so the parameter list must be stable across steps.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    // epoch is 1-based; the schedule multiplies lr by decay_factor after each
    // milestone epoch has completed.
    void begin_epoch(int epoch) {
        lr_scale_ = 1.0;
        for (int m : cfg_.decay_milestones)
            if (epoch > m) lr_scale_ *= cfg_.decay_factor;
    }

    double current_lr() const { return cfg_.learning_rate * lr_scale_; }
    const OptimizerConfig& config() const { return cfg_; }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        if (params.size() != grads.size())
            throw DimensionError("optimizer step: " + std::to_string(params.size()) +
                                 " params vs " + std::to_string(grads.size()) + " grads");
        if (slot1_.empty()) {
            for (auto* p : params) slot1_.push_back(Tensor::zeros(p->shape()));
            if (cfg_.kind == OptimizerConfig::Kind::adam)
                for (auto* p : params) slot2_.push_back(Tensor::zeros(p->shape()));
        }
        for (const Tensor& g : grads)
            if (!g.all_finite())
                throw TrainingError("non-finite gradient encountered; training aborted");

        const double lr = current_lr();
        ++step_count_;
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor& p = *params[k];
            const Tensor& g = grads[k];
            if (!p.same_shape(g))
                throw DimensionError("optimizer step: param " + p.shape_str() + " vs grad " +
                                     g.shape_str());
            if (cfg_.kind == OptimizerConfig::Kind::sgd_momentum) {
                Tensor& v = slot1_[k];
                for (std::size_t i = 0; i < p.size(); ++i) {
                    v[i] = cfg_.momentum * v[i] + g[i];
                    p[i] -= lr * v[i];
                }
            } else {
                Tensor& m = slot1_[k];
                Tensor& v = slot2_[k];
                const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
                const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
                for (std::size_t i = 0; i < p.size(); ++i) {
                    m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                    v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
                }
            }
        }
    }

private:
    OptimizerConfig cfg_;
    double lr_scale_ = 1.0;
    std::vector<Tensor> slot1_; // momentum velocity / adam first moment
    std::vector<Tensor> slot2_; // adam second moment
    long step_count_ = 0;
};

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json model_to_json(const BaseModelState& m) {
    nlohmann::json j;
    j["version"] = 1;
    j["layer_sizes"] = m.layer_sizes;
    nlohmann::json params = nlohmann::json::object();
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        params["w" + std::to_string(l)] =
            std::vector<double>(m.weights[l].data().begin(), m.weights[l].data().end());
        params["b" + std::to_string(l)] =
            std::vector<double>(m.biases[l].data().begin(), m.biases[l].data().end());
    }
    j["params"] = std::move(params);
    return j;
}

inline BaseModelState model_from_json(const nlohmann::json& j) {
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw FormatError("model checkpoint: unsupported version");
    BaseModelState m;
    m.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    if (m.layer_sizes.size() < 2) throw FormatError("model checkpoint: bad layer_sizes");
    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
        auto w = j.at("params").at("w" + std::to_string(l)).get<std::vector<double>>();
        auto b = j.at("params").at("b" + std::to_string(l)).get<std::vector<double>>();
        if (w.size() != m.layer_sizes[l] * m.layer_sizes[l + 1] ||
            b.size() != m.layer_sizes[l + 1])
            throw FormatError("model checkpoint: parameter size mismatch at layer " +
                              std::to_string(l));
        m.weights.emplace_back(
            std::vector<std::size_t>{m.layer_sizes[l], m.layer_sizes[l + 1]}, std::move(w));
        m.biases.emplace_back(std::vector<std::size_t>{m.layer_sizes[l + 1]}, std::move(b));
    }
    return m;
}

} // namespace tmlc
