#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmlc/dynamics.hpp"
#include "tmlc/errors.hpp"
#include "tmlc/graph.hpp"
#include "tmlc/rng.hpp"
#include "tmlc/tensor.hpp"

namespace tmlc {

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

// The label corrector: one LSTM cell over per-epoch dynamics features plus a
// two-layer decoder. In standard mode the decoder emits a distribution over
// the task's classes; in agnostic mode it emits three mixing weights over
// {noisy one-hot, current prediction, previous prediction}.
struct CorrectorParams {
    FeatureMode mode = FeatureMode::standard;
    bool ff_stub = false;              // wo_tse: stateless encoder
    bool raw_loss_features = false;    // wo_nnp: [loss, PE, NLO] feature layout
    bool include_raw_features = false; // decoder sees [features; h] instead of h
    int hidden_size = 64;
    int feature_width = 0;
    int c_out = 0;
    int epoch_tag = 0;

    Ablation feature_ablation() const {
        return raw_loss_features ? Ablation::wo_nnp : Ablation::none;
    }

    // gate order [input, forget, output, candidate]; ff_stub uses w_x/b_g only
    Tensor w_x; // F x 4H (F x H when ff_stub)
    Tensor u_h; // H x 4H (empty when ff_stub)
    Tensor b_g; // 4H     (H when ff_stub)
    Tensor w1;  // (H [+F]) x H
    Tensor b1;  // H
    Tensor w2;  // H x c_out
    Tensor b2;  // c_out

    std::vector<const Tensor*> param_list() const {
        if (ff_stub) return {&w_x, &b_g, &w1, &b1, &w2, &b2};
        return {&w_x, &u_h, &b_g, &w1, &b1, &w2, &b2};
    }
    std::vector<Tensor*> param_list() {
        if (ff_stub) return {&w_x, &b_g, &w1, &b1, &w2, &b2};
        return {&w_x, &u_h, &b_g, &w1, &b1, &w2, &b2};
    }
    std::vector<std::string> param_names() const {
        if (ff_stub) return {"w_x", "b_g", "w1", "b1", "w2", "b2"};
        return {"w_x", "u_h", "b_g", "w1", "b1", "w2", "b2"};
    }
};

inline CorrectorParams corrector_init(FeatureMode mode, int hidden, int num_classes,
                                      std::uint64_t seed, Ablation ab = Ablation::none,
                                      bool include_raw_features = false) {
    if (hidden < 1) throw ConfigError("corrector: hidden size must be >= 1");
    CorrectorParams p;
    p.mode = mode;
    p.ff_stub = ab == Ablation::wo_tse;
    p.raw_loss_features = ab == Ablation::wo_nnp;
    p.include_raw_features = include_raw_features;
    p.hidden_size = hidden;
    p.feature_width = static_cast<int>(feature_width(mode, num_classes, p.feature_ablation()));
    p.c_out = mode == FeatureMode::agnostic ? 3 : num_classes;

    Rng rng = make_rng(seed);
    auto glorot = [&rng](std::size_t in, std::size_t out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        return random_uniform({in, out}, -bound, bound, rng);
    };
    const auto h = static_cast<std::size_t>(hidden);
    const auto f = static_cast<std::size_t>(p.feature_width);
    if (p.ff_stub) {
        p.w_x = glorot(f, h);
        p.b_g = Tensor({h});
    } else {
        p.w_x = glorot(f, 4 * h);
        p.u_h = glorot(h, 4 * h);
        p.b_g = Tensor({4 * h});
    }
    const std::size_t dec_in = h + (include_raw_features ? f : 0);
    p.w1 = glorot(dec_in, h);
    p.b1 = Tensor({h});
    p.w2 = glorot(h, static_cast<std::size_t>(p.c_out));
    p.b2 = Tensor({static_cast<std::size_t>(p.c_out)});
    return p;
}

// Leaf nodes over a parameter set; built once per outer step.
struct CorrectorNodes {
    NodePtr w_x, u_h, b_g, w1, b1, w2, b2;

    std::vector<NodePtr> all(bool ff_stub) const {
        if (ff_stub) return {w_x, b_g, w1, b1, w2, b2};
        return {w_x, u_h, b_g, w1, b1, w2, b2};
    }
};

inline CorrectorNodes corrector_param_nodes(const CorrectorParams& p) {
    CorrectorNodes n;
    n.w_x = param(p.w_x, "w_x");
    if (!p.ff_stub) n.u_h = param(p.u_h, "u_h");
    n.b_g = param(p.b_g, "b_g");
    n.w1 = param(p.w1, "w1");
    n.b1 = param(p.b1, "b1");
    n.w2 = param(p.w2, "w2");
    n.b2 = param(p.b2, "b2");
    return n;
}

// ---------------------------------------------------------------------------
// time-series encoding
// ---------------------------------------------------------------------------

// One recurrence step over a batch: gates sigma/sigma/sigma/tanh,
// c' = F.c + I.u, h' = O.tanh(c'). The ff_stub variant ignores the state.
inline std::pair<NodePtr, NodePtr> lstm_step_nodes(const CorrectorParams& p,
                                                   const CorrectorNodes& pn, const NodePtr& f,
                                                   const NodePtr& h0, const NodePtr& c0) {
    if (f->value.cols() != static_cast<std::size_t>(p.feature_width))
        throw DimensionError("lstm_step: features " + f->value.shape_str() + " vs width " +
                             std::to_string(p.feature_width));
    const auto h = static_cast<std::size_t>(p.hidden_size);
    if (p.ff_stub) {
        NodePtr hidden = tanh_op(add_bias(matmul(f, pn.w_x), pn.b_g));
        NodePtr cell = constant(Tensor({f->value.rows(), h}));
        return {hidden, cell};
    }
    if (h0->value.cols() != h)
        throw DimensionError("lstm_step: state " + h0->value.shape_str() + " vs hidden " +
                             std::to_string(p.hidden_size));
    NodePtr gates = add_bias(add(matmul(f, pn.w_x), matmul(h0, pn.u_h)), pn.b_g);
    NodePtr gi = sigmoid(slice_cols(gates, 0, h));
    NodePtr gf = sigmoid(slice_cols(gates, h, 2 * h));
    NodePtr go = sigmoid(slice_cols(gates, 2 * h, 3 * h));
    NodePtr gu = tanh_op(slice_cols(gates, 3 * h, 4 * h));
    NodePtr c1 = add(mul(gf, c0), mul(gi, gu));
    NodePtr h1 = mul(go, tanh_op(c1));
    return {h1, c1};
}

inline RecurrentState lstm_step(const Tensor& features, const RecurrentState& state,
                                const CorrectorParams& p) {
    Tensor f = features.rank() == 2 ? features : Tensor({1, features.size()},
                                                        {features.data().begin(),
                                                         features.data().end()});
    Tensor h0({1, state.h.size()}, {state.h.data().begin(), state.h.data().end()});
    Tensor c0({1, state.c.size()}, {state.c.data().begin(), state.c.data().end()});
    CorrectorNodes pn = corrector_param_nodes(p);
    auto [h1, c1] = lstm_step_nodes(p, pn, constant(f), constant(h0), constant(c0));
    return {Tensor({h1->value.size()}, {h1->value.data().begin(), h1->value.data().end()}),
            Tensor({c1->value.size()}, {c1->value.data().begin(), c1->value.data().end()})};
}

// ---------------------------------------------------------------------------
// subclass decoding
// ---------------------------------------------------------------------------

inline NodePtr decoder_logits_nodes(const CorrectorParams& p, const CorrectorNodes& pn,
                                    const NodePtr& h, const NodePtr& features) {
    NodePtr in = h;
    if (p.include_raw_features) in = concat_cols({features, h});
    return add_bias(matmul(relu(add_bias(matmul(in, pn.w1), pn.b1)), pn.w2), pn.b2);
}

inline NodePtr decode_nodes(const CorrectorParams& p, const CorrectorNodes& pn, const NodePtr& h,
                            const NodePtr& features) {
    return softmax_rows(decoder_logits_nodes(p, pn, h, features));
}

// Standard-mode decode of a batch of hidden states (rank-1 input = one state).
inline Tensor decode(const Tensor& hidden, const CorrectorParams& p) {
    if (p.mode != FeatureMode::standard)
        throw ContractError("decode: corrector is in agnostic mode, use decode_mixing");
    if (p.include_raw_features)
        throw ContractError("decode: include_raw_features corrector needs the feature batch");
    Tensor h = hidden.rank() == 2 ? hidden : Tensor({1, hidden.size()},
                                                    {hidden.data().begin(),
                                                     hidden.data().end()});
    CorrectorNodes pn = corrector_param_nodes(p);
    NodePtr out = decode_nodes(p, pn, constant(h), nullptr);
    return out->value;
}

inline NodePtr decode_mixing_nodes(const CorrectorParams& p, const CorrectorNodes& pn,
                                   const NodePtr& h, const NodePtr& features,
                                   const NodePtr& noisy_onehot, const NodePtr& probs_now,
                                   const NodePtr& probs_prev) {
    NodePtr w = softmax_rows(decoder_logits_nodes(p, pn, h, features)); // B x 3
    NodePtr y = rows_scale(noisy_onehot, slice_cols(w, 0, 1));
    y = add(y, rows_scale(probs_now, slice_cols(w, 1, 2)));
    return add(y, rows_scale(probs_prev, slice_cols(w, 2, 3)));
}

inline Tensor decode_mixing(const Tensor& hidden, const CorrectorParams& p,
                            const Tensor& noisy_onehot, const Tensor& probs_now,
                            const Tensor& probs_prev) {
    if (p.mode != FeatureMode::agnostic)
        throw ContractError("decode_mixing: corrector is in standard mode, use decode");
    Tensor h = hidden.rank() == 2 ? hidden : Tensor({1, hidden.size()},
                                                    {hidden.data().begin(),
                                                     hidden.data().end()});
    CorrectorNodes pn = corrector_param_nodes(p);
    NodePtr out = decode_mixing_nodes(p, pn, constant(h), nullptr, constant(noisy_onehot),
                                      constant(probs_now), constant(probs_prev));
    return out->value;
}

// ---------------------------------------------------------------------------
// full correction pipeline
// ---------------------------------------------------------------------------

struct CorrectionGraph {
    CorrectorNodes pn;
    NodePtr features;
    NodePtr h_new, c_new;
    NodePtr yhat;
};

// NNP -> TSE -> SD over one batch. probs/losses may be live graph nodes
// (lookahead) or constants; recurrent state and previous predictions come in
// as constants from the store. Pass pre-built parameter nodes when the same
// leaves must collect gradients from several corrector applications.
inline CorrectionGraph correct_batch_nodes(const CorrectorParams& p, const CorrectorNodes& pn,
                                           const NodePtr& probs, const NodePtr& losses,
                                           const std::vector<int>& noisy_labels,
                                           int num_classes, const Tensor& h0, const Tensor& c0,
                                           const Tensor& prev_probs) {
    CorrectionGraph g;
    g.pn = pn;
    g.features =
        feature_nodes(losses, probs, noisy_labels, num_classes, p.mode, p.feature_ablation());
    auto [h1, c1] = lstm_step_nodes(p, g.pn, g.features, constant(h0), constant(c0));
    g.h_new = h1;
    g.c_new = c1;
    if (p.mode == FeatureMode::agnostic) {
        NodePtr onehot = constant(onehot_matrix(noisy_labels, num_classes));
        g.yhat = decode_mixing_nodes(p, g.pn, h1, g.features, onehot, probs,
                                     constant(prev_probs));
    } else {
        g.yhat = decode_nodes(p, g.pn, h1, g.features);
    }
    return g;
}

inline CorrectionGraph correct_batch_nodes(const CorrectorParams& p, const NodePtr& probs,
                                           const NodePtr& losses,
                                           const std::vector<int>& noisy_labels,
                                           int num_classes, const Tensor& h0, const Tensor& c0,
                                           const Tensor& prev_probs) {
    return correct_batch_nodes(p, corrector_param_nodes(p), probs, losses, noisy_labels,
                               num_classes, h0, c0, prev_probs);
}

// Plain-value pipeline over a batch of store-tracked samples. Updates the
// store (states, previous predictions, history) unless told otherwise.
inline Tensor correct_batch(const Tensor& probs, const Tensor& losses,
                            const std::vector<int>& noisy_labels,
                            const std::vector<int>& indices, DynamicsStore& store,
                            const CorrectorParams& p, bool update_store = true) {
    if (indices.size() != losses.size() || indices.size() != probs.rows())
        throw DimensionError("correct_batch: inconsistent batch sizes");
    const int c = static_cast<int>(store.num_classes());
    CorrectionGraph g = correct_batch_nodes(p, constant(probs), constant(losses), noisy_labels,
                                            c, store.gather_h(indices),
                                            store.gather_c(indices),
                                            store.gather_prev_probs(indices));
    if (update_store) {
        store.update_states(indices, g.h_new->value, g.c_new->value);
        store.update_prev_probs(indices, probs);
        store.push_history(indices, g.features->value, losses, store.epoch());
    }
    return g.yhat->value;
}

// ---------------------------------------------------------------------------
// snapshots
// ---------------------------------------------------------------------------

inline nlohmann::json snapshot_to_json(const CorrectorParams& p) {
    nlohmann::json j;
    j["version"] = 1;
    j["mode"] = to_string(p.mode);
    j["ff_stub"] = p.ff_stub;
    j["raw_loss_features"] = p.raw_loss_features;
    j["include_raw_features"] = p.include_raw_features;
    j["hidden_size"] = p.hidden_size;
    j["feature_width"] = p.feature_width;
    j["c_out"] = p.c_out;
    j["epoch_tag"] = p.epoch_tag;
    nlohmann::json params = nlohmann::json::object();
    auto names = p.param_names();
    auto tensors = p.param_list();
    for (std::size_t k = 0; k < names.size(); ++k)
        params[names[k]] =
            std::vector<double>(tensors[k]->data().begin(), tensors[k]->data().end());
    j["params"] = std::move(params);
    return j;
}

inline CorrectorParams snapshot_from_json(const nlohmann::json& j) {
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw FormatError("snapshot: unsupported version");
    CorrectorParams p;
    p.mode = feature_mode_from(j.at("mode").get<std::string>());
    p.ff_stub = j.at("ff_stub").get<bool>();
    p.raw_loss_features = j.at("raw_loss_features").get<bool>();
    p.include_raw_features = j.at("include_raw_features").get<bool>();
    p.hidden_size = j.at("hidden_size").get<int>();
    p.feature_width = j.at("feature_width").get<int>();
    p.c_out = j.at("c_out").get<int>();
    p.epoch_tag = j.at("epoch_tag").get<int>();

    const auto h = static_cast<std::size_t>(p.hidden_size);
    const auto f = static_cast<std::size_t>(p.feature_width);
    const std::size_t dec_in = h + (p.include_raw_features ? f : 0);
    std::vector<std::pair<std::string, std::vector<std::size_t>>> expected;
    if (p.ff_stub) {
        expected = {{"w_x", {f, h}}, {"b_g", {h}}};
    } else {
        expected = {{"w_x", {f, 4 * h}}, {"u_h", {h, 4 * h}}, {"b_g", {4 * h}}};
    }
    expected.emplace_back("w1", std::vector<std::size_t>{dec_in, h});
    expected.emplace_back("b1", std::vector<std::size_t>{h});
    expected.emplace_back("w2", std::vector<std::size_t>{h, static_cast<std::size_t>(p.c_out)});
    expected.emplace_back("b2", std::vector<std::size_t>{static_cast<std::size_t>(p.c_out)});

    auto tensors = p.param_list();
    for (std::size_t k = 0; k < expected.size(); ++k) {
        const auto& [name, shape] = expected[k];
        if (!j.at("params").contains(name))
            throw FormatError("snapshot: missing parameter " + name);
        auto vals = j.at("params").at(name).get<std::vector<double>>();
        std::size_t want = 1;
        for (auto d : shape) want *= d;
        if (vals.size() != want)
            throw FormatError("snapshot: parameter " + name + " has " +
                              std::to_string(vals.size()) + " values, expected " +
                              std::to_string(want));
        *tensors[k] = Tensor(shape, std::move(vals));
    }
    return p;
}

inline void snapshot_save(const CorrectorParams& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("snapshot: cannot open " + path + " for writing");
    out << snapshot_to_json(p).dump(2) << "\n";
}

inline CorrectorParams snapshot_load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("snapshot: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("snapshot: invalid JSON in " + path + ": " + e.what());
    }
    return snapshot_from_json(j);
}

// Standard-mode snapshots are pinned to their class count; agnostic ones fit
// any task.
inline void check_snapshot_compatible(const CorrectorParams& p, int task_classes,
                                      Ablation ab = Ablation::none) {
    if (p.mode == FeatureMode::agnostic) return;
    if (p.c_out != task_classes)
        throw FormatError("snapshot: c_out " + std::to_string(p.c_out) +
                          " incompatible with task of " + std::to_string(task_classes) +
                          " classes");
    if (ab == Ablation::none) ab = p.feature_ablation();
    const auto want = feature_width(p.mode, task_classes, ab);
    if (static_cast<std::size_t>(p.feature_width) != want)
        throw FormatError("snapshot: feature_width " + std::to_string(p.feature_width) +
                          " incompatible with task width " + std::to_string(want));
}

// FNV-1a over the raw little-endian parameter bytes plus layout metadata;
// used to prove meta-test never touches the snapshot.
inline std::uint64_t fingerprint(const CorrectorParams& p) {
    std::uint64_t hash = 1469598103934665603ULL;
    auto mix = [&hash](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            hash ^= bytes[i];
            hash *= 1099511628211ULL;
        }
    };
    const int meta[] = {static_cast<int>(p.mode),  p.ff_stub, p.raw_loss_features,
                        p.include_raw_features,    p.hidden_size, p.feature_width,
                        p.c_out,                   p.epoch_tag};
    mix(meta, sizeof(meta));
    for (const Tensor* t : p.param_list())
        mix(t->data().data(), t->size() * sizeof(double));
    return hash;
}

} // namespace tmlc
