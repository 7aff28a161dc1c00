#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tmlc/errors.hpp"
#include "tmlc/tensor.hpp"

// Reverse-mode autodiff over dense f64 tensors. Each op eagerly computes its
// forward value and records a closure that scatters adjoints into its parents.
// Graphs are built per batch and discarded; leaves (params/constants) keep
// accumulating gradients across backward() calls until the caller resets them.

namespace tmlc {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop; // empty for leaves and constants
    std::string label;

    Tensor& grad() {
        if (!grad_alloc_) {
            grad_ = Tensor::zeros(value.shape());
            grad_alloc_ = true;
        }
        return grad_;
    }

    void reset_grad() {
        if (grad_alloc_) grad_.fill(0.0);
    }

    bool is_interior() const { return static_cast<bool>(backprop); }

private:
    Tensor grad_;
    bool grad_alloc_ = false;
};

inline NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                         std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    return n;
}

inline NodePtr constant(Tensor value, std::string label = {}) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->label = std::move(label);
    return n;
}

// Parameter leaf; identical to constant but the name documents intent.
inline NodePtr param(Tensor value, std::string label = {}) {
    return constant(std::move(value), std::move(label));
}

// ---------------------------------------------------------------------------
// raw matmul kernels (C accumulates)
// ---------------------------------------------------------------------------

inline void mm_nn(const double* a, const double* b, double* c,
                  std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
}

// c[m x k] += a[m x n] * b^T where b is [k x n]
inline void mm_nt(const double* a, const double* b, double* c,
                  std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double* arow = a + i * n;
            const double* brow = b + j * n;
            double acc = 0.0;
            for (std::size_t p = 0; p < n; ++p) acc += arow[p] * brow[p];
            c[i * k + j] += acc;
        }
}

// c[k x n] += a^T * b where a is [m x k], b is [m x n]
inline void mm_tn(const double* a, const double* b, double* c,
                  std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// ---------------------------------------------------------------------------
// scalar kernels shared by graph ops and the plain Tensor-level API
// ---------------------------------------------------------------------------

constexpr double kLogClamp = 1e-12;

inline void softmax_row_kernel(std::span<const double> in, std::span<double> out) {
    double mx = in[0];
    for (double v : in) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
        out[j] = std::exp(in[j] - mx);
        sum += out[j];
    }
    for (auto& v : out) v /= sum;
}

inline void check_simplex_row(std::span<const double> row, const char* what) {
    double sum = 0.0;
    for (double v : row) sum += v;
    if (std::abs(sum - 1.0) > 1e-6)
        throw ContractError(std::string(what) + " is not on the probability simplex (sum=" +
                            std::to_string(sum) + ")");
}

inline double soft_ce_row_kernel(std::span<const double> pred, std::span<const double> target) {
    double loss = 0.0;
    for (std::size_t c = 0; c < pred.size(); ++c)
        loss -= target[c] * std::log(std::max(pred[c], kLogClamp));
    return loss;
}

inline double kl_row_kernel(std::span<const double> target, std::span<const double> pred) {
    double kl = 0.0;
    for (std::size_t c = 0; c < target.size(); ++c) {
        if (target[c] <= 0.0) continue; // 0 * log(0/.) := 0
        kl += target[c] * (std::log(std::max(target[c], kLogClamp)) -
                           std::log(std::max(pred[c], kLogClamp)));
    }
    return kl;
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

inline NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
        throw DimensionError("matmul: incompatible shapes " + A.shape_str() + " x " + B.shape_str());
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out({m, n});
    mm_nn(A.data().data(), B.data().data(), out.data().data(), m, k, n);
    Node* ap = a.get();
    Node* bp = b.get();
    return make_node(std::move(out), {a, b}, [ap, bp, m, k, n](Node& self) {
        mm_nt(self.grad().data().data(), bp->value.data().data(),
              ap->grad().data().data(), m, n, k);
        mm_tn(ap->value.data().data(), self.grad().data().data(),
              bp->grad().data().data(), m, k, n);
    });
}

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
    if (!a->value.same_shape(b->value))
        throw DimensionError("add: shape mismatch " + a->value.shape_str() + " vs " +
                             b->value.shape_str());
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    Node* ap = a.get();
    Node* bp = b.get();
    return make_node(std::move(out), {a, b}, [ap, bp](Node& self) {
        auto& g = self.grad();
        auto& ga = ap->grad();
        auto& gb = bp->grad();
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

inline NodePtr sub(const NodePtr& a, const NodePtr& b) {
    if (!a->value.same_shape(b->value))
        throw DimensionError("sub: shape mismatch " + a->value.shape_str() + " vs " +
                             b->value.shape_str());
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    Node* ap = a.get();
    Node* bp = b.get();
    return make_node(std::move(out), {a, b}, [ap, bp](Node& self) {
        auto& g = self.grad();
        auto& ga = ap->grad();
        auto& gb = bp->grad();
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
}

inline NodePtr mul(const NodePtr& a, const NodePtr& b) {
    if (!a->value.same_shape(b->value))
        throw DimensionError("mul: shape mismatch " + a->value.shape_str() + " vs " +
                             b->value.shape_str());
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    Node* ap = a.get();
    Node* bp = b.get();
    return make_node(std::move(out), {a, b}, [ap, bp](Node& self) {
        auto& g = self.grad();
        auto& ga = ap->grad();
        auto& gb = bp->grad();
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            ga[i] += g[i] * bp->value[i];
            gb[i] += g[i] * ap->value[i];
        }
    });
}

inline NodePtr scale(const NodePtr& a, double s) {
    Tensor out = a->value;
    for (auto& v : out.data()) v *= s;
    Node* ap = a.get();
    return make_node(std::move(out), {a}, [ap, s](Node& self) {
        auto& g = self.grad();
        auto& ga = ap->grad();
        for (std::size_t i = 0; i < self.value.size(); ++i) ga[i] += s * g[i];
    });
}

// x[B x N] + bias[N], the one sanctioned broadcast.
inline NodePtr add_bias(const NodePtr& x, const NodePtr& bias) {
    const std::size_t n = x->value.cols();
    if (bias->value.size() != n)
        throw DimensionError("add_bias: bias " + bias->value.shape_str() + " vs matrix " +
                             x->value.shape_str());
    Tensor out = x->value;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t j = 0; j < n; ++j) out.at(r, j) += bias->value[j];
    Node* xp = x.get();
    Node* bp = bias.get();
    return make_node(std::move(out), {x, bias}, [xp, bp, n](Node& self) {
        for (std::size_t i = 0; i < self.value.size(); ++i)
            xp->grad()[i] += self.grad()[i];
        for (std::size_t r = 0; r < self.value.rows(); ++r)
            for (std::size_t j = 0; j < n; ++j)
                bp->grad()[j] += self.grad().at(r, j);
    });
}

inline NodePtr relu(const NodePtr& a) {
    Tensor out = a->value;
    for (auto& v : out.data()) v = std::max(0.0, v);
    Node* ap = a.get();
    return make_node(std::move(out), {a}, [ap](Node& self) {
        auto& g = self.grad();
        auto& ga = ap->grad();
        for (std::size_t i = 0; i < self.value.size(); ++i)
            if (ap->value[i] > 0.0) ga[i] += g[i];
    });
}

inline NodePtr tanh_op(const NodePtr& a) {
    Tensor out = a->value;
    for (auto& v : out.data()) v = std::tanh(v);
    Node* ap = a.get();
    return make_node(std::move(out), {a}, [ap](Node& self) {
        auto& g = self.grad();
        auto& ga = ap->grad();
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            const double y = self.value[i];
            ga[i] += g[i] * (1.0 - y * y);
        }
    });
}

inline NodePtr sigmoid(const NodePtr& a) {
    Tensor out = a->value;
    for (auto& v : out.data()) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    Node* ap = a.get();
    return make_node(std::move(out), {a}, [ap](Node& self) {
        auto& g = self.grad();
        auto& ga = ap->grad();
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            const double y = self.value[i];
            ga[i] += g[i] * y * (1.0 - y);
        }
    });
}

// Row-wise softmax with max subtraction; rank-1 input is one row.
inline NodePtr softmax_rows(const NodePtr& logits) {
    const Tensor& z = logits->value;
    Tensor out = z;
    const std::size_t rows = z.rows(), cols = z.cols();
    for (std::size_t r = 0; r < rows; ++r)
        softmax_row_kernel({z.data().data() + r * cols, cols},
                           {out.data().data() + r * cols, cols});
    Node* zp = logits.get();
    return make_node(std::move(out), {logits}, [zp, rows, cols](Node& self) {
        auto& g = self.grad();
        auto& gz = zp->grad();
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j)
                dot += g[r * cols + j] * self.value[r * cols + j];
            for (std::size_t j = 0; j < cols; ++j) {
                const double y = self.value[r * cols + j];
                gz[r * cols + j] += y * (g[r * cols + j] - dot);
            }
        }
    });
}

// Per-row soft cross-entropy against a constant target distribution.
inline NodePtr soft_ce_rows(const NodePtr& pred, const Tensor& target) {
    const Tensor& p = pred->value;
    if (!p.same_shape(target))
        throw DimensionError("soft_ce_rows: pred " + p.shape_str() + " vs target " +
                             target.shape_str());
    const std::size_t rows = p.rows(), cols = p.cols();
    Tensor out({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        check_simplex_row(target.row(r), "soft_cross_entropy target");
        check_simplex_row(p.row(r), "soft_cross_entropy prediction");
        out[r] = soft_ce_row_kernel(p.row(r), target.row(r));
    }
    Node* pp = pred.get();
    return make_node(std::move(out), {pred}, [pp, target, rows, cols](Node& self) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const double pv = pp->value.at(r, c);
                if (pv > kLogClamp)
                    pp->grad().at(r, c) -= self.grad()[r] * target.at(r, c) / pv;
            }
    });
}

// Per-row KL(target || pred) with constant target rows.
inline NodePtr kl_rows(const Tensor& target, const NodePtr& pred) {
    const Tensor& p = pred->value;
    if (!p.same_shape(target))
        throw DimensionError("kl_rows: target " + target.shape_str() + " vs pred " +
                             p.shape_str());
    const std::size_t rows = p.rows(), cols = p.cols();
    Tensor out({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        check_simplex_row(target.row(r), "kl_divergence target");
        check_simplex_row(p.row(r), "kl_divergence prediction");
        out[r] = kl_row_kernel(target.row(r), p.row(r));
    }
    Node* pp = pred.get();
    return make_node(std::move(out), {pred}, [pp, target, rows, cols](Node& self) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const double t = target.at(r, c);
                const double pv = pp->value.at(r, c);
                if (t > 0.0 && pv > kLogClamp)
                    pp->grad().at(r, c) -= self.grad()[r] * t / pv;
            }
    });
}

inline NodePtr sum_all(const NodePtr& a) {
    Tensor out = Tensor::scalar(a->value.sum());
    Node* ap = a.get();
    return make_node(std::move(out), {a}, [ap](Node& self) {
        const double g = self.grad()[0];
        for (std::size_t i = 0; i < ap->value.size(); ++i) ap->grad()[i] += g;
    });
}

inline NodePtr mean_all(const NodePtr& a) {
    const double n = static_cast<double>(a->value.size());
    Tensor out = Tensor::scalar(a->value.sum() / n);
    Node* ap = a.get();
    return make_node(std::move(out), {a}, [ap, n](Node& self) {
        const double g = self.grad()[0] / n;
        for (std::size_t i = 0; i < ap->value.size(); ++i) ap->grad()[i] += g;
    });
}

inline NodePtr slice_cols(const NodePtr& a, std::size_t c0, std::size_t c1) {
    const Tensor& A = a->value;
    if (A.rank() != 2 || c1 > A.cols() || c0 >= c1)
        throw DimensionError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                             ") of " + A.shape_str());
    const std::size_t rows = A.rows(), w = c1 - c0;
    Tensor out({rows, w});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) out.at(r, j) = A.at(r, c0 + j);
    Node* ap = a.get();
    return make_node(std::move(out), {a}, [ap, c0, rows, w](Node& self) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j)
                ap->grad().at(r, c0 + j) += self.grad().at(r, j);
    });
}

// Column-wise concatenation; rank-1 parts are treated as single columns.
inline NodePtr concat_cols(const std::vector<NodePtr>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no parts");
    const std::size_t rows = parts[0]->value.rank() == 2 ? parts[0]->value.rows()
                                                         : parts[0]->value.size();
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        const std::size_t r = p->value.rank() == 2 ? p->value.rows() : p->value.size();
        const std::size_t w = p->value.rank() == 2 ? p->value.cols() : 1;
        if (r != rows)
            throw DimensionError("concat_cols: row mismatch " + p->value.shape_str());
        widths.push_back(w);
        total += w;
    }
    Tensor out({rows, total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& v = parts[k]->value;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < widths[k]; ++j)
                out.at(r, off + j) = v[r * widths[k] + j];
        off += widths[k];
    }
    std::vector<Node*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    return make_node(std::move(out), parts, [raw, widths, rows](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < raw.size(); ++k) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < widths[k]; ++j)
                    raw[k]->grad()[r * widths[k] + j] += self.grad().at(r, off + j);
            off += widths[k];
        }
    });
}

// out_i = mean of a over the samples sharing groups[i] (per-row group mean).
inline NodePtr group_mean_rows(const NodePtr& a, std::vector<int> groups) {
    const Tensor& v = a->value;
    if (v.size() != groups.size())
        throw DimensionError("group_mean_rows: " + std::to_string(groups.size()) +
                             " groups vs " + v.shape_str());
    std::unordered_map<int, double> sums;
    std::unordered_map<int, double> counts;
    for (std::size_t i = 0; i < v.size(); ++i) {
        sums[groups[i]] += v[i];
        counts[groups[i]] += 1.0;
    }
    Tensor out({v.size()});
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = sums[groups[i]] / counts[groups[i]];
    Node* ap = a.get();
    return make_node(std::move(out), {a}, [ap, groups = std::move(groups)](Node& self) {
        std::unordered_map<int, double> gsum;
        std::unordered_map<int, double> counts;
        for (std::size_t i = 0; i < groups.size(); ++i) {
            gsum[groups[i]] += self.grad()[i];
            counts[groups[i]] += 1.0;
        }
        for (std::size_t i = 0; i < groups.size(); ++i)
            ap->grad()[i] += gsum[groups[i]] / counts[groups[i]];
    });
}

inline NodePtr clamp_min(const NodePtr& a, double m) {
    Tensor out = a->value;
    for (auto& v : out.data()) v = std::max(v, m);
    Node* ap = a.get();
    return make_node(std::move(out), {a}, [ap, m](Node& self) {
        for (std::size_t i = 0; i < self.value.size(); ++i)
            if (ap->value[i] > m) ap->grad()[i] += self.grad()[i];
    });
}

// Elementwise a / b; b may be a scalar (size 1) that divides every element.
inline NodePtr div(const NodePtr& a, const NodePtr& b) {
    const bool scalar_b = b->value.size() == 1;
    if (!scalar_b && !a->value.same_shape(b->value))
        throw DimensionError("div: shape mismatch " + a->value.shape_str() + " vs " +
                             b->value.shape_str());
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b->value[scalar_b ? 0 : i];
    Node* ap = a.get();
    Node* bp = b.get();
    return make_node(std::move(out), {a, b}, [ap, bp, scalar_b](Node& self) {
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            const std::size_t bi = scalar_b ? 0 : i;
            const double bv = bp->value[bi];
            ap->grad()[i] += self.grad()[i] / bv;
            bp->grad()[bi] -= self.grad()[i] * ap->value[i] / (bv * bv);
        }
    });
}

// Shannon entropy per row, 0*log(0) := 0.
inline NodePtr entropy_rows(const NodePtr& probs) {
    const Tensor& p = probs->value;
    const std::size_t rows = p.rows(), cols = p.cols();
    Tensor out({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        double h = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double pv = p.at(r, c);
            if (pv > 0.0) h -= pv * std::log(pv);
        }
        out[r] = h;
    }
    Node* pp = probs.get();
    return make_node(std::move(out), {probs}, [pp, rows, cols](Node& self) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const double pv = pp->value.at(r, c);
                if (pv > 0.0)
                    pp->grad().at(r, c) -= self.grad()[r] * (std::log(pv) + 1.0);
            }
    });
}

// out_i = probs[i, idx[i]]
inline NodePtr select_col_per_row(const NodePtr& probs, std::vector<int> idx) {
    const Tensor& p = probs->value;
    if (p.rows() != idx.size())
        throw DimensionError("select_col_per_row: " + std::to_string(idx.size()) +
                             " indices vs " + p.shape_str());
    Tensor out({p.rows()});
    for (std::size_t r = 0; r < p.rows(); ++r) out[r] = p.at(r, static_cast<std::size_t>(idx[r]));
    Node* pp = probs.get();
    return make_node(std::move(out), {probs}, [pp, idx = std::move(idx)](Node& self) {
        for (std::size_t r = 0; r < idx.size(); ++r)
            pp->grad().at(r, static_cast<std::size_t>(idx[r])) += self.grad()[r];
    });
}

// Row i of dist scaled by w_i.
inline NodePtr rows_scale(const NodePtr& dist, const NodePtr& w) {
    const Tensor& d = dist->value;
    if (d.rows() != w->value.size())
        throw DimensionError("rows_scale: weights " + w->value.shape_str() + " vs " +
                             d.shape_str());
    Tensor out = d;
    for (std::size_t r = 0; r < d.rows(); ++r)
        for (std::size_t c = 0; c < d.cols(); ++c) out.at(r, c) *= w->value[r];
    Node* dp = dist.get();
    Node* wp = w.get();
    return make_node(std::move(out), {dist, w}, [dp, wp](Node& self) {
        const std::size_t rows = self.value.rows(), cols = self.value.cols();
        for (std::size_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                acc += self.grad().at(r, c) * dp->value.at(r, c);
                dp->grad().at(r, c) += self.grad().at(r, c) * wp->value[r];
            }
            wp->grad()[r] += acc;
        }
    });
}

// Elementwise -log(max(x, clamp)); the per-entry loss kernel behind the
// virtual-step basis tensors.
inline NodePtr neg_log_clamped(const NodePtr& a) {
    Tensor out = a->value;
    for (auto& v : out.data()) v = -std::log(std::max(v, kLogClamp));
    Node* ap = a.get();
    return make_node(std::move(out), {a}, [ap](Node& self) {
        auto& g = self.grad();
        auto& ga = ap->grad();
        for (std::size_t i = 0; i < self.value.size(); ++i)
            if (ap->value[i] > kLogClamp) ga[i] -= g[i] / ap->value[i];
    });
}

// Single element by flat index, as a scalar node.
inline NodePtr pick_entry(const NodePtr& a, std::size_t index) {
    if (index >= a->value.size())
        throw DimensionError("pick_entry: index " + std::to_string(index) + " out of " +
                             a->value.shape_str());
    Tensor out = Tensor::scalar(a->value[index]);
    Node* ap = a.get();
    return make_node(std::move(out), {a}, [ap, index](Node& self) {
        ap->grad()[index] += self.grad()[0];
    });
}

// One virtual plain-SGD step: out = theta - alpha * sum_{i,c} yhat[i,c] * basis[i*C+c].
// The basis tensors are gradients of per-(sample,class) loss terms w.r.t. theta
// and are constant w.r.t. the meta parameters, so the only adjoint flows into yhat.
inline NodePtr virtual_sgd_step(const Tensor& theta, const NodePtr& yhat,
                                std::vector<Tensor> basis, double alpha) {
    if (yhat->value.size() != basis.size())
        throw DimensionError("virtual_sgd_step: " + std::to_string(basis.size()) +
                             " basis tensors vs yhat " + yhat->value.shape_str());
    Tensor out = theta;
    for (std::size_t k = 0; k < basis.size(); ++k) {
        const double w = alpha * yhat->value[k];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= w * basis[k][i];
    }
    Node* yp = yhat.get();
    return make_node(std::move(out), {yhat},
                     [yp, basis = std::move(basis), alpha](Node& self) {
                         for (std::size_t k = 0; k < basis.size(); ++k) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < self.value.size(); ++i)
                                 acc += self.grad()[i] * basis[k][i];
                             yp->grad()[k] -= alpha * acc;
                         }
                     });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse accumulation from a scalar root. Interior adjoints are zeroed per
// pass; leaf gradients accumulate additively across passes until reset.
inline void backward(const NodePtr& root) {
    if (root->value.size() != 1)
        throw ContractError("backward: root must be scalar, got " + root->value.shape_str());

    std::vector<Node*> order; // parents before users
    std::unordered_set<Node*> done;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    std::unordered_set<Node*> on_stack{root.get()};
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (!done.count(p) && !on_stack.count(p)) {
                on_stack.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            done.insert(n);
            on_stack.erase(n);
            stack.pop_back();
        }
    }

    for (Node* n : order)
        if (n->is_interior()) n->reset_grad();
    root->grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->is_interior()) (*it)->backprop(**it);
}

// ---------------------------------------------------------------------------
// plain Tensor-level entry points (same kernels, no graph)
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& logits) {
    Tensor out = logits;
    const std::size_t rows = logits.rows(), cols = logits.cols();
    for (std::size_t r = 0; r < rows; ++r)
        softmax_row_kernel({logits.data().data() + r * cols, cols},
                           {out.data().data() + r * cols, cols});
    return out;
}

inline double soft_cross_entropy(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target))
        throw DimensionError("soft_cross_entropy: " + pred.shape_str() + " vs " +
                             target.shape_str());
    check_simplex_row(target.data(), "soft_cross_entropy target");
    check_simplex_row(pred.data(), "soft_cross_entropy prediction");
    return soft_ce_row_kernel(pred.data(), target.data());
}

inline double kl_divergence(const Tensor& target, const Tensor& pred) {
    if (!pred.same_shape(target))
        throw DimensionError("kl_divergence: " + target.shape_str() + " vs " + pred.shape_str());
    check_simplex_row(target.data(), "kl_divergence target");
    check_simplex_row(pred.data(), "kl_divergence prediction");
    return kl_row_kernel(target.data(), pred.data());
}

} // namespace tmlc
