#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tmlc/errors.hpp"

namespace tmlc {

// Dense row-major tensor of 64-bit floats. No views, no broadcasting state;
// the op layer decides what shapes mean.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), values_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        if (count(shape_) != values_.size()) {
            throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                                 std::to_string(values_.size()) + " values");
        }
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.values_) x = v;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }

    // Rank-2 conveniences; rank-1 tensors count as a single row.
    std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : size(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

    std::span<double> data() { return values_; }
    std::span<const double> data() const { return values_; }

    std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) {
        for (auto& x : values_) x = v;
    }

    double sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

    static std::string shape_str(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
        os << "]";
        return os.str();
    }

    std::string shape_str() const { return shape_str(shape_); }

private:
    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

inline std::size_t argmax_row(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[best]) best = j; // ties resolve to lowest index
    return best;
}

inline Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    Tensor out({idx.size(), x.cols()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= x.rows())
            throw DimensionError("gather_rows: index " + std::to_string(idx[i]) +
                                 " out of " + x.shape_str());
        for (std::size_t j = 0; j < x.cols(); ++j)
            out.at(i, j) = x.at(static_cast<std::size_t>(idx[i]), j);
    }
    return out;
}

} // namespace tmlc
