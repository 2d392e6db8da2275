// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ssd/error.hpp"

namespace ssd {

using Vec = std::vector<double>;
using IndexSet = std::vector<std::size_t>;

// Floor applied to the second KL argument before taking its log.
inline constexpr double kKlFloor = 1e-12;

// Dense row-major matrix. Rows are neurons for the layer matrices.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {values_.data() + r * cols_, cols_};
    }

    std::vector<double>& values() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

// y = M x
inline Vec matvec(const Matrix& m, std::span<const double> x) {
    detail::require_shape(m.cols() == x.size(), "matvec: matrix has " + std::to_string(m.cols()) +
                                                    " columns but vector has " +
                                                    std::to_string(x.size()) + " entries");
    Vec y(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
    return y;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    detail::require_shape(a.size() == b.size(), "dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Zero vector maps to itself.
inline Vec l2_normalize(std::span<const double> v) {
    Vec out(v.begin(), v.end());
    const double norm = l2_norm(v);
    if (norm == 0.0) return out;
    for (double& x : out) x /= norm;
    return out;
}

struct ProbDist {
    Vec probs;

    std::size_t size() const noexcept { return probs.size(); }
    double operator[](std::size_t i) const noexcept { return probs[i]; }
};

inline double log_sum_exp(std::span<const double> z) {
    detail::require(!z.empty(), "log_sum_exp: empty input");
    const double mx = *std::max_element(z.begin(), z.end());
    double acc = 0.0;
    for (double v : z) acc += std::exp(v - mx);
    return mx + std::log(acc);
}

// log of softmax(z / temperature), stable for large logits.
inline Vec log_softmax_temp(std::span<const double> z, double temperature) {
    if (!(temperature > 0.0))
        throw InvalidArgument("temperature must be positive, got " + std::to_string(temperature));
    Vec scaled(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) scaled[i] = z[i] / temperature;
    const double lse = log_sum_exp(scaled);
    for (double& v : scaled) v -= lse;
    return scaled;
}

inline ProbDist softmax_temp(std::span<const double> z, double temperature) {
    if (!(temperature > 0.0))
        throw InvalidArgument("temperature must be positive, got " + std::to_string(temperature));
    detail::require(!z.empty(), "softmax_temp: empty input");
    const double mx = *std::max_element(z.begin(), z.end());
    Vec p(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp((z[i] - mx) / temperature);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return ProbDist{std::move(p)};
}

// KL(p || q) in nats with 0 * ln(0 / q) = 0 and q floored at kKlFloor.
inline double kl_div(const ProbDist& p, const ProbDist& q) {
    detail::require_shape(p.size() == q.size(), "kl_div: distributions have lengths " +
                                                    std::to_string(p.size()) + " and " +
                                                    std::to_string(q.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        acc += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kKlFloor)));
    }
    return std::max(acc, 0.0);
}

inline double cosine_sim(std::span<const double> a, std::span<const double> b) {
    detail::require_shape(a.size() == b.size(), "cosine_sim: length mismatch");
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine_sim: zero-norm input");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

// Indices of the k largest entries, lower index wins ties, returned ascending.
template <class T>
IndexSet topk_indices(std::span<const T> v, std::size_t k) {
    if (k < 1 || k > v.size())
        throw InvalidArgument("topk_indices: k=" + std::to_string(k) + " outside [1, " +
                              std::to_string(v.size()) + "]");
    IndexSet idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); };
    if (k < v.size()) {
        std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(), before);
        idx.resize(k);
    }
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline IndexSet topk_indices(const Vec& v, std::size_t k) {
    return topk_indices(std::span<const double>(v), k);
}

}  // namespace ssd
