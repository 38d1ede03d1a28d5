#pragma once

// Smooth tensor primitives: SoftSort, weighted SoftMax/SoftMin, SoftMedian
// and the finite-differences layer. All functions are templated on the value
// type (double or ad::Scalar).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoothlang/autodiff.hpp"

namespace smoothlang {

/// Dense row-major matrix of plain values.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

template <class T>
struct SortResult {
  std::vector<T> sorted;
  std::optional<std::vector<T>> companion;
  /// sorted = a * relaxation (a as a row vector); doubly stochastic.
  Matrix relaxation;
  /// Per stage, the exchange probability of each compared pair, listed by
  /// the pair's lower index in `pairs`.
  std::vector<std::vector<double>> exchange_probabilities;
  std::vector<std::vector<std::size_t>> pairs;
};

struct SortOptions {
  std::optional<std::size_t> num_stages;  // default: n stages
  bool descending = false;
};

/// Number of odd-even transposition stages that sort any input of length n.
inline std::size_t full_stage_count(std::size_t n) { return n; }

namespace detail {

// e = sigma((a[i+1] - a[i]) * s) weights the straight edges of a pair:
//   a[i]'   = e * a[i]     + (1 - e) * a[i+1]
//   a[i+1]' = (1 - e) * a[i] + e * a[i+1]
// so a large s keeps ordered pairs and swaps inverted ones (ascending).
template <class T>
T keep_probability(const T& lo, const T& hi, double s, bool descending) {
  return descending ? sigmoid((lo - hi) * T(s)) : sigmoid((hi - lo) * T(s));
}

template <class T>
void mix_pair(std::vector<T>& v, std::size_t i, const T& e) {
  const T a = v[i], b = v[i + 1];
  const T f = T(1.0) - e;
  v[i] = e * a + f * b;
  v[i + 1] = f * a + e * b;
}

}  // namespace detail

/// Differentiable odd-even transposition sort. Stage k compares the pairs
/// (k mod 2, k mod 2 + 1), (k mod 2 + 2, k mod 2 + 3), ... and mixes each pair
/// through a sigmoid exchange probability. The companion, if given, is mixed
/// with the same probabilities.
template <class T>
SortResult<T> soft_sort(std::span<const T> a, double s, std::optional<std::span<const T>> companion = std::nullopt,
                        const SortOptions& options = {}) {
  const std::size_t n = a.size();
  if (n == 0) throw std::invalid_argument("soft_sort: empty input");
  if (!(s > 0)) throw std::invalid_argument("soft_sort: steepness must be positive");
  if (companion && companion->size() != n)
    throw std::invalid_argument("soft_sort: companion length " + std::to_string(companion->size()) +
                                " does not match input length " + std::to_string(n));

  SortResult<T> r;
  r.sorted.assign(a.begin(), a.end());
  if (companion) r.companion.emplace(companion->begin(), companion->end());
  r.relaxation = Matrix::identity(n);

  const std::size_t stages = options.num_stages.value_or(full_stage_count(n));
  for (std::size_t k = 0; k < stages; ++k) {
    auto& probs = r.exchange_probabilities.emplace_back();
    auto& pairs = r.pairs.emplace_back();
    for (std::size_t i = k % 2; i + 1 < n; i += 2) {
      const T e = detail::keep_probability(r.sorted[i], r.sorted[i + 1], s, options.descending);
      const double ev = value_of(e);
      probs.push_back(ev);
      pairs.push_back(i);
      detail::mix_pair(r.sorted, i, e);
      if (r.companion) detail::mix_pair(*r.companion, i, e);
      for (std::size_t row = 0; row < n; ++row) {
        const double c0 = r.relaxation(row, i), c1 = r.relaxation(row, i + 1);
        r.relaxation(row, i) = ev * c0 + (1.0 - ev) * c1;
        r.relaxation(row, i + 1) = (1.0 - ev) * c0 + ev * c1;
      }
    }
  }
  return r;
}

template <class T>
SortResult<T> soft_sort(const std::vector<T>& a, double s, const SortOptions& options = {}) {
  return soft_sort<T>(std::span<const T>(a), s, std::nullopt, options);
}

/// Plain SoftMax with max subtraction.
template <class T>
std::vector<T> softmax(std::span<const T> x) {
  if (x.empty()) throw std::invalid_argument("softmax: empty input");
  double m = value_of(x[0]);
  for (const auto& v : x) m = std::max(m, value_of(v));
  std::vector<T> e;
  e.reserve(x.size());
  T sum(0.0);
  for (const auto& v : x) {
    using std::exp;
    e.push_back(exp(v - T(m)));
    sum = sum + e.back();
  }
  for (auto& v : e) v = v / sum;
  return e;
}

namespace detail {

template <class T>
void check_weights(std::span<const T> x, std::span<const T> w) {
  if (x.empty()) throw std::invalid_argument("weighted softmax: empty input");
  if (x.size() != w.size())
    throw std::invalid_argument("weighted softmax: " + std::to_string(x.size()) + " values but " +
                                std::to_string(w.size()) + " weights");
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double v = value_of(w[i]);
    if (!(v > 0.0)) throw std::domain_error("weighted softmax: weight " + std::to_string(i) + " is not positive");
  }
}

}  // namespace detail

/// SoftMax(x + log w). Weights in (0, 1] smoothly select which entries take
/// part in the maximum.
template <class T>
std::vector<T> w_softmax(std::span<const T> x, std::span<const T> w) {
  detail::check_weights(x, w);
  std::vector<T> z;
  z.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    using std::log;
    z.push_back(x[i] + log(w[i]));
  }
  return softmax<T>(z);
}

/// exp(x_i) w_i / sum_j exp(x_j) w_j, the product form of w_softmax.
template <class T>
std::vector<T> w_softmax_product_form(std::span<const T> x, std::span<const T> w) {
  detail::check_weights(x, w);
  double m = value_of(x[0]);
  for (const auto& v : x) m = std::max(m, value_of(v));
  std::vector<T> e;
  T sum(0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    using std::exp;
    e.push_back(exp(x[i] - T(m)) * w[i]);
    sum = sum + e.back();
  }
  for (auto& v : e) v = v / sum;
  return e;
}

template <class T>
std::vector<T> w_softmin(std::span<const T> x, std::span<const T> w) {
  std::vector<T> neg;
  neg.reserve(x.size());
  for (const auto& v : x) neg.push_back(-v);
  return w_softmax<T>(neg, w);
}

/// Middle value of the SoftSort output (mean of the two middle values for
/// even n). Only the exchanges inside the dependency cone of the middle
/// position(s) are evaluated.
template <class T>
T soft_median_precise(std::span<const T> x, double s) {
  const std::size_t n = x.size();
  if (n == 0) throw std::invalid_argument("soft_median_precise: empty input");
  if (!(s > 0)) throw std::invalid_argument("soft_median_precise: steepness must be positive");
  if (n == 1) return x[0];

  const std::size_t stages = full_stage_count(n);
  // needed[k]: positions whose value is required after stage k.
  std::vector<std::vector<bool>> needed(stages, std::vector<bool>(n, false));
  std::vector<bool> want(n, false);
  want[n / 2] = true;
  if (n % 2 == 0) want[n / 2 - 1] = true;
  for (std::size_t k = stages; k-- > 0;) {
    needed[k] = want;
    for (std::size_t i = k % 2; i + 1 < n; i += 2)
      if (want[i] || want[i + 1]) want[i] = want[i + 1] = true;
  }

  std::vector<T> v(x.begin(), x.end());
  for (std::size_t k = 0; k < stages; ++k) {
    for (std::size_t i = k % 2; i + 1 < n; i += 2) {
      if (!needed[k][i] && !needed[k][i + 1]) continue;
      const T e = detail::keep_probability(v[i], v[i + 1], s, false);
      detail::mix_pair(v, i, e);
    }
  }
  if (n % 2 == 1) return v[n / 2];
  return (v[n / 2 - 1] + v[n / 2]) * T(0.5);
}

/// Weights of the recursive SoftMedian of degree j:
///   W(0) = ones,
///   W(j) = wSoftMin(s * (wSoftMin(s x, W(j-1)) + wSoftMax(s x, W(j-1))), W(j-1)).
/// The inner sum is large at the extremes, so each degree shifts weight away
/// from the minimum and maximum.
template <class T>
std::vector<T> soft_median_weights(std::span<const T> x, std::size_t degree, double s) {
  if (x.empty()) throw std::invalid_argument("soft_median_fast: empty input");
  if (degree < 1) throw std::invalid_argument("soft_median_fast: degree must be at least 1");
  if (!(s > 0)) throw std::invalid_argument("soft_median_fast: steepness must be positive");
  std::vector<T> scaled;
  for (const auto& v : x) scaled.push_back(v * T(s));
  std::vector<T> w(x.size(), T(1.0));
  for (std::size_t j = 0; j < degree; ++j) {
    const auto lo = w_softmin<T>(scaled, w);
    const auto hi = w_softmax<T>(scaled, w);
    std::vector<T> extremeness;
    for (std::size_t i = 0; i < x.size(); ++i) extremeness.push_back((lo[i] + hi[i]) * T(s));
    w = w_softmin<T>(extremeness, w);
  }
  return w;
}

/// Scalar read-out sum_i W_i x_i of the degree-j weights (W sums to 1).
template <class T>
T soft_median_fast(std::span<const T> x, std::size_t degree, double s = 1.0) {
  const auto w = soft_median_weights(x, degree, s);
  T acc(0.0);
  for (std::size_t i = 0; i < x.size(); ++i) acc = acc + w[i] * x[i];
  return acc;
}

/// N-dimensional row-major array.
template <class T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    std::size_t count = 1;
    for (auto e : shape) count *= e;
    if (count != data.size()) throw std::invalid_argument("tensor shape does not match data length");
  }
  static Tensor vector(std::vector<T> d) {
    const std::size_t n = d.size();
    return Tensor({n}, std::move(d));
  }
};

/// out[.., i, ..] = x[.., i+1, ..] - x[.., i, ..] along `axis`. `normalize`
/// subtracts the mean of the output; `pad` appends a zero slice at the
/// trailing edge so the output has the input's shape.
template <class T>
Tensor<T> finite_differences(const Tensor<T>& x, std::size_t axis = 0, bool normalize = false, bool pad = false) {
  if (axis >= x.shape.size())
    throw std::invalid_argument("finite_differences: axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(x.shape.size()));
  const std::size_t extent = x.shape[axis];
  if (extent < 2) throw std::invalid_argument("finite_differences: extent along axis must be at least 2");

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.shape[d];
  for (std::size_t d = axis + 1; d < x.shape.size(); ++d) inner *= x.shape[d];

  const std::size_t out_extent = pad ? extent : extent - 1;
  std::vector<T> out(outer * out_extent * inner, T(0.0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i + 1 < extent; ++i)
      for (std::size_t k = 0; k < inner; ++k) {
        const std::size_t src = (o * extent + i) * inner + k;
        out[(o * out_extent + i) * inner + k] = x.data[src + inner] - x.data[src];
      }

  if (normalize) {
    T sum(0.0);
    std::size_t count = 0;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i + 1 < extent; ++i)
        for (std::size_t k = 0; k < inner; ++k, ++count) sum = sum + out[(o * out_extent + i) * inner + k];
    const T mean = sum / T(static_cast<double>(count));
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i + 1 < extent; ++i)
        for (std::size_t k = 0; k < inner; ++k) {
          auto& v = out[(o * out_extent + i) * inner + k];
          v = v - mean;
        }
  }

  auto shape = x.shape;
  shape[axis] = out_extent;
  return Tensor<T>(std::move(shape), std::move(out));
}

}  // namespace smoothlang
