#pragma once

// Reverse-mode scalar automatic differentiation.
//
// A Tape records every primitive operation as a node holding the local
// partial derivatives with respect to its parents. Nodes are appended in
// evaluation order, so the tape is topologically sorted by construction and
// a single reverse sweep propagates adjoints to every recorded node.
//
// Scalars without a tape are constants; mixing constants and tape-bound
// Scalars records only the tape-bound side.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace smoothlang::ad {

class Tape;

class Scalar {
 public:
  Scalar() = default;
  Scalar(double v) : value_(v) {}  // NOLINT: implicit constant embedding

  double value() const { return value_; }
  const Tape* tape() const { return tape_; }
  std::uint32_t index() const { return index_; }
  bool is_constant() const { return tape_ == nullptr; }

 private:
  friend class Tape;
  Scalar(double v, Tape* t, std::uint32_t i) : value_(v), tape_(t), index_(i) {}

  double value_ = 0.0;
  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

/// Adjoints of one backward pass, indexed by tape node.
class Gradients {
 public:
  Gradients(const Tape* tape, std::vector<double> adjoints)
      : tape_(tape), adjoints_(std::move(adjoints)) {}

  /// d(output)/d(input). Constants and Scalars from other tapes have zero
  /// gradient only if constant; foreign tapes are a usage error.
  double wrt(const Scalar& input) const {
    if (input.is_constant()) return 0.0;
    if (input.tape() != tape_) throw std::logic_error("gradient requested for a Scalar from another tape");
    return input.index() < adjoints_.size() ? adjoints_[input.index()] : 0.0;
  }

  std::vector<double> wrt(std::span<const Scalar> inputs) const {
    std::vector<double> out;
    out.reserve(inputs.size());
    for (const auto& s : inputs) out.push_back(wrt(s));
    return out;
  }

 private:
  const Tape* tape_;
  std::vector<double> adjoints_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  /// Registers an independent input.
  Scalar variable(double x) {
    if (!std::isfinite(x)) throw std::domain_error("cannot lift a non-finite value onto the tape");
    return push_node(x, {}, {});
  }

  /// Records a node with arbitrary arity. Constant parents are dropped.
  Scalar record(double value, std::span<const Scalar> parents, std::span<const double> partials) {
    const auto begin = static_cast<std::uint32_t>(edge_parent_.size());
    for (std::size_t k = 0; k < parents.size(); ++k) {
      if (parents[k].is_constant()) continue;
      if (parents[k].tape_ != this) throw std::logic_error("operands recorded on different tapes");
      edge_parent_.push_back(parents[k].index_);
      edge_partial_.push_back(partials[k]);
    }
    return push_edges(value, begin);
  }

  /// Records a node whose parents are given as raw tape indices.
  /// Used by fused kernels that already validated their operands.
  Scalar record_indexed(double value, std::span<const std::uint32_t> parents,
                        std::span<const double> partials) {
    const auto begin = static_cast<std::uint32_t>(edge_parent_.size());
    edge_parent_.insert(edge_parent_.end(), parents.begin(), parents.end());
    edge_partial_.insert(edge_partial_.end(), partials.begin(), partials.end());
    return push_edges(value, begin);
  }

  std::size_t size() const { return edge_begin_.size(); }

  Gradients backward(const Scalar& output) const {
    if (output.is_constant() || output.tape_ != this || output.index_ >= size())
      throw std::logic_error("backward() called on a Scalar that is not recorded on this tape");
    std::vector<double> adj(output.index_ + 1, 0.0);
    adj[output.index_] = 1.0;
    for (std::uint32_t node = output.index_ + 1; node-- > 0;) {
      const double a = adj[node];
      if (a == 0.0) continue;
      const std::uint32_t end = node + 1 < size() ? edge_begin_[node + 1] : static_cast<std::uint32_t>(edge_parent_.size());
      for (std::uint32_t e = edge_begin_[node]; e < end; ++e) adj[edge_parent_[e]] += a * edge_partial_[e];
    }
    return Gradients(this, std::move(adj));
  }

 private:
  Scalar push_node(double value, std::span<const std::uint32_t> parents, std::span<const double> partials) {
    return record_indexed(value, parents, partials);
  }

  Scalar push_edges(double value, std::uint32_t begin) {
    if (edge_begin_.size() >= std::numeric_limits<std::uint32_t>::max()) throw std::length_error("tape is full");
    const auto idx = static_cast<std::uint32_t>(edge_begin_.size());
    edge_begin_.push_back(begin);
    return Scalar(value, this, idx);
  }

  std::vector<std::uint32_t> edge_begin_;
  std::vector<std::uint32_t> edge_parent_;
  std::vector<double> edge_partial_;
};

inline Gradients backward(const Scalar& output) {
  if (output.is_constant()) throw std::logic_error("backward() called on a constant");
  return output.tape()->backward(output);
}

namespace detail {

inline Tape* common_tape(const Scalar& a, const Scalar& b) {
  Tape* ta = const_cast<Tape*>(a.tape());
  Tape* tb = const_cast<Tape*>(b.tape());
  if (ta && tb && ta != tb) throw std::logic_error("operands recorded on different tapes");
  return ta ? ta : tb;
}

inline Scalar unary(const Scalar& a, double value, double da) {
  if (a.is_constant()) return Scalar(value);
  const Scalar p[1] = {a};
  const double d[1] = {da};
  return const_cast<Tape*>(a.tape())->record(value, p, d);
}

inline Scalar binary(const Scalar& a, const Scalar& b, double value, double da, double db) {
  Tape* t = common_tape(a, b);
  if (!t) return Scalar(value);
  const Scalar p[2] = {a, b};
  const double d[2] = {da, db};
  return t->record(value, p, d);
}

}  // namespace detail

inline Scalar operator+(const Scalar& a, const Scalar& b) {
  return detail::binary(a, b, a.value() + b.value(), 1.0, 1.0);
}
inline Scalar operator-(const Scalar& a, const Scalar& b) {
  return detail::binary(a, b, a.value() - b.value(), 1.0, -1.0);
}
inline Scalar operator*(const Scalar& a, const Scalar& b) {
  return detail::binary(a, b, a.value() * b.value(), b.value(), a.value());
}
inline Scalar operator/(const Scalar& a, const Scalar& b) {
  const double q = a.value() / b.value();
  return detail::binary(a, b, q, 1.0 / b.value(), -q / b.value());
}
inline Scalar operator-(const Scalar& a) { return detail::unary(a, -a.value(), -1.0); }

inline Scalar& operator+=(Scalar& a, const Scalar& b) { return a = a + b; }
inline Scalar& operator-=(Scalar& a, const Scalar& b) { return a = a - b; }
inline Scalar& operator*=(Scalar& a, const Scalar& b) { return a = a * b; }
inline Scalar& operator/=(Scalar& a, const Scalar& b) { return a = a / b; }

// Comparisons look at values only.
inline bool operator<(const Scalar& a, const Scalar& b) { return a.value() < b.value(); }
inline bool operator>(const Scalar& a, const Scalar& b) { return a.value() > b.value(); }
inline bool operator<=(const Scalar& a, const Scalar& b) { return a.value() <= b.value(); }
inline bool operator>=(const Scalar& a, const Scalar& b) { return a.value() >= b.value(); }

inline Scalar exp(const Scalar& a) {
  const double v = std::exp(a.value());
  return detail::unary(a, v, v);
}
inline Scalar log(const Scalar& a) { return detail::unary(a, std::log(a.value()), 1.0 / a.value()); }
inline Scalar sqrt(const Scalar& a) {
  const double v = std::sqrt(a.value());
  return detail::unary(a, v, 0.5 / v);
}
inline Scalar tanh(const Scalar& a) {
  const double v = std::tanh(a.value());
  return detail::unary(a, v, 1.0 - v * v);
}

// |x| with derivative 0 at exactly 0.
inline Scalar abs(const Scalar& a) {
  const double x = a.value();
  return detail::unary(a, std::abs(x), x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
}

// Ties select the first operand.
inline Scalar min(const Scalar& a, const Scalar& b) {
  const bool first = a.value() <= b.value();
  return detail::binary(a, b, first ? a.value() : b.value(), first ? 1.0 : 0.0, first ? 0.0 : 1.0);
}
inline Scalar max(const Scalar& a, const Scalar& b) {
  const bool first = a.value() >= b.value();
  return detail::binary(a, b, first ? a.value() : b.value(), first ? 1.0 : 0.0, first ? 0.0 : 1.0);
}

inline constexpr double kSechClamp = 700.0;

}  // namespace smoothlang::ad

namespace smoothlang {

// Value-type helpers usable with both double and ad::Scalar.

inline double value_of(double x) { return x; }
inline double value_of(const ad::Scalar& x) { return x.value(); }

inline double sech(double x) {
  if (std::abs(x) > ad::kSechClamp) return 0.0;
  return 2.0 / (std::exp(x) + std::exp(-x));
}

inline ad::Scalar sech(const ad::Scalar& a) {
  const double x = a.value();
  if (std::abs(x) > ad::kSechClamp) return ad::detail::unary(a, 0.0, 0.0);
  const double v = 2.0 / (std::exp(x) + std::exp(-x));
  return ad::detail::unary(a, v, -v * std::tanh(x));
}

/// Logistic sigmoid 1 / (1 + e^-x), evaluated without overflow.
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline ad::Scalar sigmoid(const ad::Scalar& a) {
  const double v = sigmoid(a.value());
  return ad::detail::unary(a, v, v * (1.0 - v));
}

}  // namespace smoothlang
