#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace smoothlang {

struct AdamSettings {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment gradient descent over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t dim, AdamSettings settings = {}) : s_(settings), m_(dim, 0.0), v_(dim, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw std::invalid_argument("Adam: parameter/gradient size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = s_.beta1 * m_[i] + (1.0 - s_.beta1) * grad[i];
      v_[i] = s_.beta2 * v_[i] + (1.0 - s_.beta2) * grad[i] * grad[i];
      params[i] -= s_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + s_.eps);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  AdamSettings s_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace smoothlang
