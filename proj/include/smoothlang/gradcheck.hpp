#pragma once

// Compares reverse-mode gradients with central finite differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoothlang/autodiff.hpp"

namespace smoothlang {

using ScalarFunction = std::function<ad::Scalar(ad::Tape&, std::span<const ad::Scalar>)>;

struct GradcheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_error;  // |analytic - numeric| / max(1, |numeric|)
  double value = 0.0;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool finite = true;
  bool pass = false;
  std::string note;
};

inline double evaluate(const ScalarFunction& f, std::span<const double> point) {
  ad::Tape tape;
  std::vector<ad::Scalar> inputs;
  inputs.reserve(point.size());
  for (double x : point) inputs.push_back(tape.variable(x));
  return f(tape, inputs).value();
}

/// Non-finite intermediates are reported in the result, never thrown.
inline GradcheckReport gradcheck(const ScalarFunction& f, std::span<const double> point, double h = 1e-5,
                                 double tol = 1e-5) {
  if (!(h > 0)) throw std::invalid_argument("gradcheck step h must be positive");
  GradcheckReport report;
  report.tol = tol;
  try {
    ad::Tape tape;
    std::vector<ad::Scalar> inputs;
    for (double x : point) inputs.push_back(tape.variable(x));
    const ad::Scalar out = f(tape, inputs);
    report.value = out.value();
    if (out.is_constant()) {
      report.analytic.assign(point.size(), 0.0);
    } else {
      report.analytic = tape.backward(out).wrt(inputs);
    }

    std::vector<double> probe(point.begin(), point.end());
    for (std::size_t i = 0; i < point.size(); ++i) {
      probe[i] = point[i] + h;
      const double up = evaluate(f, probe);
      probe[i] = point[i] - h;
      const double down = evaluate(f, probe);
      probe[i] = point[i];
      report.numeric.push_back((up - down) / (2.0 * h));
    }
  } catch (const std::exception& e) {
    report.finite = false;
    report.note = e.what();
    return report;
  }

  for (std::size_t i = 0; i < point.size(); ++i) {
    const double a = report.analytic[i];
    const double n = report.numeric[i];
    if (!std::isfinite(a) || !std::isfinite(n)) {
      report.finite = false;
      report.rel_error.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    const double err = std::abs(a - n) / std::max(1.0, std::abs(n));
    report.rel_error.push_back(err);
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  if (!std::isfinite(report.value)) report.finite = false;
  if (!report.finite) {
    report.note = "non-finite value or gradient";
    report.max_rel_error = std::numeric_limits<double>::infinity();
  }
  report.pass = report.finite && report.max_rel_error <= tol;
  return report;
}

}  // namespace smoothlang
