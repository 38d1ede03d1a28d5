#pragma once

// Smooth interpretation of WHILE-programs.
//
// Every statement executes to the extent of an execution probability p.
// A loop multiplies p by phi(condition) at each iteration head and runs its
// body under the updated p; the loop is left once p <= epsilon at the end of
// an iteration or after max_iterations. Statements are relaxed as
//
//   x := y      ->  x := p*y + (1-p)*x
//   x := x + 1  ->  x := x + p
//   x := x - 1  ->  x := x - p
//
// The interpreter is templated on the value type so that it runs over plain
// doubles or over ad::Scalar for exact gradients.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "smoothlang/autodiff.hpp"
#include "smoothlang/optim.hpp"
#include "smoothlang/while_lang.hpp"

namespace smoothlang {

enum class Grade { discrete, c0, c_inf };

inline const char* to_string(Grade g) {
  switch (g) {
    case Grade::discrete: return "discrete";
    case Grade::c0: return "c0";
    case Grade::c_inf: return "cinf";
  }
  return "?";
}

/// min(1, |x|): the shouldered fuzzy set, C0 with kinks at -1, 0, 1.
template <class T>
T phi0(const T& x) {
  using std::abs;
  using std::min;
  return min(T(1.0), abs(x));
}

/// 1 - sech(s x), equal to (e^{sx} - 1)^2 / (e^{2sx} + 1).
template <class T>
T phi_inf(const T& x, double s) {
  return T(1.0) - sech(T(s) * x);
}

/// Logistic sigmoid with steepness s.
template <class T>
T logistic(const T& x, double s = 1.0) {
  return sigmoid(T(s) * x);
}

inline double heaviside(double x) { return x < 0 ? 0.0 : 1.0; }

/// C1 smooth step 3x^2 - 2x^3 on [0, 1], 0 below and 1 above.
template <class T>
T smooth_step(const T& x) {
  if (value_of(x) <= 0.0) return T(0.0);
  if (value_of(x) >= 1.0) return T(1.0);
  return x * x * (T(3.0) - T(2.0) * x);
}

/// The polynomial x^2 - 2x^3 on [0, 1]; reaches -1 at x = 1, so it is not a
/// step function. Kept for comparison with smooth_step.
template <class T>
T smooth_step_as_printed(const T& x) {
  if (value_of(x) <= 0.0) return T(0.0);
  if (value_of(x) > 1.0) return T(1.0);
  return x * x * (T(1.0) - T(2.0) * x);
}

struct SmoothConfig {
  Grade grade = Grade::c_inf;
  double steepness = 2.0;
  double epsilon = 1e-7;
  std::uint64_t max_iterations = 10'000;  // per loop execution
  std::uint64_t discrete_cap = lang::kDefaultIterationCap;
  bool record_p_history = false;

  void validate() const {
    if (!(steepness > 0) || !std::isfinite(steepness)) throw std::invalid_argument("steepness must be positive");
    if (!(epsilon > 0) || !std::isfinite(epsilon)) throw std::invalid_argument("epsilon must be positive");
    if (max_iterations == 0) throw std::invalid_argument("max_iterations must be positive");
  }
};

/// Per-assignment affine correction v -> weight * v + bias, indexed by the
/// pre-order position of Assign/Inc/Dec statements.
template <class T>
struct Calibration {
  std::vector<T> weight;
  std::vector<T> bias;

  static Calibration identity(std::size_t n) { return {std::vector<T>(n, T(1.0)), std::vector<T>(n, T(0.0))}; }
  std::size_t size() const { return weight.size(); }
};

struct LoopExecution {
  std::uint64_t iterations = 0;
  double final_p = 0.0;
  bool truncated = false;
  std::vector<double> p_history;  // p after each iteration head, if requested
};

struct LoopTrace {
  std::size_t loop_id = 0;  // pre-order position among loops
  lang::Var condition;
  std::vector<LoopExecution> executions;
};

struct Trace {
  Grade grade = Grade::c_inf;
  std::vector<LoopTrace> loops;
  std::uint64_t discrete_iterations = 0;
  std::vector<std::string> warnings;
  bool truncated = false;
};

template <class T>
struct SmoothRun {
  lang::Env<T> env;
  Trace trace;
  T output() const { return env.get(lang::Var{0}); }
};

namespace detail {

template <class T>
class SmoothExecutor {
 public:
  SmoothExecutor(const lang::Program& program, const SmoothConfig& config, const Calibration<T>* calibration,
                 SmoothRun<T>& run)
      : config_(config), calibration_(calibration), run_(run) {
    index(program.body);
    if (calibration_ && (calibration_->weight.size() != assignment_ids_.size() ||
                         calibration_->bias.size() != assignment_ids_.size()))
      throw std::invalid_argument("calibration has " + std::to_string(calibration_->weight.size()) +
                                  " entries but the program has " + std::to_string(assignment_ids_.size()) +
                                  " assignments");
  }

  void exec(const std::vector<lang::Statement>& body, const T& p) {
    for (const auto& s : body) {
      if (const auto* a = std::get_if<lang::Assign>(&s.node)) {
        assign(s, a->dst, p * run_.env.get(a->src) + (T(1.0) - p) * run_.env.get(a->dst));
      } else if (const auto* inc = std::get_if<lang::Inc>(&s.node)) {
        assign(s, inc->var, run_.env.get(inc->var) + p);
      } else if (const auto* dec = std::get_if<lang::Dec>(&s.node)) {
        assign(s, dec->var, run_.env.get(dec->var) - p);
      } else {
        loop(std::get<lang::While>(s.node), p);
      }
    }
  }

 private:
  void index(const std::vector<lang::Statement>& body) {
    for (const auto& s : body) {
      if (const auto* w = std::get_if<lang::While>(&s.node)) {
        loop_ids_.emplace(w, run_.trace.loops.size());
        run_.trace.loops.push_back(LoopTrace{run_.trace.loops.size(), w->cond, {}});
        index(w->body);
      } else {
        assignment_ids_.emplace(&s, assignment_ids_.size());
      }
    }
  }

  void assign(const lang::Statement& s, lang::Var v, T value) {
    if (calibration_) {
      const std::size_t k = assignment_ids_.at(&s);
      value = calibration_->weight[k] * value + calibration_->bias[k];
    }
    run_.env.set(v, std::move(value));
  }

  T phi(const T& x) const { return config_.grade == Grade::c0 ? phi0(x) : phi_inf(x, config_.steepness); }

  // Do-while shape: phi is evaluated at the iteration head, the body runs
  // under the updated p, and the exit test uses that same p.
  void loop(const lang::While& w, const T& p_outer) {
    LoopExecution ex;
    T p = p_outer;
    for (;;) {
      p = p * phi(run_.env.get(w.cond));
      ++ex.iterations;
      if (config_.record_p_history) ex.p_history.push_back(value_of(p));
      exec(w.body, p);
      if (value_of(p) <= config_.epsilon) break;
      if (ex.iterations >= config_.max_iterations) {
        ex.truncated = true;
        run_.trace.truncated = true;
        break;
      }
    }
    ex.final_p = value_of(p);
    run_.trace.loops[loop_ids_.at(&w)].executions.push_back(std::move(ex));
  }

  const SmoothConfig& config_;
  const Calibration<T>* calibration_;
  SmoothRun<T>& run_;
  std::unordered_map<const lang::While*, std::size_t> loop_ids_;
  std::unordered_map<const lang::Statement*, std::size_t> assignment_ids_;
};

}  // namespace detail

/// Runs `program` under `config`. Inputs are bound before execution; all
/// other variables start at 0. With T = ad::Scalar and inputs lifted onto a
/// tape, the returned environment can be differentiated w.r.t. the inputs
/// (and calibration parameters, if they are tape variables too).
///
/// The discrete grade delegates to lang::run_discrete; its NonTerminationError
/// propagates.
template <class T>
SmoothRun<T> run_smooth(const lang::Program& program, const std::map<std::uint32_t, T>& inputs,
                        const SmoothConfig& config, const Calibration<T>* calibration = nullptr) {
  config.validate();
  SmoothRun<T> run;
  run.trace.grade = config.grade;
  for (const auto& [idx, v] : inputs)
    if (!std::isfinite(value_of(v))) throw std::domain_error("input x" + std::to_string(idx) + " is not finite");

  if (config.grade == Grade::discrete) {
    std::map<std::uint32_t, double> crisp;
    for (const auto& [idx, v] : inputs) crisp[idx] = value_of(v);
    auto d = lang::run_discrete(program, crisp, config.discrete_cap);
    for (const auto& [idx, v] : d.env.values()) run.env.set(lang::Var{idx}, T(v));
    run.trace.discrete_iterations = d.loop_iterations;
    run.trace.warnings = std::move(d.warnings);
    return run;
  }

  for (const auto& [idx, v] : inputs) run.env.set(lang::Var{idx}, v);
  detail::SmoothExecutor<T> exec(program, config, calibration, run);
  exec.exec(program.body, T(1.0));
  return run;
}

/// Convenience overload over plain doubles.
inline SmoothRun<double> run_smooth(const lang::Program& program, const std::map<std::uint32_t, double>& inputs,
                                    const SmoothConfig& config) {
  return run_smooth<double>(program, inputs, config, nullptr);
}

struct CalibrationSample {
  std::map<std::uint32_t, double> inputs;
  double output = 0.0;
};

struct CalibrationSettings {
  std::size_t steps = 500;
  AdamSettings adam{.learning_rate = 1e-3};
  double regularization = 1e-3;  // pulls weights to 1 and biases to 0
};

struct CalibrationResult {
  Calibration<double> calibration;
  std::vector<double> loss_history;  // objective before each update
  double initial_mse = 0.0;
  double final_mse = 0.0;
  bool diverged = false;
  std::string diagnostic;
};

/// Builds a calibration dataset from the crisp semantics.
inline std::vector<CalibrationSample> discrete_dataset(const lang::Program& program,
                                                       const std::vector<std::map<std::uint32_t, double>>& grid) {
  std::vector<CalibrationSample> out;
  for (const auto& inputs : grid) out.push_back({inputs, lang::run_discrete(program, inputs).env.get(lang::Var{0})});
  return out;
}

namespace detail {

struct CalibrationObjective {
  double loss;
  double mse;
  std::vector<double> grad;  // weights then biases
};

inline CalibrationObjective calibration_objective(const lang::Program& program,
                                                  const std::vector<CalibrationSample>& data,
                                                  const SmoothConfig& config, const Calibration<double>& cal,
                                                  double lambda) {
  ad::Tape tape;
  Calibration<ad::Scalar> c;
  for (double w : cal.weight) c.weight.push_back(tape.variable(w));
  for (double b : cal.bias) c.bias.push_back(tape.variable(b));

  ad::Scalar sq(0.0);
  for (const auto& sample : data) {
    std::map<std::uint32_t, ad::Scalar> in;
    for (const auto& [idx, v] : sample.inputs) in.emplace(idx, ad::Scalar(v));
    const auto run = run_smooth<ad::Scalar>(program, in, config, &c);
    const ad::Scalar err = run.output() - ad::Scalar(sample.output);
    sq = sq + err * err;
  }
  const ad::Scalar mse = sq / ad::Scalar(static_cast<double>(data.size()));
  ad::Scalar reg(0.0);
  for (std::size_t k = 0; k < c.size(); ++k) {
    const ad::Scalar dw = c.weight[k] - ad::Scalar(1.0);
    reg = reg + dw * dw + c.bias[k] * c.bias[k];
  }
  const ad::Scalar loss = mse + ad::Scalar(lambda) * reg;

  CalibrationObjective out{loss.value(), mse.value(), {}};
  const auto g = tape.backward(loss);
  for (const auto& w : c.weight) out.grad.push_back(g.wrt(w));
  for (const auto& b : c.bias) out.grad.push_back(g.wrt(b));
  return out;
}

}  // namespace detail

/// Fits per-assignment (weight, bias) pairs so that the smooth output matches
/// the crisp outputs of `data`. Starts from the identity calibration.
inline CalibrationResult calibrate(const lang::Program& program, const std::vector<CalibrationSample>& data,
                                   const SmoothConfig& config, const CalibrationSettings& settings = {}) {
  if (data.empty()) throw std::invalid_argument("calibrate: dataset is empty");
  if (config.grade != Grade::c_inf) throw std::invalid_argument("calibrate: requires the C-infinity grade");
  config.validate();

  const std::size_t n = lang::count_assignments(program);
  CalibrationResult result;
  result.calibration = Calibration<double>::identity(n);

  std::vector<double> params(2 * n);
  auto unpack = [&](Calibration<double>& c) {
    for (std::size_t k = 0; k < n; ++k) {
      c.weight[k] = params[k];
      c.bias[k] = params[n + k];
    }
  };
  for (std::size_t k = 0; k < n; ++k) params[k] = 1.0;

  Adam adam(params.size(), settings.adam);
  Calibration<double> current = result.calibration;
  for (std::size_t step = 0; step < settings.steps; ++step) {
    const auto obj = detail::calibration_objective(program, data, config, current, settings.regularization);
    if (!std::isfinite(obj.loss)) {
      result.diverged = true;
      result.diagnostic = "non-finite loss at step " + std::to_string(step);
      break;
    }
    if (step == 0) result.initial_mse = obj.mse;
    result.loss_history.push_back(obj.loss);
    result.calibration = current;
    adam.step(params, obj.grad);
    unpack(current);
  }
  if (!result.diverged) {
    const auto last = detail::calibration_objective(program, data, config, current, settings.regularization);
    if (std::isfinite(last.loss)) {
      result.calibration = current;
      result.final_mse = last.mse;
      if (settings.steps == 0) result.initial_mse = last.mse;
    } else {
      result.diverged = true;
      result.diagnostic = "non-finite loss after the final update";
    }
  }
  if (result.diverged) {
    result.final_mse = detail::calibration_objective(program, data, config, result.calibration, 0.0).mse;
  }
  return result;
}

}  // namespace smoothlang
