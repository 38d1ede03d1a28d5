#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "smoothlang/gradcheck.hpp"
#include "smoothlang/interp.hpp"
#include "smoothlang/while_lang.hpp"

namespace smoothlang {
namespace {

using ad::Scalar;
using ad::Tape;

const lang::Program& multiplication() {
  static const lang::Program p = lang::parse(R"(
WHILE x2 != 0 DO
    x3 := x1
    WHILE x3 != 0 DO
        x0 := x0 + 1
        x3 := x3 - 1
    END
    x2 := x2 - 1
END
)");
  return p;
}

SmoothConfig config(Grade g, double s = 2.0, double eps = 1e-7) {
  SmoothConfig c;
  c.grade = g;
  c.steepness = s;
  c.epsilon = eps;
  return c;
}

TEST(Phi, ShoulderedExamples) {
  EXPECT_EQ(phi0(0.0), 0.0);
  EXPECT_EQ(phi0(0.5), 0.5);
  EXPECT_EQ(phi0(-3.0), 1.0);
}

TEST(Phi, SmoothExamples) {
  EXPECT_EQ(phi_inf(0.0, 1.0), 0.0);
  const double oracle = 1.0 - 2.0 / (std::exp(2.0) + std::exp(-2.0));
  EXPECT_NEAR(phi_inf(1.0, 2.0), oracle, 1e-15);
  EXPECT_NEAR(phi_inf(1.0, 2.0), 0.734, 5e-4);
}

TEST(Phi, SymmetryAndDominance) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng);
    EXPECT_EQ(phi_inf(x, 3.0), phi_inf(-x, 3.0));
    EXPECT_GE(phi0(x), phi_inf(x, 1.0));
    EXPECT_GE(phi_inf(x, 1.0), 0.0);
    EXPECT_LT(phi_inf(x, 1.0), 1.0 + 1e-15);
  }
}

TEST(Phi, StepFunctions) {
  EXPECT_EQ(smooth_step(0.0), 0.0);
  EXPECT_EQ(smooth_step(1.0), 1.0);
  EXPECT_EQ(smooth_step(0.5), 0.5);
  EXPECT_EQ(smooth_step_as_printed(1.0), -1.0);
  EXPECT_EQ(heaviside(-0.1), 0.0);
  EXPECT_EQ(heaviside(0.0), 1.0);
  EXPECT_NEAR(logistic(0.0), 0.5, 1e-15);
}

TEST(Config, RejectsInvalid) {
  SmoothConfig c;
  c.epsilon = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.steepness = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.max_iterations = 0;
  EXPECT_THROW(run_smooth(multiplication(), {}, c), std::invalid_argument);
}

TEST(RunSmooth, C0MatchesDiscreteOnIntegerGrid) {
  for (int a = 0; a <= 8; ++a) {
    for (int b = 0; b <= 8; ++b) {
      const std::map<std::uint32_t, double> in{{1, a}, {2, b}};
      const double smooth = run_smooth(multiplication(), in, config(Grade::c0, 2.0, 1e-9)).output();
      const double crisp = lang::run_discrete(multiplication(), in).env.get(lang::Var{0});
      EXPECT_EQ(smooth, crisp) << a << "*" << b;
    }
  }
}

TEST(RunSmooth, C0ThreeTimesFourIsTwelve) {
  EXPECT_EQ(run_smooth(multiplication(), {{1, 3.0}, {2, 4.0}}, config(Grade::c0, 2.0, 1e-9)).output(), 12.0);
}

TEST(RunSmooth, CInfThreeTimesFourIsClose) {
  const auto run = run_smooth(multiplication(), {{1, 3.0}, {2, 4.0}}, config(Grade::c_inf, 5.0));
  const double delta = run.output() / 12.0 - 1.0;
  EXPECT_LT(std::abs(delta), 0.05) << run.output();
  EXPECT_FALSE(run.trace.truncated);
}

TEST(RunSmooth, DiscreteGradeDelegates) {
  const auto run = run_smooth(multiplication(), {{1, 3.0}, {2, 4.0}}, config(Grade::discrete));
  EXPECT_EQ(run.output(), 12.0);
  EXPECT_EQ(run.trace.grade, Grade::discrete);
  EXPECT_EQ(run.trace.discrete_iterations, 4u + 12u);
}

// Frozen from this implementation at the default configuration.
TEST(RunSmooth, NonIntegerInterpolationGolden) {
  Tape tape;
  const Scalar x1 = tape.variable(2.5), x2 = tape.variable(1.5);
  const auto run = run_smooth<Scalar>(multiplication(), {{1, x1}, {2, x2}}, SmoothConfig{});
  const Scalar out = run.output();
  EXPECT_NEAR(out.value(), 2.7206073702430826, 1e-12);
  EXPECT_FALSE(run.trace.truncated);
  const auto g = tape.backward(out);
  EXPECT_TRUE(std::isfinite(g.wrt(x1)));
  EXPECT_TRUE(std::isfinite(g.wrt(x2)));
  EXPECT_GT(g.wrt(x1), 0.0);
  EXPECT_GT(g.wrt(x2), 0.0);
}

TEST(RunSmooth, GradientsMatchCentralDifferences) {
  const ScalarFunction f = [](Tape&, std::span<const Scalar> x) {
    return run_smooth<Scalar>(multiplication(), {{1, x[0]}, {2, x[1]}}, SmoothConfig{}).output();
  };
  for (const auto& pt : std::vector<std::vector<double>>{{2.5, 1.5}, {1.3, 2.2}, {3.0, 0.7}}) {
    const auto r = gradcheck(f, pt, 1e-5, 1e-4);
    EXPECT_TRUE(r.pass) << pt[0] << "," << pt[1] << ": " << r.max_rel_error;
  }
}

TEST(RunSmooth, RejectsNonFiniteInput) {
  EXPECT_THROW(run_smooth(multiplication(), {{1, std::nan("")}}, SmoothConfig{}), std::domain_error);
}

TEST(RunSmooth, EpsilonHalvingIsNegligible) {
  for (const auto& [a, b] : std::vector<std::pair<double, double>>{{3, 4}, {2.5, 1.5}, {1, 5}}) {
    const double eps = 1e-7;
    const double full = run_smooth(multiplication(), {{1, a}, {2, b}}, config(Grade::c_inf, 2.0, eps)).output();
    const double half = run_smooth(multiplication(), {{1, a}, {2, b}}, config(Grade::c_inf, 2.0, eps / 2)).output();
    EXPECT_LT(std::abs(full - half), 10 * eps) << a << "," << b;
  }
}

TEST(RunSmooth, ProbabilityIsMonotoneAndBounded) {
  const auto countdown = lang::parse("WHILE x1 != 0 DO x1 := x1 - 1 END");
  for (const double start : {5.0, 0.9, 3.7}) {
    auto c = config(Grade::c0);
    c.record_p_history = true;
    const auto run = run_smooth(countdown, {{1, start}}, c);
    ASSERT_EQ(run.trace.loops.size(), 1u);
    ASSERT_EQ(run.trace.loops[0].executions.size(), 1u);
    const auto& hist = run.trace.loops[0].executions[0].p_history;
    ASSERT_FALSE(hist.empty());
    const double bound = phi0(start);
    for (std::size_t n = 0; n < hist.size(); ++n) {
      if (n > 0) {
        EXPECT_LE(hist[n], hist[n - 1]);
      }
      EXPECT_LE(hist[n], std::pow(bound, static_cast<double>(n + 1)) + 1e-15);
      EXPECT_GE(hist[n], 0.0);
    }
    EXPECT_LE(hist.back(), c.epsilon);
  }
}

TEST(RunSmooth, TruncationIsFlaggedNotThrown) {
  const auto grow = lang::parse("WHILE x1 != 0 DO x1 := x1 + 1 END");
  auto c = config(Grade::c_inf);
  c.max_iterations = 50;
  const auto run = run_smooth(grow, {{1, 3.0}}, c);
  EXPECT_TRUE(run.trace.truncated);
  ASSERT_EQ(run.trace.loops.size(), 1u);
  EXPECT_TRUE(run.trace.loops[0].executions[0].truncated);
  EXPECT_EQ(run.trace.loops[0].executions[0].iterations, 50u);
}

TEST(RunSmooth, TraceCountsNestedExecutions) {
  const auto run = run_smooth(multiplication(), {{1, 2.0}, {2, 3.0}}, config(Grade::c0));
  ASSERT_EQ(run.trace.loops.size(), 2u);
  EXPECT_EQ(run.trace.loops[0].loop_id, 0u);
  EXPECT_EQ(run.trace.loops[0].condition, lang::Var{2});
  EXPECT_EQ(run.trace.loops[0].executions.size(), 1u);
  EXPECT_EQ(run.trace.loops[1].condition, lang::Var{3});
  // the outer loop's final pass runs at p = 0 and still enters the inner loop
  EXPECT_EQ(run.trace.loops[1].executions.size(), 4u);
  EXPECT_EQ(run.trace.loops[1].executions.back().final_p, 0.0);
}

TEST(RunSmooth, ZeroConditionSkipsBody) {
  const auto run = run_smooth(multiplication(), {{1, 4.0}, {2, 0.0}}, SmoothConfig{});
  EXPECT_EQ(run.output(), 0.0);
}

TEST(Calibration, IdentityLeavesOutputUnchanged) {
  const auto n = lang::count_assignments(multiplication());
  const auto id = Calibration<double>::identity(n);
  const auto plain = run_smooth(multiplication(), {{1, 2.5}, {2, 1.5}}, SmoothConfig{});
  const auto cal = run_smooth<double>(multiplication(), {{1, 2.5}, {2, 1.5}}, SmoothConfig{}, &id);
  EXPECT_EQ(plain.output(), cal.output());
}

TEST(Calibration, WrongSizeThrows) {
  const auto bad = Calibration<double>::identity(1);
  EXPECT_THROW(run_smooth<double>(multiplication(), {{1, 1.0}}, SmoothConfig{}, &bad), std::invalid_argument);
}

std::vector<CalibrationSample> grid_dataset() {
  std::vector<std::map<std::uint32_t, double>> grid;
  for (int a = 1; a <= 5; ++a)
    for (int b = 1; b <= 5; ++b) grid.push_back({{1, a}, {2, b}});
  return discrete_dataset(multiplication(), grid);
}

TEST(Calibration, ReducesError) {
  const auto data = grid_dataset();
  ASSERT_EQ(data.size(), 25u);
  EXPECT_EQ(data.back().output, 25.0);
  CalibrationSettings settings;
  settings.steps = 100;
  const auto r = calibrate(multiplication(), data, config(Grade::c_inf, 5.0), settings);
  EXPECT_FALSE(r.diverged) << r.diagnostic;
  EXPECT_LT(r.final_mse, r.initial_mse);
  EXPECT_EQ(r.loss_history.size(), 100u);
}

TEST(Calibration, ZeroLearningRateIsIdentity) {
  const auto data = grid_dataset();
  CalibrationSettings settings;
  settings.steps = 3;
  settings.adam.learning_rate = 0.0;
  const auto r = calibrate(multiplication(), data, config(Grade::c_inf, 5.0), settings);
  for (std::size_t k = 0; k < r.calibration.size(); ++k) {
    EXPECT_EQ(r.calibration.weight[k], 1.0);
    EXPECT_EQ(r.calibration.bias[k], 0.0);
  }
  EXPECT_EQ(r.final_mse, r.initial_mse);
}

TEST(Calibration, RejectsEmptyDatasetAndWrongGrade) {
  EXPECT_THROW(calibrate(multiplication(), {}, SmoothConfig{}), std::invalid_argument);
  EXPECT_THROW(calibrate(multiplication(), grid_dataset(), config(Grade::c0)), std::invalid_argument);
}

}  // namespace
}  // namespace smoothlang
