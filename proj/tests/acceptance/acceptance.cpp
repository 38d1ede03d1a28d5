// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "smoothlang/smoothlang.hpp"

namespace {

using namespace smoothlang;
using ad::Scalar;
using ad::Tape;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double time_limit_s;  // 0: none
  std::function<Outcome()> check;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

const lang::Program& multiplication() {
  static const lang::Program p = lang::parse(
      "WHILE x2 != 0 DO\n"
      "    x3 := x1\n"
      "    WHILE x3 != 0 DO\n"
      "        x0 := x0 + 1\n"
      "        x3 := x3 - 1\n"
      "    END\n"
      "    x2 := x2 - 1\n"
      "END\n");
  return p;
}

std::vector<double> uniform_vector(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Scalar readout(const std::vector<Scalar>& v) {
  Scalar acc(0.0);
  for (std::size_t i = 0; i < v.size(); ++i) acc = acc + Scalar(static_cast<double>(i + 1)) * v[i];
  return acc;
}

// 1
Outcome c0_agreement() {
  SmoothConfig cfg;
  cfg.grade = Grade::c0;
  double worst = 0.0;
  for (int a = 0; a <= 8; ++a)
    for (int b = 0; b <= 8; ++b) {
      const std::map<std::uint32_t, double> in{{1, a}, {2, b}};
      const double smooth = run_smooth(multiplication(), in, cfg).output();
      const double crisp = lang::run_discrete(multiplication(), in).env.get(lang::Var{0});
      worst = std::max(worst, std::abs(smooth - crisp));
    }
  return {worst == 0.0, "81 inputs, max |c0 - discrete| = " + fmt(worst)};
}

// 2
Outcome cinf_near_agreement() {
  SmoothConfig cfg;
  cfg.steepness = 5.0;
  cfg.epsilon = 1e-7;
  std::vector<std::map<std::uint32_t, double>> grid;
  for (int a = 1; a <= 5; ++a)
    for (int b = 1; b <= 5; ++b) grid.push_back({{1, a}, {2, b}});

  auto rel_errors = [&](const Calibration<double>* cal) {
    double worst = 0, sum = 0;
    for (const auto& in : grid) {
      const double want = in.at(1) * in.at(2);
      const double got = run_smooth<double>(multiplication(), in, cfg, cal).output();
      const double e = std::abs(got - want) / want;
      worst = std::max(worst, e);
      sum += e;
    }
    return std::pair{worst, sum / grid.size()};
  };
  const auto [max_before, mean_before] = rel_errors(nullptr);

  CalibrationSettings settings;
  settings.steps = 500;
  const auto result = calibrate(multiplication(), discrete_dataset(multiplication(), grid), cfg, settings);
  const auto [max_after, mean_after] = rel_errors(&result.calibration);

  const bool pass = max_before <= 0.15 && mean_after < mean_before && !result.diverged;
  return {pass, "max rel err " + fmt(max_before) + " (bound 0.15); mean rel err " + fmt(mean_before) + " -> " +
                    fmt(mean_after) + " after 500 calibration steps"};
}

// 3
Outcome convergence_bound() {
  const auto countdown = lang::parse("WHILE x1 != 0 DO x1 := x1 - 1 END");
  SmoothConfig cfg;
  cfg.grade = Grade::c0;
  cfg.record_p_history = true;
  const auto run = run_smooth(countdown, {{1, 0.9}}, cfg);
  const auto& hist = run.trace.loops.at(0).executions.at(0).p_history;
  double worst_margin = -1.0;
  bool pass = !hist.empty();
  for (int n = 1; n <= 50; ++n) {
    // after the loop exits p stays at its last value
    const double p = static_cast<std::size_t>(n) <= hist.size() ? hist[n - 1] : hist.back();
    const double bound = std::pow(0.9, n) + 1e-12;
    worst_margin = std::max(worst_margin, p - bound);
    pass = pass && p <= bound;
  }
  return {pass, "n = 1..50, max (p_n - 0.9^n) = " + fmt(worst_margin) + ", loop exited after " +
                    std::to_string(hist.size()) + " iterations"};
}

// 4
Outcome interpolation() {
  Tape tape;
  const Scalar x1 = tape.variable(2.5), x2 = tape.variable(1.5);
  const auto run = run_smooth<Scalar>(multiplication(), {{1, x1}, {2, x2}}, SmoothConfig{});
  const Scalar out = run.output();
  const auto g = tape.backward(out);
  const ScalarFunction f = [](Tape&, std::span<const Scalar> x) {
    return run_smooth<Scalar>(multiplication(), {{1, x[0]}, {2, x[1]}}, SmoothConfig{}).output();
  };
  const auto report = gradcheck(f, std::vector<double>{2.5, 1.5}, 1e-5, 1e-4);
  const bool finite = std::isfinite(out.value()) && std::isfinite(g.wrt(x1)) && std::isfinite(g.wrt(x2));
  return {finite && report.pass && !run.trace.truncated,
          "x0(2.5, 1.5) = " + fmt(out.value()) + ", grad = (" + fmt(g.wrt(x1)) + ", " + fmt(g.wrt(x2)) +
              "), gradcheck rel err " + fmt(report.max_rel_error)};
}

// 5
Outcome softsort_invariants() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> us(0.1, 100.0);
  std::uniform_int_distribution<std::size_t> un(2, 8);
  double worst_sum = 0, worst_crisp = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = un(rng);
    auto a = uniform_vector(rng, n, -10, 10);
    const auto r = soft_sort(a, us(rng));
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0, col = 0;
      for (std::size_t j = 0; j < n; ++j) {
        row += r.relaxation(i, j);
        col += r.relaxation(j, i);
      }
      worst_sum = std::max({worst_sum, std::abs(row - 1), std::abs(col - 1)});
    }
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < n; ++i) gap = std::min(gap, sorted[i] - sorted[i - 1]);
    const auto crisp = soft_sort(a, 1e4 / gap);
    for (std::size_t i = 0; i < n; ++i) worst_crisp = std::max(worst_crisp, std::abs(crisp.sorted[i] - sorted[i]));
  }
  return {worst_sum <= 1e-9 && worst_crisp <= 1e-4,
          "200 vectors, max |row/col sum - 1| = " + fmt(worst_sum) + ", max crisp deviation = " + fmt(worst_crisp)};
}

// 6
Outcome mean_degeneration() {
  std::mt19937_64 rng(6);
  auto v = uniform_vector(rng, 7, -10, 10);
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  const double spread = *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
  auto deviation = [&] {
    double d = 0;
    for (double x : v) d = std::max(d, std::abs(x - mean));
    return d;
  };
  double prev = deviation();
  bool monotone = true;
  // 100 stages per block is even, so blocks continue the alternating schedule
  for (int block = 0; block < 100; ++block) {
    v = soft_sort(v, 0.01, SortOptions{.num_stages = 100}).sorted;
    const double d = deviation();
    monotone = monotone && d <= prev;
    prev = d;
  }
  return {monotone && prev < 1e-3 * spread,
          "10^4 passes at s = 0.01: max deviation " + fmt(prev) + " vs initial spread " + fmt(spread) +
              (monotone ? ", monotone" : ", NOT monotone")};
}

// 7
Outcome wsoftmax_identity() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uw(1e-3, 1.0);
  std::uniform_int_distribution<std::size_t> un(1, 10);
  double worst = 0;
  bool unit_exact = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = un(rng);
    const auto x = uniform_vector(rng, n, -20, 20);
    std::vector<double> w(n), shifted(n);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = uw(rng);
      shifted[i] = x[i] + std::log(w[i]);
    }
    const auto a = w_softmax<double>(x, w), b = w_softmax_product_form<double>(x, w);
    const auto c = softmax<double>(shifted);
    for (std::size_t i = 0; i < n; ++i) worst = std::max({worst, std::abs(a[i] - b[i]), std::abs(a[i] - c[i])});
    const std::vector<double> ones(n, 1.0);
    unit_exact = unit_exact && w_softmax<double>(x, ones) == softmax<double>(x);
  }
  return {worst <= 1e-12 && unit_exact,
          "1000 pairs, max form disagreement " + fmt(worst) + (unit_exact ? ", w = 1 exact" : ", w = 1 NOT exact")};
}

// 8
Outcome median_robustness() {
  Tape tape;
  const std::vector<Scalar> x{tape.variable(0.0), tape.variable(0.0), tape.variable(100.0)};
  const Scalar m = soft_median_fast<Scalar>(x, 2, 1.0);
  const double g = std::abs(tape.backward(m).wrt(x[2]));
  const std::vector<double> xd{0.0, 0.0, 100.0};
  const double precise = soft_median_precise<double>(xd, 1000.0);
  return {g < 1.0 / 3.0 && std::abs(precise) <= 1e-3,
          "|d fast / d x2| = " + fmt(g) + " (mean: 0.3333), precise median = " + fmt(precise)};
}

// 9
Outcome gradcheck_suite() {
  struct Op {
    const char* name;
    std::size_t dim;
    double lo, hi;
    ScalarFunction f;
  };
  auto fern = ifs::barnsley_fern(80, 5);
  fern.canvas.width = fern.canvas.height = 16;
  const auto target = ifs::rasterize(ifs::iterate(fern), 1.0, fern.canvas);
  const ifs::Canvas pixels{16, 16, 0.0, 16.0, 0.0, 16.0};

  auto weights = [](std::span<const Scalar> x) {
    std::vector<Scalar> w;
    for (const auto& v : x) w.push_back(sigmoid(v));
    return w;
  };
  const std::vector<Op> ops = {
      {"phi_inf", 1, -2, 2, [](Tape&, std::span<const Scalar> x) { return phi_inf(x[0], 2.0); }},
      {"smooth run", 2, 0.5, 3.5,
       [](Tape&, std::span<const Scalar> x) {
         return run_smooth<Scalar>(multiplication(), {{1, x[0]}, {2, x[1]}}, SmoothConfig{}).output();
       }},
      {"soft_sort", 6, -2, 2,
       [](Tape&, std::span<const Scalar> x) { return readout(soft_sort<Scalar>(x, 1.5).sorted); }},
      {"w_softmax", 8, -2, 2,
       [&](Tape&, std::span<const Scalar> x) { return readout(w_softmax<Scalar>(x.first(4), weights(x.last(4)))); }},
      {"w_softmin", 8, -2, 2,
       [&](Tape&, std::span<const Scalar> x) { return readout(w_softmin<Scalar>(x.first(4), weights(x.last(4)))); }},
      {"soft_median_precise", 5, -2, 2,
       [](Tape&, std::span<const Scalar> x) { return soft_median_precise<Scalar>(x, 1.0); }},
      {"soft_median_fast", 5, -2, 2,
       [](Tape&, std::span<const Scalar> x) { return soft_median_fast<Scalar>(x, 2, 1.0); }},
      {"finite_differences", 6, -2, 2,
       [](Tape&, std::span<const Scalar> x) {
         auto d = finite_differences(Tensor<Scalar>({2, 3}, {x.begin(), x.end()}), 1, true, true).data;
         for (auto& v : d) v = v * v;
         return readout(d);
       }},
      {"rasterize", 8, 2, 14,
       [&](Tape&, std::span<const Scalar> p) {
         ifs::PointCloud<Scalar> c;
         for (std::size_t i = 0; i + 1 < p.size(); i += 2) {
           c.x.push_back(p[i]);
           c.y.push_back(p[i + 1]);
         }
         return readout(ifs::rasterize(c, 1.5, pixels).pixels);
       }},
  };

  std::mt19937_64 rng(9);
  double worst = 0;
  std::string failed;
  auto record = [&](const char* name, const GradcheckReport& r) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.pass && failed.find(name) == std::string::npos) failed += std::string(failed.empty() ? "" : ", ") + name;
  };
  for (const auto& op : ops)
    for (int trial = 0; trial < 5; ++trial) record(op.name, gradcheck(op.f, uniform_vector(rng, op.dim, op.lo, op.hi), 1e-5, 1e-4));

  const ScalarFunction loss = [&](Tape&, std::span<const Scalar> p) {
    return ifs::image_loss<Scalar>(p, fern, target, 1.5);
  };
  for (int trial = 0; trial < 3; ++trial) {
    auto p = fern.params;
    std::uniform_real_distribution<double> jitter(0.9, 1.1);
    for (auto& v : p) v *= jitter(rng);
    record("ifs loss", gradcheck(loss, p, 1e-5, 1e-4));
  }
  return {failed.empty(), "10 ops, max rel err " + fmt(worst) + (failed.empty() ? "" : "; failed: " + failed)};
}

// 10
Outcome ifs_fitting() {
  const auto truth = ifs::barnsley_fern(500, 7);
  const auto target = ifs::rasterize(ifs::iterate(truth), 1.0, truth.canvas);
  auto start = truth;
  std::mt19937_64 rng(11);
  for (auto& p : start.params) p *= (rng() & 1) ? 1.1 : 0.9;
  ifs::FitSettings settings;
  settings.sigma_schedule = {4.0, 2.0, 1.0};
  settings.steps_per_sigma = 100;
  const auto r = ifs::fit(start, target, settings);
  std::size_t descending = 0, windows = 0;
  for (std::size_t k = 0; k + 10 < r.loss_history.size(); ++k) {
    ++windows;
    descending += r.loss_history[k + 10] <= r.loss_history[k];
  }
  const double share = windows ? static_cast<double>(descending) / windows : 0.0;
  return {!r.aborted && r.final_loss < 0.5 * r.initial_loss,
          "32x32, T = 500, 300 steps: loss " + fmt(r.initial_loss) + " -> " + fmt(r.final_loss) + " (ratio " +
              fmt(r.final_loss / r.initial_loss) + "), loss[k+10] <= loss[k] for " + fmt(100 * share) + "% of k"};
}

// 11
struct Shell {
  int code = -1;
  std::string out;
};

Shell shell(const std::string& cmd) {
  Shell r;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli_determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "smoothlang_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = std::string("'") + SMOOTHLANG_CLI + "'";
  const std::string src = SMOOTHLANG_SOURCE_DIR;
  const std::string fern = src + "/samples/fern.json";
  const std::string target = (dir / "target.pgm").string();
  if (shell(cli + " ifs-render " + fern + " " + target).code != 0) return {false, "could not render the fit target"};

  const std::vector<std::string> commands = {
      "run " + src + "/samples/mul.while --mode cinf -i x1=2.5 -i x2=1.5 --grad --env --p-history",
      "gradcheck softsort --n 6 --seed 4",
      "gradcheck rasterize --n 4 --seed 5",
      "sort '[5,2,8,1]' --s 3 --matrix",
      "median '[4,0,9,2,7]' --method fast --degree 3",
      "ifs-sample --n 4 --T 2000 --seed 17 --weights '[0.01,0.85,0.07,0.07]'",
  };
  std::size_t compared = 0;
  for (const auto& c : commands) {
    const auto a = shell(cli + " " + c), b = shell(cli + " " + c);
    if (a.code != 0 || a.out != b.out) return {false, "differs or fails: " + c};
    ++compared;
  }
  for (const char* tag : {"a", "b"}) {
    const auto out = dir / tag;
    fs::create_directories(out);
    const auto r = shell(cli + " ifs-render " + fern + " " + (out / "img.pgm").string() + " && " + cli + " ifs-fit " +
                         fern + " " + target + " --steps 2 --out-model " + (out / "fit.json").string() +
                         " --loss-csv " + (out / "loss.csv").string() + " > " + (out / "summary.json").string());
    if (r.code != 0) return {false, "ifs commands failed: " + r.out};
  }
  for (const char* f : {"img.pgm", "fit.json", "loss.csv"}) {
    if (slurp(dir / "a" / f) != slurp(dir / "b" / f)) return {false, std::string("differs: ") + f};
    ++compared;
  }
  fs::remove_all(dir);
  return {true, std::to_string(compared) + " outputs compared byte-for-byte across two invocations"};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "C0 matches discrete multiplication on {0..8}^2", 5.0, c0_agreement},
      {2, "C-infinity near-agreement and calibration", 0.0, cinf_near_agreement},
      {3, "execution probability bound p_n <= 0.9^n", 0.0, convergence_bound},
      {4, "interpolation at (2.5, 1.5) with finite gradients", 0.0, interpolation},
      {5, "SoftSort doubly stochastic and crisp limit", 10.0, softsort_invariants},
      {6, "SoftSort mean degeneration", 0.0, mean_degeneration},
      {7, "weighted SoftMax two-form identity", 0.0, wsoftmax_identity},
      {8, "SoftMedian outlier robustness", 0.0, median_robustness},
      {9, "gradient check suite", 0.0, gradcheck_suite},
      {10, "IFS fitting descent", 60.0, ifs_fitting},
      {11, "CLI determinism", 0.0, cli_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit_s > 0 && secs >= c.time_limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt(c.time_limit_s) + " s limit";
    }
    failures += !o.pass;
    std::printf("%s %2d  %s: %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.title.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
