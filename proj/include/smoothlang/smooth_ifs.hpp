#pragma once

// Smooth iterated function systems.
//
// Each map is f(x, y) = (x + a1 + a2 x + a3 y, y + a4 + a5 x + a6 y). The map
// applied at every step is chosen in advance, so the point cloud is a smooth
// function of the 6n parameters. Points are splatted onto the canvas with an
// isotropic Gaussian and the per-point pixel probabilities are combined as
// 1 - prod(1 - q), the probability that at least one point lies in the pixel.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoothlang/autodiff.hpp"
#include "smoothlang/optim.hpp"

namespace smoothlang::ifs {

inline constexpr std::size_t kParamsPerMap = 6;
inline constexpr double kDivergenceLimit = 1e6;
inline constexpr double kMaxPixelProbability = 1.0 - 1e-9;
inline constexpr double kTaperWidth = 0.1;  // in units of sigma

/// Pixel grid plus the affine map from world coordinates to it. Row 0 is the
/// top of the image (largest y).
struct Canvas {
  int width = 32;
  int height = 32;
  double x_min = -1.0, x_max = 1.0;
  double y_min = -1.0, y_max = 1.0;

  void validate() const {
    if (width < 1 || height < 1) throw std::invalid_argument("canvas dimensions must be positive");
    if (!(x_max > x_min) || !(y_max > y_min)) throw std::invalid_argument("canvas world box is empty");
  }
  double scale_x() const { return width / (x_max - x_min); }
  double scale_y() const { return height / (y_max - y_min); }
};

struct IfsModel {
  std::size_t n = 1;
  std::vector<double> params;  // row-major, 6 per map
  std::vector<std::uint32_t> choices;
  double x0 = 0.0, y0 = 0.0;
  double sigma = 1.0;  // pixels
  Canvas canvas;
  std::uint64_t seed = 0;
  std::vector<double> weights;  // empty: uniform

  void validate() const {
    if (n < 1) throw std::invalid_argument("IFS needs at least one map");
    if (params.size() != kParamsPerMap * n)
      throw std::invalid_argument("IFS expects " + std::to_string(kParamsPerMap * n) + " parameters, got " +
                                  std::to_string(params.size()));
    if (choices.empty()) throw std::invalid_argument("IFS choice sequence is empty");
    for (auto c : choices)
      if (c >= n) throw std::invalid_argument("choice index " + std::to_string(c) + " out of range");
    for (double p : params)
      if (!std::isfinite(p)) throw std::invalid_argument("IFS parameters must be finite");
    if (!(sigma > 0)) throw std::invalid_argument("sigma must be positive");
    canvas.validate();
  }
};

/// Deterministic pre-committed map choices. Uses the raw mt19937_64 stream
/// so sequences are identical across standard library implementations.
inline std::vector<std::uint32_t> sample_choices(std::size_t n, std::size_t count, std::uint64_t seed,
                                                 std::span<const double> weights = {}) {
  if (n < 1 || count < 1) throw std::invalid_argument("sample_choices: n and T must be at least 1");
  std::vector<double> cumulative;
  if (!weights.empty()) {
    if (weights.size() != n) throw std::invalid_argument("sample_choices: one weight per map required");
    double sum = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw std::invalid_argument("sample_choices: weights must be non-negative");
      sum += w;
      cumulative.push_back(sum);
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("sample_choices: weights must sum to 1");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::uint32_t> out;
  out.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    std::size_t idx;
    if (cumulative.empty()) {
      idx = std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
    } else {
      idx = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
      idx = std::min(idx, n - 1);
    }
    out.push_back(static_cast<std::uint32_t>(idx));
  }
  return out;
}

template <class T>
struct PointCloud {
  std::vector<T> x, y;
  bool truncated = false;  // divergence guard fired
  std::size_t size() const { return x.size(); }
};

/// point_t = f_{choice_t}(point_{t-1}) for t = 1..T, starting at (x0, y0).
/// Stops before the first point with a coordinate beyond 1e6.
template <class T>
PointCloud<T> iterate(std::span<const T> params, std::span<const std::uint32_t> choices, const T& x0, const T& y0) {
  PointCloud<T> cloud;
  cloud.x.reserve(choices.size());
  cloud.y.reserve(choices.size());
  T x = x0, y = y0;
  for (auto c : choices) {
    const T* a = params.data() + kParamsPerMap * c;
    T nx = x + a[0] + a[1] * x + a[2] * y;
    T ny = y + a[3] + a[4] * x + a[5] * y;
    if (!(std::abs(value_of(nx)) <= kDivergenceLimit) || !(std::abs(value_of(ny)) <= kDivergenceLimit)) {
      cloud.truncated = true;
      break;
    }
    x = std::move(nx);
    y = std::move(ny);
    cloud.x.push_back(x);
    cloud.y.push_back(y);
  }
  return cloud;
}

inline PointCloud<double> iterate(const IfsModel& m) {
  return iterate<double>(m.params, m.choices, m.x0, m.y0);
}

template <class T>
struct ProbImage {
  int width = 0, height = 0;
  std::vector<T> pixels;  // row-major

  ProbImage() = default;
  ProbImage(int w, int h, T fill = T(0.0)) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}
  T& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  const T& at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

struct RasterOptions {
  double truncate_radius = 4.0;  // in units of sigma
};

namespace detail {

struct Contribution {
  std::uint32_t point;
  double factor;  // (1 - q) complement for this point
  double dq_du, dq_dv;
};

// Gaussian density at each pixel centre times unit pixel area, truncated at
// truncate_radius * sigma and clamped below 1 - 1e-9. Over the outermost
// kTaperWidth * sigma the footprint is faded out with 3x^2 - 2x^3, which keeps
// q and its gradient continuous where points cross the cut.
inline void splat(std::span<const double> u, std::span<const double> v, double sigma, const Canvas& canvas,
                  const RasterOptions& opt, std::vector<double>& log_complement,
                  std::vector<std::vector<Contribution>>* contributions) {
  const double inv_s2 = 1.0 / (sigma * sigma);
  const double peak = inv_s2 / (2.0 * std::numbers::pi);
  const double radius = opt.truncate_radius * sigma;
  const double r2 = radius * radius;
  const double band = kTaperWidth * sigma;
  for (std::size_t t = 0; t < u.size(); ++t) {
    if (u[t] + radius < 0 || u[t] - radius > canvas.width || v[t] + radius < 0 || v[t] - radius > canvas.height)
      continue;
    const int c_lo = std::max(0, static_cast<int>(std::floor(u[t] - radius - 0.5)));
    const int c_hi = std::min(canvas.width - 1, static_cast<int>(std::ceil(u[t] + radius - 0.5)));
    const int r_lo = std::max(0, static_cast<int>(std::floor(v[t] - radius - 0.5)));
    const int r_hi = std::min(canvas.height - 1, static_cast<int>(std::ceil(v[t] + radius - 0.5)));
    for (int r = r_lo; r <= r_hi; ++r) {
      const double dv = r + 0.5 - v[t];
      for (int c = c_lo; c <= c_hi; ++c) {
        const double du = c + 0.5 - u[t];
        const double d2 = du * du + dv * dv;
        if (d2 >= r2) continue;
        const double g = peak * std::exp(-0.5 * d2 * inv_s2);
        double q = g;
        double dq_du = g * du * inv_s2, dq_dv = g * dv * inv_s2;
        const double d = std::sqrt(d2);
        if (d > radius - band) {
          const double x = (radius - d) / band;
          const double w = x * x * (3.0 - 2.0 * x);
          const double dw = 6.0 * x * (1.0 - x) / (band * d);  // times du or dv
          q = g * w;
          dq_du = g * du * (w * inv_s2 + dw);
          dq_dv = g * dv * (w * inv_s2 + dw);
        }
        if (q > kMaxPixelProbability) {
          q = kMaxPixelProbability;
          dq_du = dq_dv = 0.0;
        }
        const std::size_t px = static_cast<std::size_t>(r) * canvas.width + c;
        log_complement[px] += std::log1p(-q);
        if (contributions)
          (*contributions)[px].push_back({static_cast<std::uint32_t>(t), 1.0 - q, dq_du, dq_dv});
      }
    }
  }
}

}  // namespace detail

/// Smooth rasterization over plain values.
inline ProbImage<double> rasterize(const PointCloud<double>& cloud, double sigma, const Canvas& canvas,
                                   const RasterOptions& opt = {}) {
  if (!(sigma > 0)) throw std::invalid_argument("rasterize: sigma must be positive");
  canvas.validate();
  std::vector<double> u, v;
  for (std::size_t t = 0; t < cloud.size(); ++t) {
    u.push_back((cloud.x[t] - canvas.x_min) * canvas.scale_x());
    v.push_back((canvas.y_max - cloud.y[t]) * canvas.scale_y());
  }
  std::vector<double> logc(static_cast<std::size_t>(canvas.width) * canvas.height, 0.0);
  detail::splat(u, v, sigma, canvas, opt, logc, nullptr);
  ProbImage<double> img(canvas.width, canvas.height);
  for (std::size_t i = 0; i < logc.size(); ++i) img.pixels[i] = std::clamp(-std::expm1(logc[i]), 0.0, 1.0);
  return img;
}

/// Smooth rasterization on the tape. Each pixel is one fused node whose
/// partials w.r.t. a point's pixel coordinates are
///   dP/du_t = (1 - P) / (1 - q_t) * dq_t/du_t.
inline ProbImage<ad::Scalar> rasterize(const PointCloud<ad::Scalar>& cloud, double sigma, const Canvas& canvas,
                                       const RasterOptions& opt = {}) {
  if (!(sigma > 0)) throw std::invalid_argument("rasterize: sigma must be positive");
  canvas.validate();
  std::vector<ad::Scalar> us, vs;
  std::vector<double> u, v;
  for (std::size_t t = 0; t < cloud.size(); ++t) {
    us.push_back((cloud.x[t] - ad::Scalar(canvas.x_min)) * ad::Scalar(canvas.scale_x()));
    vs.push_back((ad::Scalar(canvas.y_max) - cloud.y[t]) * ad::Scalar(canvas.scale_y()));
    u.push_back(us.back().value());
    v.push_back(vs.back().value());
  }
  const std::size_t npx = static_cast<std::size_t>(canvas.width) * canvas.height;
  std::vector<double> logc(npx, 0.0);
  std::vector<std::vector<detail::Contribution>> contrib(npx);
  detail::splat(u, v, sigma, canvas, opt, logc, &contrib);

  ad::Tape* tape = nullptr;
  for (std::size_t t = 0; t < us.size() && !tape; ++t) {
    if (!us[t].is_constant()) tape = const_cast<ad::Tape*>(us[t].tape());
    else if (!vs[t].is_constant()) tape = const_cast<ad::Tape*>(vs[t].tape());
  }

  ProbImage<ad::Scalar> img(canvas.width, canvas.height);
  std::vector<ad::Scalar> parents;
  std::vector<double> partials;
  for (std::size_t px = 0; px < npx; ++px) {
    const double value = std::clamp(-std::expm1(logc[px]), 0.0, 1.0);
    if (!tape || contrib[px].empty()) {
      img.pixels[px] = ad::Scalar(value);
      continue;
    }
    const double none = 1.0 - value;
    parents.clear();
    partials.clear();
    for (const auto& c : contrib[px]) {
      const double others = none / c.factor;
      parents.push_back(us[c.point]);
      partials.push_back(others * c.dq_du);
      parents.push_back(vs[c.point]);
      partials.push_back(others * c.dq_dv);
    }
    img.pixels[px] = tape->record(value, parents, partials);
  }
  return img;
}

/// Crisp oracle: 1 for every pixel that contains at least one point.
inline ProbImage<double> rasterize_discrete(const PointCloud<double>& cloud, const Canvas& canvas) {
  canvas.validate();
  ProbImage<double> img(canvas.width, canvas.height);
  for (std::size_t t = 0; t < cloud.size(); ++t) {
    const double u = (cloud.x[t] - canvas.x_min) * canvas.scale_x();
    const double v = (canvas.y_max - cloud.y[t]) * canvas.scale_y();
    if (u < 0 || v < 0 || u >= canvas.width || v >= canvas.height) continue;
    img.at(static_cast<int>(v), static_cast<int>(u)) = 1.0;
  }
  return img;
}

/// Mean squared pixel error between the model's rendering and `target`.
template <class T>
T image_loss(std::span<const T> params, const IfsModel& model, const ProbImage<double>& target, double sigma,
             const RasterOptions& opt = {}) {
  if (target.width != model.canvas.width || target.height != model.canvas.height)
    throw std::invalid_argument("target is " + std::to_string(target.width) + "x" + std::to_string(target.height) +
                                " but the canvas is " + std::to_string(model.canvas.width) + "x" +
                                std::to_string(model.canvas.height));
  const auto cloud = iterate<T>(params, model.choices, T(model.x0), T(model.y0));
  const auto img = rasterize(cloud, sigma, model.canvas, opt);
  T sum(0.0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const T d = img.pixels[i] - T(target.pixels[i]);
    sum = sum + d * d;
  }
  return sum / T(static_cast<double>(img.pixels.size()));
}

struct FitSettings {
  std::vector<double> sigma_schedule{4.0, 2.0, 1.0};
  std::size_t steps_per_sigma = 300;
  AdamSettings adam{.learning_rate = 0.01};
  RasterOptions raster;
};

struct FitResult {
  IfsModel model;
  std::vector<double> loss_history;   // one entry per optimizer step
  std::vector<double> sigma_history;  // sigma used at that step
  double initial_loss = 0.0;          // model0 at the final sigma
  double final_loss = 0.0;            // fitted model at the final sigma
  bool aborted = false;
  std::string diagnostic;
  std::vector<std::string> warnings;
};

/// Gradient descent on the 6n parameters, annealing sigma through the
/// schedule. The choice sequence, initial point and canvas stay fixed.
/// The returned model is the lowest-loss one seen at the final sigma.
inline FitResult fit(const IfsModel& model0, const ProbImage<double>& target, const FitSettings& settings = {}) {
  model0.validate();
  if (settings.sigma_schedule.empty()) throw std::invalid_argument("fit: sigma schedule is empty");
  for (double s : settings.sigma_schedule)
    if (!(s > 0)) throw std::invalid_argument("fit: sigma values must be positive");
  if (target.width != model0.canvas.width || target.height != model0.canvas.height)
    throw std::invalid_argument("fit: target dimensions do not match the canvas");

  FitResult result;
  result.model = model0;
  for (std::size_t i = 1; i < settings.sigma_schedule.size(); ++i)
    if (settings.sigma_schedule[i] > settings.sigma_schedule[i - 1]) {
      result.warnings.push_back("sigma schedule is not coarse-to-fine (increases at position " + std::to_string(i) +
                                ")");
      break;
    }

  const double final_sigma = settings.sigma_schedule.back();
  result.initial_loss = image_loss<double>(model0.params, model0, target, final_sigma, settings.raster);

  std::vector<double> params = model0.params;
  // best parameters seen at the final sigma, starting with model0
  std::vector<double> best = model0.params;
  double best_loss = result.initial_loss;
  Adam adam(params.size(), settings.adam);
  for (std::size_t level = 0; level < settings.sigma_schedule.size(); ++level) {
    const double sigma = settings.sigma_schedule[level];
    const bool last_level = level + 1 == settings.sigma_schedule.size();
    for (std::size_t step = 0; step < settings.steps_per_sigma; ++step) {
      ad::Tape tape;
      std::vector<ad::Scalar> vars;
      vars.reserve(params.size());
      for (double p : params) vars.push_back(tape.variable(p));
      const ad::Scalar loss = image_loss<ad::Scalar>(vars, model0, target, sigma, settings.raster);
      if (!std::isfinite(loss.value())) {
        result.aborted = true;
        result.diagnostic = "non-finite loss at step " + std::to_string(result.loss_history.size()) +
                            " (sigma " + std::to_string(sigma) + ")";
        result.final_loss = image_loss<double>(result.model.params, model0, target, final_sigma, settings.raster);
        return result;
      }
      result.loss_history.push_back(loss.value());
      result.sigma_history.push_back(sigma);
      result.model.params = params;
      if (last_level && loss.value() < best_loss) {
        best_loss = loss.value();
        best = params;
      }
      std::vector<double> grad = loss.is_constant() ? std::vector<double>(params.size(), 0.0)
                                                    : tape.backward(loss).wrt(vars);
      adam.step(params, grad);
    }
  }
  for (double p : params)
    if (!std::isfinite(p)) {
      result.aborted = true;
      result.diagnostic = "non-finite parameters after the final step";
      break;
    }
  if (!result.aborted) {
    result.model.params = params;
    result.final_loss = image_loss<double>(params, model0, target, final_sigma, settings.raster);
    if (best_loss < result.final_loss) {
      result.model.params = best;
      result.final_loss = best_loss;
    }
  } else {
    result.final_loss = image_loss<double>(result.model.params, model0, target, final_sigma, settings.raster);
  }
  return result;
}

/// Barnsley's fern written in the f(x, y) = (x + a1 + a2 x + a3 y, ...) form,
/// with its usual selection probabilities.
inline IfsModel barnsley_fern(std::size_t count = 10'000, std::uint64_t seed = 1) {
  IfsModel m;
  m.n = 4;
  m.params = {
      0.0, -1.0,  0.0,   0.0,  0.0,   -0.84,  //
      0.0, -0.15, 0.04,  1.6,  -0.04, -0.15,  //
      0.0, -0.8,  -0.26, 1.6,  0.23,  -0.78,  //
      0.0, -1.15, 0.28,  0.44, 0.26,  -0.76,
  };
  m.weights = {0.01, 0.85, 0.07, 0.07};
  m.seed = seed;
  m.choices = sample_choices(m.n, count, seed, m.weights);
  m.canvas = Canvas{32, 32, -3.0, 3.0, -0.5, 10.5};
  m.sigma = 1.0;
  return m;
}

/// Plain-text graymap ("P2"), 8-bit, one image row per line.
inline void write_pgm(std::ostream& os, const ProbImage<double>& img) {
  os << "P2\n" << img.width << ' ' << img.height << "\n255\n";
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const double v = std::clamp(img.at(r, c), 0.0, 1.0);
      if (c) os << ' ';
      os << static_cast<int>(std::lround(v * 255.0));
    }
    os << '\n';
  }
}

inline ProbImage<double> read_pgm(std::istream& is) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(is, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
  }
  if (tokens.size() < 4 || tokens[0] != "P2") throw std::runtime_error("not a plain PGM (P2) image");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(tokens[1]);
    h = std::stoi(tokens[2]);
    maxval = std::stoi(tokens[3]);
  } catch (const std::exception&) {
    throw std::runtime_error("malformed PGM header");
  }
  if (w < 1 || h < 1 || maxval < 1) throw std::runtime_error("malformed PGM header");
  if (tokens.size() != 4 + static_cast<std::size_t>(w) * h) throw std::runtime_error("PGM pixel count mismatch");
  ProbImage<double> img(w, h);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const int v = std::stoi(tokens[4 + i]);
    if (v < 0 || v > maxval) throw std::runtime_error("PGM pixel out of range");
    img.pixels[i] = static_cast<double>(v) / maxval;
  }
  return img;
}

}  // namespace smoothlang::ifs
