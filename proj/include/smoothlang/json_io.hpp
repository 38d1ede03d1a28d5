#pragma once

// JSON encodings for IFS model files and smooth-run traces.
//
// Model file:
//   {"n": 4, "params": [6n reals, row-major], "T": 10000, "seed": 1,
//    "sigma": 1.0,
//    "canvas": {"width": 32, "height": 32, "x_min": -1, "x_max": 1,
//               "y_min": -1, "y_max": 1},
//    "weights": [...],            optional per-map probabilities
//    "initial_point": [x, y]}     optional, default [0, 0]
//
// The choice sequence is not stored; it is re-sampled from (n, T, seed,
// weights), which is deterministic.

#include <json.hpp>

#include "smoothlang/interp.hpp"
#include "smoothlang/smooth_ifs.hpp"

namespace smoothlang {

using json = nlohmann::json;

namespace ifs {

inline json to_json(const Canvas& c) {
  return {{"width", c.width}, {"height", c.height}, {"x_min", c.x_min},
          {"x_max", c.x_max}, {"y_min", c.y_min},   {"y_max", c.y_max}};
}

inline Canvas canvas_from_json(const json& j) {
  Canvas c;
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.x_min = j.value("x_min", c.x_min);
  c.x_max = j.value("x_max", c.x_max);
  c.y_min = j.value("y_min", c.y_min);
  c.y_max = j.value("y_max", c.y_max);
  c.validate();
  return c;
}

inline json to_json(const IfsModel& m) {
  json j = {{"n", m.n},
            {"params", m.params},
            {"T", m.choices.size()},
            {"seed", m.seed},
            {"sigma", m.sigma},
            {"canvas", to_json(m.canvas)},
            {"initial_point", {m.x0, m.y0}}};
  if (!m.weights.empty()) j["weights"] = m.weights;
  return j;
}

/// Throws std::invalid_argument (or nlohmann::json::exception) on malformed
/// input.
inline IfsModel model_from_json(const json& j) {
  IfsModel m;
  m.n = j.at("n").get<std::size_t>();
  m.params = j.at("params").get<std::vector<double>>();
  const auto count = j.at("T").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.sigma = j.at("sigma").get<double>();
  m.canvas = canvas_from_json(j.at("canvas"));
  if (j.contains("weights")) m.weights = j.at("weights").get<std::vector<double>>();
  if (j.contains("initial_point")) {
    const auto p = j.at("initial_point").get<std::vector<double>>();
    if (p.size() != 2) throw std::invalid_argument("initial_point must have two coordinates");
    m.x0 = p[0];
    m.y0 = p[1];
  }
  m.choices = sample_choices(m.n, count, m.seed, m.weights);
  m.validate();
  return m;
}

}  // namespace ifs

inline json to_json(const Trace& t, bool include_p_history = false) {
  json loops = json::array();
  for (const auto& l : t.loops) {
    json execs = json::array();
    std::uint64_t total = 0;
    bool truncated = false;
    for (const auto& e : l.executions) {
      json je = {{"iterations", e.iterations}, {"final_p", e.final_p}, {"truncated", e.truncated}};
      if (include_p_history) je["p_history"] = e.p_history;
      execs.push_back(std::move(je));
      total += e.iterations;
      truncated = truncated || e.truncated;
    }
    loops.push_back({{"loop", l.loop_id},
                     {"condition", lang::to_string(l.condition)},
                     {"executions", l.executions.size()},
                     {"total_iterations", total},
                     {"final_p", l.executions.empty() ? 0.0 : l.executions.back().final_p},
                     {"truncated", truncated},
                     {"per_execution", std::move(execs)}});
  }
  json j = {{"mode", to_string(t.grade)}, {"loops", std::move(loops)}, {"truncated", t.truncated}};
  if (t.grade == Grade::discrete) j["loop_iterations"] = t.discrete_iterations;
  j["warnings"] = t.warnings;
  return j;
}

template <class T>
json env_to_json(const lang::Env<T>& env) {
  json j = json::object();
  for (const auto& [idx, v] : env.values()) j["x" + std::to_string(idx)] = value_of(v);
  return j;
}

}  // namespace smoothlang
