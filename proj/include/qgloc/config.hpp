#pragma once

// Experiment configuration files: nested YAML (or the JSON subset of YAML).
// Unknown keys are rejected at every level.

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qgloc/errors.hpp"
#include "qgloc/experiments.hpp"
#include "json.hpp"

namespace qgloc {

namespace detail {

inline void check_keys(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed) {
  if (!node.IsMap()) throw ConfigError(where + ": expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

/// Missing and null keys both mean "use the default", so the JSON echo of a
/// config parses back to the same config.
inline YAML::Node get(const YAML::Node& node, const char* key) {
  const YAML::Node n = node[key];
  return n && !n.IsNull() ? n : YAML::Node(YAML::NodeType::Undefined);
}

template <class T>
T scalar(const YAML::Node& n, const std::string& where) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where + ": invalid value");
  }
}

template <class T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& where) {
  if (const auto n = get(node, key)) out = scalar<T>(n, where + "." + key);
}

template <class T>
void read(const YAML::Node& node, const char* key, std::optional<T>& out, const std::string& where) {
  if (const auto n = get(node, key)) out = scalar<T>(n, where + "." + key);
}

template <class T>
void read_list(const YAML::Node& node, const char* key, std::vector<T>& out, const std::string& where) {
  const auto n = get(node, key);
  if (!n) return;
  if (!n.IsSequence()) throw ConfigError(where + "." + key + ": expected a list");
  out.clear();
  for (const auto& v : n) out.push_back(scalar<T>(v, where + "." + key));
}

inline Interval read_interval(const YAML::Node& n, const std::string& where) {
  if (!n.IsSequence() || n.size() != 2) throw ConfigError(where + ": expected [lo, hi]");
  return {scalar<double>(n[0], where), scalar<double>(n[1], where)};
}

inline std::vector<WindowSpec> read_windows(const YAML::Node& n, const std::string& where) {
  if (!n.IsSequence()) throw ConfigError(where + ": expected a list of {r, s, E}");
  std::vector<WindowSpec> out;
  for (const auto& w : n) {
    check_keys(w, where, {"r", "s", "E"});
    if (!w["r"] || !w["s"] || !w["E"]) throw ConfigError(where + ": each window needs r, s and E");
    out.push_back({scalar<double>(w["r"], where + ".r"), scalar<double>(w["s"], where + ".s"),
                   scalar<double>(w["E"], where + ".E")});
  }
  return out;
}

}  // namespace detail

inline ExperimentConfig parse_config(const YAML::Node& root) {
  using namespace detail;
  ExperimentConfig c;
  if (!root || root.IsNull()) return c;
  check_keys(root, "config",
             {"dimension", "sizes", "measure", "potential", "samples", "seed", "workers", "override_suitable", "m",
              "dense_threshold", "eigen_tol", "energy", "exponents", "ils", "combes_thomas", "gri", "decay",
              "dynloc", "msa", "ultra", "spectrum"});
  read(root, "dimension", c.dimension, "config");
  read_list(root, "sizes", c.sizes, "config");
  read(root, "samples", c.samples, "config");
  read(root, "seed", c.seed, "config");
  read(root, "workers", c.workers, "config");
  read(root, "override_suitable", c.override_suitable, "config");
  read(root, "m", c.m, "config");
  read(root, "dense_threshold", c.dense_threshold, "config");
  read(root, "eigen_tol", c.eigen_tol, "config");

  if (const auto n = get(root, "measure")) {
    check_keys(n, "measure", {"family", "q_minus", "q_plus", "tau"});
    std::string fam = "uniform";
    read(n, "family", fam, "measure");
    if (fam == "uniform") {
      c.measure.family = MeasureFamily::uniform;
    } else if (fam == "power_tail") {
      c.measure.family = MeasureFamily::power_tail;
    } else {
      throw ConfigError("measure.family: expected 'uniform' or 'power_tail', got '" + fam + "'");
    }
    read(n, "q_minus", c.measure.q_minus, "measure");
    read(n, "q_plus", c.measure.q_plus, "measure");
    c.measure.tau = 1.0;
    read(n, "tau", c.measure.tau, "measure");
  }
  if (const auto n = get(root, "potential")) {
    check_keys(n, "potential", {"constant"});
    read(n, "constant", c.constant_potential, "potential");
  }
  if (const auto n = get(root, "energy")) {
    check_keys(n, "energy", {"R", "intervals", "center", "widths", "epsilon", "grid", "value", "window"});
    read(n, "R", c.energy.R, "energy");
    if (const auto iv = get(n, "intervals")) {
      if (!iv.IsSequence()) throw ConfigError("energy.intervals: expected a list of [lo, hi]");
      for (const auto& i : iv) c.energy.intervals.push_back(read_interval(i, "energy.intervals"));
    }
    read(n, "center", c.energy.center, "energy");
    read_list(n, "widths", c.energy.widths, "energy");
    read(n, "epsilon", c.energy.epsilon, "energy");
    read_list(n, "grid", c.energy.grid, "energy");
    read(n, "value", c.energy.value, "energy");
    if (const auto w = get(n, "window")) c.energy.window = read_interval(w, "energy.window");
  }
  if (const auto n = get(root, "exponents")) {
    check_keys(n, "exponents", {"xi", "beta", "p", "alpha_msa", "gamma"});
    read(n, "xi", c.exponents.xi, "exponents");
    read(n, "beta", c.exponents.beta, "exponents");
    read(n, "p", c.exponents.p, "exponents");
    read(n, "alpha_msa", c.exponents.alpha_msa, "exponents");
    read(n, "gamma", c.exponents.gamma, "exponents");
  }
  if (const auto n = get(root, "ils")) {
    check_keys(n, "ils", {"h", "conditioned_samples", "check_size"});
    read(n, "h", c.ils.h, "ils");
    read(n, "conditioned_samples", c.ils.conditioned_samples, "ils");
    read(n, "check_size", c.ils.check_size, "ils");
  }
  if (const auto n = get(root, "combes_thomas")) {
    check_keys(n, "combes_thomas", {"windows", "deltas", "b_edge", "prefactor_delta", "prefactor_windows"});
    if (const auto w = get(n, "windows")) c.combes_thomas.windows = read_windows(w, "combes_thomas.windows");
    read_list(n, "deltas", c.combes_thomas.deltas, "combes_thomas");
    read(n, "b_edge", c.combes_thomas.b_edge, "combes_thomas");
    read(n, "prefactor_delta", c.combes_thomas.prefactor_delta, "combes_thomas");
    if (const auto w = get(n, "prefactor_windows")) {
      c.combes_thomas.prefactor_windows = read_windows(w, "combes_thomas.prefactor_windows");
    }
  }
  if (const auto n = get(root, "gri")) {
    check_keys(n, "gri", {"geometries", "identity_trials"});
    if (const auto g = get(n, "geometries")) {
      if (!g.IsSequence()) throw ConfigError("gri.geometries: expected a list of [inner, outer]");
      for (const auto& p : g) {
        if (!p.IsSequence() || p.size() != 2) throw ConfigError("gri.geometries: expected [inner, outer]");
        c.gri.geometries.emplace_back(scalar<int>(p[0], "gri.geometries"), scalar<int>(p[1], "gri.geometries"));
      }
    }
    read(n, "identity_trials", c.gri.identity_trials, "gri");
  }
  if (const auto n = get(root, "decay")) {
    check_keys(n, "decay", {"floor", "boundary_margin", "min_points", "gamma_min", "r2_min"});
    read(n, "floor", c.decay.floor, "decay");
    read(n, "boundary_margin", c.decay.boundary_margin, "decay");
    read(n, "min_points", c.decay.min_points, "decay");
    read(n, "gamma_min", c.decay.gamma_min, "decay");
    read(n, "r2_min", c.decay.r2_min, "decay");
  }
  if (const auto n = get(root, "dynloc")) {
    check_keys(n, "dynloc", {"t_grid"});
    read_list(n, "t_grid", c.dynloc.t_grid, "dynloc");
  }
  if (const auto n = get(root, "msa")) {
    check_keys(n, "msa", {"levels"});
    read(n, "levels", c.msa.levels, "msa");
  }
  if (const auto n = get(root, "ultra")) {
    check_keys(n, "ultra", {"t_grid", "shift"});
    read_list(n, "t_grid", c.ultra.t_grid, "ultra");
    read(n, "shift", c.ultra.shift, "ultra");
  }
  if (const auto n = get(root, "spectrum")) {
    check_keys(n, "spectrum", {"count"});
    read(n, "count", c.spectrum.count, "spectrum");
  }
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  try {
    return parse_config(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Canonical echo of the configuration. The worker count is excluded: it
/// never changes results and lives in the run manifest.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  auto opt = [](const auto& o) { return o ? json(*o) : json(nullptr); };
  auto windows = [](const std::vector<WindowSpec>& ws) {
    json a = json::array();
    for (const auto& w : ws) a.push_back({{"r", w.r}, {"s", w.s}, {"E", w.E}});
    return a;
  };
  json intervals = json::array();
  for (const auto& i : c.energy.intervals) intervals.push_back({i.lo, i.hi});
  json geos = json::array();
  for (const auto& [a, b] : c.gri.geometries) geos.push_back({a, b});
  return {
      {"dimension", c.dimension},
      {"sizes", c.sizes},
      {"measure",
       {{"family", to_string(c.measure.family)},
        {"q_minus", c.measure.q_minus},
        {"q_plus", c.measure.q_plus},
        {"tau", c.measure.tau}}},
      {"potential", {{"constant", opt(c.constant_potential)}}},
      {"samples", c.samples},
      {"seed", c.seed},
      {"override_suitable", c.override_suitable},
      {"m", c.m},
      {"dense_threshold", c.dense_threshold},
      {"eigen_tol", c.eigen_tol},
      {"energy",
       {{"R", c.energy.R},
        {"intervals", intervals},
        {"center", opt(c.energy.center)},
        {"widths", c.energy.widths},
        {"epsilon", c.epsilon()},
        {"grid", c.energy.grid},
        {"value", opt(c.energy.value)},
        {"window", c.energy.window ? json{c.energy.window->lo, c.energy.window->hi} : json(nullptr)}}},
      {"exponents",
       {{"xi", opt(c.exponents.xi)},
        {"beta", opt(c.exponents.beta)},
        {"p", opt(c.exponents.p)},
        {"alpha_msa", c.exponents.alpha_msa},
        {"gamma", c.exponents.gamma}}},
      {"ils", {{"h", c.ils.h}, {"conditioned_samples", c.ils.conditioned_samples}, {"check_size", c.ils.check_size}}},
      {"combes_thomas",
       {{"windows", windows(c.combes_thomas.windows)},
        {"deltas", c.combes_thomas.deltas},
        {"b_edge", c.combes_thomas.b_edge},
        {"prefactor_delta", c.combes_thomas.prefactor_delta},
        {"prefactor_windows", windows(c.combes_thomas.prefactor_windows)}}},
      {"gri", {{"geometries", geos}, {"identity_trials", c.gri.identity_trials}}},
      {"decay",
       {{"floor", c.decay.floor},
        {"boundary_margin", c.decay.boundary_margin},
        {"min_points", c.decay.min_points},
        {"gamma_min", c.decay.gamma_min},
        {"r2_min", c.decay.r2_min}}},
      {"dynloc", {{"t_grid", c.dynloc.t_grid}}},
      {"msa", {{"levels", c.msa.levels}}},
      {"ultra", {{"t_grid", c.ultra.t_grid}, {"shift", c.ultra.shift}}},
      {"spectrum", {{"count", c.spectrum.count}}},
  };
}

}  // namespace qgloc
