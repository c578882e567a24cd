#pragma once

// Flat key=value run configuration: parsing, application to the problem
// defaults and an exact echo for run summaries.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rto/acmdsa.hpp"
#include "rto/error.hpp"
#include "rto/problems.hpp"

namespace rto {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Reads `key = value` lines; `#` starts a comment, blank lines are skipped.
inline KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParameterError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParameterError("config line " + std::to_string(lineno) + ": empty key");
    kv.emplace_back(std::move(key), std::move(value));
  }
  return kv;
}

namespace detail {

inline double to_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParameterError("invalid number for " + key + ": '" + s + "'");
  }
  return v;
}

inline long long to_int(const std::string& key, const std::string& s) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ParameterError("invalid integer for " + key + ": '" + s + "'");
  }
  return v;
}

// Shortest text that parses back to the same double.
inline std::string exact(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline acmdsa::Mode parse_mode(const std::string& s) {
  if (s == "acmdsa") return acmdsa::Mode::acmdsa;
  if (s == "mdsa") return acmdsa::Mode::mdsa;
  if (s == "mc") return acmdsa::Mode::mc_reference;
  throw ParameterError("unknown mode: " + s);
}

inline fem::SolverKind parse_solver(const std::string& s) {
  if (s == "direct") return fem::SolverKind::direct;
  if (s == "cg") return fem::SolverKind::cg;
  if (s == "auto") return fem::SolverKind::automatic;
  throw ParameterError("unknown solver: " + s);
}

inline const char* to_string(fem::SolverKind k) {
  switch (k) {
    case fem::SolverKind::direct: return "direct";
    case fem::SolverKind::cg: return "cg";
    case fem::SolverKind::automatic: return "auto";
  }
  return "?";
}

/// Everything that determines a run. Unset optionals fall back to the
/// problem defaults when `resolve` is called.
struct RunConfig {
  std::string problem = "simple-column";
  int resolution = 0;
  double volume_fraction = 0.0;
  double kappa = 1.0;
  std::optional<double> theta;
  std::uint64_t seed = 1;
  acmdsa::Mode mode = acmdsa::Mode::acmdsa;
  fem::SolverKind solver = fem::SolverKind::automatic;
  double cg_tol = 1e-8;
  int workers = 1;

  // Overrides of the problem's algorithm and filter defaults.
  KeyValues overrides;

  void set(const std::string& key, const std::string& value) {
    if (key == "problem") {
      problem = value;
    } else if (key == "resolution") {
      resolution = static_cast<int>(detail::to_int(key, value));
    } else if (key == "vf") {
      volume_fraction = detail::to_double(key, value);
    } else if (key == "kappa") {
      kappa = detail::to_double(key, value);
    } else if (key == "theta") {
      theta = detail::to_double(key, value);
    } else if (key == "seed") {
      seed = static_cast<std::uint64_t>(detail::to_int(key, value));
    } else if (key == "mode") {
      mode = parse_mode(value);
    } else if (key == "solver") {
      solver = parse_solver(value);
    } else if (key == "cg_tol") {
      cg_tol = detail::to_double(key, value);
    } else if (key == "workers") {
      workers = static_cast<int>(detail::to_int(key, value));
    } else {
      overrides.emplace_back(key, value);
    }
  }

  void apply(const KeyValues& kv) {
    for (const auto& [k, v] : kv) set(k, v);
  }
};

/// A run configuration resolved against its problem definition.
struct ResolvedRun {
  ProblemDef def;
  acmdsa::Hyperparams hp;
  RtoWeights weights;
  acmdsa::RunOptions opts;
  RunConfig cfg;

  /// Every setting that affects the trajectory, in a fixed order.
  KeyValues echo() const {
    const auto& p = def.spec;
    return {
        {"problem", cfg.problem},
        {"resolution", std::to_string(cfg.resolution)},
        {"n", std::to_string(p.mesh->num_elements())},
        {"vf", detail::exact(p.volume_fraction)},
        {"kappa", detail::exact(weights.kappa)},
        {"w", detail::exact(weights.w)},
        {"mode", acmdsa::to_string(hp.mode)},
        {"seed", std::to_string(opts.seed)},
        {"theta", detail::exact(hp.theta)},
        {"m", std::to_string(hp.m)},
        {"N_M", std::to_string(hp.N_M)},
        {"alpha", detail::exact(hp.alpha)},
        {"move", detail::exact(hp.move)},
        {"m_eval", std::to_string(hp.m_eval)},
        {"N_rst", std::to_string(hp.recal.N_rst)},
        {"delta_rst", std::to_string(hp.recal.delta_rst)},
        {"eps_rst", detail::exact(hp.recal.eps_rst)},
        {"N_damp", std::to_string(hp.damping.N_damp)},
        {"eps_damp", detail::exact(hp.damping.eps_damp)},
        {"tau", detail::exact(hp.damping.tau)},
        {"N_D", std::to_string(hp.damping.N_D)},
        {"N_max", std::to_string(hp.stop.N_max)},
        {"N_min", std::to_string(hp.stop.N_min)},
        {"eps", detail::exact(hp.stop.eps)},
        {"r_start", detail::exact(p.filter.r_start)},
        {"r_end", detail::exact(p.filter.r_end)},
        {"filter_start", std::to_string(p.filter.start_step)},
        {"filter_interval", std::to_string(p.filter.interval)},
        {"filter_decrements", std::to_string(p.filter.decrements)},
        {"symmetric", p.symmetric ? "1" : "0"},
        {"E0", detail::exact(p.material.E0)},
        {"E_min", detail::exact(p.material.E_min)},
        {"penal", detail::exact(p.material.penal)},
        {"nu", detail::exact(p.poisson)},
        {"solver", to_string(opts.solver.kind)},
        {"cg_tol", detail::exact(opts.solver.tol)},
    };
  }
};

inline void apply_override(ResolvedRun& r, const std::string& key, const std::string& value) {
  auto& hp = r.hp;
  auto& f = r.def.spec.filter;
  auto i = [&] { return static_cast<int>(detail::to_int(key, value)); };
  auto d = [&] { return detail::to_double(key, value); };
  if (key == "m") hp.m = i();
  else if (key == "N_M") hp.N_M = i();
  else if (key == "alpha") hp.alpha = d();
  else if (key == "move") hp.move = d();
  else if (key == "m_eval") hp.m_eval = i();
  else if (key == "N_rst") hp.recal.N_rst = i();
  else if (key == "delta_rst") hp.recal.delta_rst = i();
  else if (key == "eps_rst") hp.recal.eps_rst = d();
  else if (key == "N_damp") hp.damping.N_damp = i();
  else if (key == "eps_damp") hp.damping.eps_damp = d();
  else if (key == "tau") hp.damping.tau = d();
  else if (key == "N_D") hp.damping.N_D = i();
  else if (key == "N_max") hp.stop.N_max = i();
  else if (key == "N_min") hp.stop.N_min = i();
  else if (key == "eps") hp.stop.eps = d();
  else if (key == "r_start") f.r_start = d();
  else if (key == "r_end") f.r_end = d();
  else if (key == "filter_start") f.start_step = i();
  else if (key == "filter_interval") f.interval = i();
  else if (key == "filter_decrements") f.decrements = i();
  else if (key == "symmetric") r.def.spec.symmetric = i() != 0;
  else if (key == "nu") r.def.spec.poisson = d();
  else if (key == "E_min") r.def.spec.material.E_min = d();
  else if (key == "penal") r.def.spec.material.penal = d();
  else throw ParameterError("unknown configuration key: " + key);
}

/// Builds the problem, applies defaults, mode settings and overrides, and validates.
inline ResolvedRun resolve(const RunConfig& cfg) {
  ResolvedRun r;
  r.cfg = cfg;
  if (cfg.resolution < 0) throw ParameterError("resolution must be positive");
  if (cfg.volume_fraction != 0.0 && !(cfg.volume_fraction > 0.0 && cfg.volume_fraction < 1.0)) {
    throw ParameterError("volume fraction must lie in (0, 1)");
  }
  if (!(cfg.cg_tol > 0.0 && cfg.cg_tol < 1.0)) throw ParameterError("cg tolerance must lie in (0, 1)");
  if (cfg.workers < 1) throw ParameterError("workers must be >= 1");
  r.def = problems::make(cfg.problem, {cfg.volume_fraction, cfg.resolution});
  r.cfg.resolution = cfg.resolution > 0 ? cfg.resolution
                     : cfg.problem == "simple-column" ? r.def.spec.mesh->nx()
                                                       : r.def.spec.mesh->nx() / 4;
  r.weights = RtoWeights::from_model(cfg.kappa, r.def.spec.loads, r.def.spec.material.E0);
  r.hp = r.def.defaults;
  r.hp.theta = cfg.theta ? *cfg.theta : r.def.default_theta(cfg.kappa);
  if (cfg.mode == acmdsa::Mode::mc_reference) {
    acmdsa::apply_mc_reference(r.hp, r.def.spec.filter);
  }
  r.hp.mode = cfg.mode;
  for (const auto& [k, v] : cfg.overrides) apply_override(r, k, v);
  r.hp.validate();
  r.def.spec.material.validate();
  if (!(r.def.spec.filter.r_start > 0.0 && r.def.spec.filter.r_end > 0.0)) {
    throw ParameterError("filter radii must be positive");
  }
  r.opts.seed = cfg.seed;
  r.opts.workers = cfg.workers;
  r.opts.solver.kind = cfg.solver;
  r.opts.solver.tol = cfg.cg_tol;
  return r;
}

}  // namespace rto
