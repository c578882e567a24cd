#pragma once

// Registry of the 2D benchmark problems with their default algorithm settings.

#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "rto/acmdsa.hpp"
#include "rto/error.hpp"
#include "rto/problem.hpp"

namespace rto {

struct ProblemDef {
  ProblemSpec spec;
  acmdsa::Hyperparams defaults;
  double theta_per_element_kappa1 = 1.0;  // theta = factor * n
  double theta_per_element_robust = 1.0;  // used for kappa < 1
  std::vector<double> kappas;

  double default_theta(double kappa) const {
    const double n = spec.mesh->num_elements();
    return (kappa < 1.0 ? theta_per_element_robust : theta_per_element_kappa1) * n;
  }
};

struct ProblemOptions {
  double volume_fraction = 0.0;  // 0: problem default
  int resolution = 0;            // 0: problem default
};

namespace problems {

inline std::vector<int> fixed_node_dofs(const fem::Mesh& mesh, int ix0, int ix1, int iy) {
  std::vector<int> dofs;
  for (int ix = ix0; ix <= ix1; ++ix) {
    const int node = mesh.node_id(ix, iy);
    dofs.push_back(2 * node);
    dofs.push_back(2 * node + 1);
  }
  return dofs;
}

/// Square column W = H = 100 clamped along the bottom edge, unit load at the
/// top-center node with direction alpha ~ U(11 pi/24, 13 pi/24).
/// `resolution` elements per side (default 100).
inline ProblemDef simple_column(const ProblemOptions& opt = {}) {
  const int res = opt.resolution > 0 ? opt.resolution : 100;
  if (res % 2 != 0) throw ParameterError("simple-column resolution must be even");
  const double h = 100.0 / res;
  ProblemDef def;
  ProblemSpec& p = def.spec;
  p.name = "simple-column";
  auto mesh = std::make_shared<const fem::Mesh>(res, res, h);
  p.mesh = mesh;
  p.fixed_dofs = fixed_node_dofs(*mesh, 0, res, 0);
  constexpr double pi = std::numbers::pi;
  p.loads.points.push_back({mesh->node_id(res / 2, res), 0.0, 0.0, UniformAngle{11.0 * pi / 24.0, 13.0 * pi / 24.0, 1.0}});
  // Not given with the benchmark; 0.18 reproduces the reference mean compliance.
  p.volume_fraction = opt.volume_fraction > 0.0 ? opt.volume_fraction : 0.18;
  p.filter = RadiusSchedule{3.0 * h, 1.2 * h, 300, 30, 6};
  p.symmetric = true;

  auto& hp = def.defaults;
  hp.recal.N_rst = 100;
  hp.damping.N_damp = 400;
  hp.damping.eps_damp = 0.05;
  hp.stop.N_max = 500;
  hp.stop.N_min = 400;
  def.theta_per_element_kappa1 = 600.0;
  def.theta_per_element_robust = 600.0;
  def.kappas = {1.0, 0.618};
  return def;
}

/// Double hook: a 4 x 1 beam hanging from a 1 x 1.5 stem centered on top of it,
/// the stem clamped along its top edge. Unit downward loads at both bottom
/// corners with horizontal components ~ N(0, 0.1^2).
/// `resolution` elements per unit length: 48, 96 and 144 give 12,672,
/// 50,688 and 114,048 elements.
inline ProblemDef double_hook(const ProblemOptions& opt = {}) {
  const int k = opt.resolution > 0 ? opt.resolution : 48;
  if (k % 2 != 0) throw ParameterError("double-hook resolution must be even");
  const int nx = 4 * k;
  const int ny = 5 * k / 2;
  const int stem_x0 = 3 * k / 2;
  const int stem_x1 = 5 * k / 2;  // exclusive
  std::vector<char> mask(static_cast<std::size_t>(nx) * ny, 0);
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const bool beam = iy < k;
      const bool stem = ix >= stem_x0 && ix < stem_x1;
      mask[static_cast<std::size_t>(iy) * nx + ix] = (beam || stem) ? 1 : 0;
    }
  }
  const double h = 1.0 / k;
  ProblemDef def;
  ProblemSpec& p = def.spec;
  p.name = "double-hook";
  auto mesh = std::make_shared<const fem::Mesh>(nx, ny, h, std::move(mask));
  p.mesh = mesh;
  p.fixed_dofs = fixed_node_dofs(*mesh, stem_x0, stem_x1, ny);
  const NormalComponents horizontal{0.0, 0.1, 0.0, 0.0};
  p.loads.points.push_back({mesh->node_id(0, 0), 0.0, -1.0, horizontal});
  p.loads.points.push_back({mesh->node_id(nx, 0), 0.0, -1.0, horizontal});
  p.volume_fraction = opt.volume_fraction > 0.0 ? opt.volume_fraction : 0.3;
  p.filter = RadiusSchedule{3.0 * h, 1.2 * h, 360, 30, 6};
  p.symmetric = true;

  auto& hp = def.defaults;
  hp.recal.N_rst = 100;
  hp.damping.N_damp = 450;
  hp.damping.eps_damp = 0.075;
  hp.stop.N_max = 600;
  hp.stop.N_min = 450;
  // Pilot-calibrated on this geometry: smaller factors leave the design
  // frozen away from the load points.
  def.theta_per_element_kappa1 = 1000.0;
  def.theta_per_element_robust = 1000.0;
  def.kappas = {1.0, 0.618};
  return def;
}

inline std::vector<std::string> names() { return {"simple-column", "double-hook"}; }

/// Named presets: "double-hook-13k", "-51k", "-114k" fix the resolution.
inline ProblemDef make(const std::string& name, ProblemOptions opt = {}) {
  static const std::map<std::string, int> hook_presets{
      {"double-hook-13k", 48}, {"double-hook-51k", 96}, {"double-hook-114k", 144}};
  if (name == "simple-column") return simple_column(opt);
  if (name == "double-hook") return double_hook(opt);
  if (auto it = hook_presets.find(name); it != hook_presets.end()) {
    if (opt.resolution > 0 && opt.resolution != it->second) {
      throw ParameterError("preset " + name + " fixes the resolution");
    }
    opt.resolution = it->second;
    return double_hook(opt);
  }
  throw ParameterError("unknown problem: " + name);
}

}  // namespace problems
}  // namespace rto
