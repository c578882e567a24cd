#pragma once

// Density filter, SIMP interpolation, scaled-variable bookkeeping,
// vertical-axis symmetry and filter-radius continuation.

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "rto/error.hpp"
#include "rto/material.hpp"
#include "rto/mesh_fem.hpp"

namespace rto {

using fem::Vector;

/// Row-stochastic linear ("hat") density filter over the active elements.
struct FilterMatrix {
  Eigen::SparseMatrix<double, Eigen::RowMajor> H;
  Eigen::SparseMatrix<double, Eigen::RowMajor> Ht;
  double radius = 0.0;

  Vector apply(const Vector& x) const { return H * x; }
  Vector apply_transpose(const Vector& g) const { return Ht * g; }
};

/// H_ij proportional to max(0, R - |c_i - c_j|), rows normalized to one.
inline FilterMatrix build_filter(const fem::Mesh& mesh, double radius) {
  if (!(radius > 0.0)) throw ParameterError("filter radius must be positive");
  const int n = mesh.num_elements();
  const double h = mesh.element_size();
  const int reach = static_cast<int>(std::ceil(radius / h));
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(n) * (2 * reach + 1) * (2 * reach + 1));
  std::vector<Eigen::Triplet<double>> row;
  for (int e = 0; e < n; ++e) {
    const auto [ix, iy] = mesh.cell_coords(e);
    row.clear();
    double sum = 0.0;
    for (int jy = std::max(0, iy - reach); jy <= std::min(mesh.ny() - 1, iy + reach); ++jy) {
      for (int jx = std::max(0, ix - reach); jx <= std::min(mesh.nx() - 1, ix + reach); ++jx) {
        const int j = mesh.element_at(jx, jy);
        if (j < 0) continue;
        const double d = h * std::hypot(double(jx - ix), double(jy - iy));
        const double w = radius - d;
        if (w <= 0.0) continue;
        row.emplace_back(e, j, w);
        sum += w;
      }
    }
    for (const auto& t : row) trips.emplace_back(t.row(), t.col(), t.value() / sum);
  }
  FilterMatrix F;
  F.radius = radius;
  F.H.resize(n, n);
  F.H.setFromTriplets(trips.begin(), trips.end());
  F.H.makeCompressed();
  F.Ht = F.H.transpose();
  return F;
}

inline Vector simp_modulus(const Vector& xbar, const MaterialModel& mat) {
  Vector E(xbar.size());
  for (Eigen::Index i = 0; i < xbar.size(); ++i) E[i] = mat.modulus(xbar[i]);
  return E;
}

/// Gradient with respect to raw densities: H^T g_xbar.
inline Vector chain_gradient(const FilterMatrix& F, const Vector& g_xbar) {
  if (g_xbar.size() != F.H.rows()) throw PreconditionError("gradient size does not match filter");
  return F.apply_transpose(g_xbar);
}

/// vtilde_i = (H^T v)_i / (V0 Vf): the per-element upper bound of the scaled design.
inline Vector scaled_bounds(const FilterMatrix& F, const Vector& volumes, double V0, double Vf) {
  if (!(Vf > 0.0 && Vf < 1.0)) throw ParameterError("volume fraction must lie in (0, 1)");
  if (!(volumes.array() > 0.0).all()) throw ParameterError("element volumes must be positive");
  return F.apply_transpose(volumes) / (V0 * Vf);
}

struct ScaledDesign {
  Vector x_tilde;
  Vector v_tilde;
};

inline ScaledDesign scale_variables(const Vector& x, const FilterMatrix& F, const Vector& volumes, double V0,
                                    double Vf) {
  ScaledDesign s;
  s.v_tilde = scaled_bounds(F, volumes, V0, Vf);
  s.x_tilde = s.v_tilde.cwiseProduct(x);
  return s;
}

inline Vector back_scale(const Vector& x_tilde, const Vector& v_tilde) {
  return x_tilde.cwiseQuotient(v_tilde);
}

/// Gradient with respect to the scaled design: G_i / vtilde_i.
inline Vector scale_gradient(const Vector& G, const Vector& v_tilde) {
  if (!(v_tilde.array() > 0.0).all()) throw PreconditionError("scaled bounds must be positive");
  return G.cwiseQuotient(v_tilde);
}

/// Element pairs mirrored about the vertical mid-axis of the bounding box.
struct SymmetryMap {
  std::vector<int> mirror;  // empty means identity

  bool identity() const { return mirror.empty(); }
  int operator()(int i) const { return mirror.empty() ? i : mirror[i]; }

  static SymmetryMap vertical_axis(const fem::Mesh& mesh) {
    SymmetryMap map;
    map.mirror.resize(static_cast<std::size_t>(mesh.num_elements()));
    for (int e = 0; e < mesh.num_elements(); ++e) {
      const auto [ix, iy] = mesh.cell_coords(e);
      const int m = mesh.element_at(mesh.nx() - 1 - ix, iy);
      if (m < 0) throw ParameterError("active mask is not mirror-symmetric about the vertical axis");
      map.mirror[e] = m;
    }
    return map;
  }

  bool involutive() const {
    for (std::size_t i = 0; i < mirror.size(); ++i) {
      const int j = mirror[i];
      if (j < 0 || static_cast<std::size_t>(j) >= mirror.size() || mirror[j] != static_cast<int>(i)) {
        return false;
      }
    }
    return true;
  }
};

inline Vector symmetrize(const Vector& field, const SymmetryMap& map) {
  if (map.identity()) return field;
  if (static_cast<Eigen::Index>(map.mirror.size()) != field.size()) {
    throw PreconditionError("symmetry map size does not match field");
  }
  Vector out(field.size());
  for (Eigen::Index i = 0; i < field.size(); ++i) out[i] = 0.5 * (field[i] + field[map.mirror[i]]);
  return out;
}

/// Staircase continuation: R_start until start_step, then one decrement of
/// (R_start - R_end)/decrements every `interval` steps down to R_end.
struct RadiusSchedule {
  double r_start = 3.0;
  double r_end = 3.0;
  int start_step = 0;
  int interval = 1;
  int decrements = 6;

  bool constant() const { return r_start == r_end; }
};

inline double radius_schedule(int step, const RadiusSchedule& s) {
  if (s.constant() || step < s.start_step) return s.r_start;
  if (s.interval < 1 || s.decrements < 1) throw ParameterError("radius schedule needs interval, decrements >= 1");
  const int count = std::min(s.decrements, (step - s.start_step) / s.interval);
  if (count == s.decrements) return s.r_end;
  return s.r_start - count * (s.r_start - s.r_end) / s.decrements;
}

}  // namespace rto
