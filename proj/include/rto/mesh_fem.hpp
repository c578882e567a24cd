#pragma once

// Structured bilinear-quad discretization of 2D plane-stress elasticity.
//
// Node (ix, iy) has id iy*(nx+1)+ix and owns DOFs 2*id (x) and 2*id+1 (y).
// Element nodes are ordered counter-clockwise from the lower-left corner.
// Only nodes touching an active element carry unknowns; the DOFs of all
// other nodes, together with the prescribed supports, are eliminated.

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rto/error.hpp"
#include "rto/material.hpp"

#ifdef RTO_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

namespace rto::fem {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Matrix8 = Eigen::Matrix<double, 8, 8>;

class Mesh {
 public:
  Mesh() = default;

  /// Full nx-by-ny rectangle of square elements with side element_size.
  Mesh(int nx, int ny, double element_size)
      : Mesh(nx, ny, element_size, std::vector<char>(static_cast<std::size_t>(nx) * ny, 1)) {}

  /// Rectangle carved by active_mask (cell index iy*nx+ix).
  Mesh(int nx, int ny, double element_size, std::vector<char> active_mask)
      : nx_(nx), ny_(ny), h_(element_size), mask_(std::move(active_mask)) {
    if (nx <= 0 || ny <= 0) throw ParameterError("mesh needs positive element counts");
    if (!(element_size > 0.0)) throw ParameterError("mesh needs a positive element size");
    if (mask_.size() != static_cast<std::size_t>(nx) * ny) {
      throw ParameterError("active mask size does not match nx*ny");
    }
    cell_to_active_.assign(mask_.size(), -1);
    for (std::size_t c = 0; c < mask_.size(); ++c) {
      if (mask_[c]) {
        cell_to_active_[c] = static_cast<int>(active_cells_.size());
        active_cells_.push_back(static_cast<int>(c));
      }
    }
    if (active_cells_.empty()) throw ParameterError("mesh has no active elements");
    node_live_.assign(static_cast<std::size_t>(num_nodes()), 0);
    for (int e = 0; e < num_elements(); ++e) {
      for (int nd : element_nodes(e)) node_live_[nd] = 1;
    }
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double element_size() const { return h_; }
  double element_volume() const { return h_ * h_; }

  /// Number of active elements (the design dimension n).
  int num_elements() const { return static_cast<int>(active_cells_.size()); }
  int num_nodes() const { return (nx_ + 1) * (ny_ + 1); }
  int num_dofs() const { return 2 * num_nodes(); }

  int node_id(int ix, int iy) const { return iy * (nx_ + 1) + ix; }
  int cell_of(int element) const { return active_cells_[element]; }
  /// Active element index of cell (ix, iy), or -1 when masked out.
  int element_at(int ix, int iy) const { return cell_to_active_[iy * nx_ + ix]; }
  bool cell_active(int ix, int iy) const { return mask_[iy * nx_ + ix] != 0; }
  bool node_live(int node) const { return node_live_[node] != 0; }
  const std::vector<char>& mask() const { return mask_; }

  std::array<int, 2> cell_coords(int element) const {
    const int c = active_cells_[element];
    return {c % nx_, c / nx_};
  }

  std::array<int, 4> element_nodes(int element) const {
    const auto [ix, iy] = cell_coords(element);
    return {node_id(ix, iy), node_id(ix + 1, iy), node_id(ix + 1, iy + 1), node_id(ix, iy + 1)};
  }

  std::array<int, 8> element_dofs(int element) const {
    const auto nodes = element_nodes(element);
    std::array<int, 8> dofs{};
    for (int a = 0; a < 4; ++a) {
      dofs[2 * a] = 2 * nodes[a];
      dofs[2 * a + 1] = 2 * nodes[a] + 1;
    }
    return dofs;
  }

  std::array<double, 2> element_center(int element) const {
    const auto [ix, iy] = cell_coords(element);
    return {(ix + 0.5) * h_, (iy + 0.5) * h_};
  }

  std::array<double, 2> node_position(int node) const {
    return {(node % (nx_ + 1)) * h_, (node / (nx_ + 1)) * h_};
  }

 private:
  int nx_ = 0;
  int ny_ = 0;
  double h_ = 1.0;
  std::vector<char> mask_;
  std::vector<int> active_cells_;
  std::vector<int> cell_to_active_;
  std::vector<char> node_live_;
};

struct ElementStiffness {
  Matrix8 k;
  double nu = 0.3;
};

/// Bilinear square element, plane stress, unit thickness, 2x2 Gauss rule.
inline ElementStiffness element_stiffness(double E_scale, double nu, double element_size) {
  if (!(nu >= 0.0 && nu < 0.5)) throw ParameterError("Poisson ratio must lie in [0, 0.5)");
  if (!(E_scale > 0.0)) throw ParameterError("element modulus scale must be positive");
  if (!(element_size > 0.0)) throw ParameterError("element size must be positive");

  Eigen::Matrix3d D;
  D << 1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, (1.0 - nu) / 2.0;
  D *= E_scale / (1.0 - nu * nu);

  constexpr std::array<double, 4> xi_n{-1.0, 1.0, 1.0, -1.0};
  constexpr std::array<double, 4> eta_n{-1.0, -1.0, 1.0, 1.0};
  const double g = 1.0 / std::sqrt(3.0);
  const double h = element_size;
  const double jac = 2.0 / h;  // d(xi)/dx
  const double det_j = h * h / 4.0;

  ElementStiffness out;
  out.nu = nu;
  out.k.setZero();
  for (double xi : {-g, g}) {
    for (double eta : {-g, g}) {
      Eigen::Matrix<double, 3, 8> B = Eigen::Matrix<double, 3, 8>::Zero();
      for (int a = 0; a < 4; ++a) {
        const double dx = 0.25 * xi_n[a] * (1.0 + eta * eta_n[a]) * jac;
        const double dy = 0.25 * eta_n[a] * (1.0 + xi * xi_n[a]) * jac;
        B(0, 2 * a) = dx;
        B(1, 2 * a + 1) = dy;
        B(2, 2 * a) = dy;
        B(2, 2 * a + 1) = dx;
      }
      out.k.noalias() += B.transpose() * D * B * det_j;
    }
  }
  // Exact symmetry; the quadrature sum is symmetric only up to rounding.
  out.k = (0.5 * (out.k + out.k.transpose())).eval();
  return out;
}

/// A slot of the load vector: f[dof] += scale * coefficient.
struct LoadSlot {
  int dof = 0;
  double scale = 1.0;
};

struct BoundaryConditions {
  std::vector<int> fixed_dofs;
  std::vector<LoadSlot> load_slots;
};

/// Maps full DOF numbering to the reduced (free) numbering.
struct DofMap {
  std::vector<int> reduced_of_full;  // -1 for eliminated DOFs
  std::vector<int> full_of_reduced;

  int num_free() const { return static_cast<int>(full_of_reduced.size()); }
  int num_full() const { return static_cast<int>(reduced_of_full.size()); }

  Vector restrict(const Vector& full) const {
    Vector r(num_free());
    for (int i = 0; i < num_free(); ++i) r[i] = full[full_of_reduced[i]];
    return r;
  }
  Vector prolong(const Vector& reduced) const {
    Vector f = Vector::Zero(num_full());
    for (int i = 0; i < num_free(); ++i) f[full_of_reduced[i]] = reduced[i];
    return f;
  }
};

namespace detail {

// Rank of the rigid-body modes seen by the fixed DOFs: 3 means every
// translation and the in-plane rotation is suppressed.
inline int rigid_mode_rank(const Mesh& mesh, std::span<const int> fixed) {
  Eigen::Matrix3d gram = Eigen::Matrix3d::Zero();
  double scale = 0.0;
  for (int dof : fixed) {
    const int node = dof / 2;
    if (!mesh.node_live(node)) continue;
    const auto [px, py] = mesh.node_position(node);
    Eigen::Vector3d row = (dof % 2 == 0) ? Eigen::Vector3d(1.0, 0.0, -py) : Eigen::Vector3d(0.0, 1.0, px);
    gram += row * row.transpose();
    scale = std::max(scale, row.squaredNorm());
  }
  if (scale == 0.0) return 0;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(gram);
  const double tol = 1e-10 * es.eigenvalues().maxCoeff();
  int rank = 0;
  for (int i = 0; i < 3; ++i) rank += es.eigenvalues()[i] > tol ? 1 : 0;
  return rank;
}

}  // namespace detail

inline DofMap make_dof_map(const Mesh& mesh, const BoundaryConditions& bc) {
  DofMap map;
  map.reduced_of_full.assign(static_cast<std::size_t>(mesh.num_dofs()), 0);
  for (int node = 0; node < mesh.num_nodes(); ++node) {
    if (!mesh.node_live(node)) {
      map.reduced_of_full[2 * node] = -1;
      map.reduced_of_full[2 * node + 1] = -1;
    }
  }
  for (int dof : bc.fixed_dofs) {
    if (dof < 0 || dof >= mesh.num_dofs()) throw ParameterError("fixed DOF index out of range");
    map.reduced_of_full[dof] = -1;
  }
  for (int dof = 0; dof < mesh.num_dofs(); ++dof) {
    if (map.reduced_of_full[dof] < 0) continue;
    map.reduced_of_full[dof] = static_cast<int>(map.full_of_reduced.size());
    map.full_of_reduced.push_back(dof);
  }
  return map;
}

/// Reduced stiffness system K (fixed DOFs eliminated) plus its DOF map.
struct LinearSystem {
  SparseMatrix K;  // both triangles stored
  std::shared_ptr<const DofMap> dofs;
};

/// Assembles K(E) repeatedly on a fixed sparsity pattern.
class StiffnessAssembler {
 public:
  StiffnessAssembler(const Mesh& mesh, const BoundaryConditions& bc, const ElementStiffness& k0)
      : mesh_(&mesh), k0_(k0) {
    if (bc.fixed_dofs.empty()) throw AssemblyError("no supports: stiffness matrix is singular");
    if (detail::rigid_mode_rank(mesh, bc.fixed_dofs) < 3) {
      throw AssemblyError("supports do not remove all rigid-body modes");
    }
    for (const auto& s : bc.load_slots) {
      if (s.dof < 0 || s.dof >= mesh.num_dofs()) throw ParameterError("load DOF index out of range");
    }
    dofs_ = std::make_shared<const DofMap>(make_dof_map(mesh, bc));

    const int n = mesh.num_elements();
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(n) * 64);
    for (int e = 0; e < n; ++e) {
      const auto ed = mesh.element_dofs(e);
      for (int a = 0; a < 8; ++a) {
        const int ra = dofs_->reduced_of_full[ed[a]];
        if (ra < 0) continue;
        for (int b = 0; b < 8; ++b) {
          const int rb = dofs_->reduced_of_full[ed[b]];
          if (rb >= 0) trips.emplace_back(ra, rb, 1.0);
        }
      }
    }
    const int nf = dofs_->num_free();
    pattern_.resize(nf, nf);
    pattern_.setFromTriplets(trips.begin(), trips.end());
    pattern_.makeCompressed();

    // Position of every element-matrix entry inside the compressed value array.
    slots_.assign(static_cast<std::size_t>(n) * 64, -1);
    for (int e = 0; e < n; ++e) {
      const auto ed = mesh.element_dofs(e);
      for (int a = 0; a < 8; ++a) {
        const int ra = dofs_->reduced_of_full[ed[a]];
        if (ra < 0) continue;
        for (int b = 0; b < 8; ++b) {
          const int rb = dofs_->reduced_of_full[ed[b]];
          if (rb < 0) continue;
          const auto* begin = pattern_.innerIndexPtr() + pattern_.outerIndexPtr()[rb];
          const auto* end = pattern_.innerIndexPtr() + pattern_.outerIndexPtr()[rb + 1];
          const auto* it = std::lower_bound(begin, end, ra);
          slots_[static_cast<std::size_t>(e) * 64 + a * 8 + b] =
              static_cast<int>(it - pattern_.innerIndexPtr());
        }
      }
    }
  }

  const Mesh& mesh() const { return *mesh_; }
  const ElementStiffness& k0() const { return k0_; }
  const DofMap& dof_map() const { return *dofs_; }

  LinearSystem assemble(std::span<const double> E) const {
    LinearSystem sys;
    assemble_into(E, sys);
    return sys;
  }

  void assemble_into(std::span<const double> E, LinearSystem& sys) const {
    const int n = mesh_->num_elements();
    if (static_cast<int>(E.size()) != n) throw PreconditionError("modulus vector size mismatch");
    if (sys.K.nonZeros() != pattern_.nonZeros() || sys.K.rows() != pattern_.rows()) sys.K = pattern_;
    sys.dofs = dofs_;
    double* values = sys.K.valuePtr();
    std::fill(values, values + sys.K.nonZeros(), 0.0);
    for (int e = 0; e < n; ++e) {
      if (!(E[e] > 0.0)) throw AssemblyError("element modulus must be positive");
      const int* s = &slots_[static_cast<std::size_t>(e) * 64];
      for (int a = 0; a < 8; ++a) {
        for (int b = 0; b < 8; ++b) {
          const int idx = s[a * 8 + b];
          if (idx >= 0) values[idx] += E[e] * k0_.k(b, a);
        }
      }
    }
  }

 private:
  const Mesh* mesh_;
  ElementStiffness k0_;
  std::shared_ptr<const DofMap> dofs_;
  SparseMatrix pattern_;
  std::vector<int> slots_;
};

inline LinearSystem assemble(const Mesh& mesh, std::span<const double> E, const BoundaryConditions& bc,
                             const ElementStiffness& k0) {
  return StiffnessAssembler(mesh, bc, k0).assemble(E);
}

enum class SolverKind { automatic, direct, cg };

struct SolverOptions {
  SolverKind kind = SolverKind::automatic;
  double tol = 1e-8;  // relative residual
  int max_iterations = 20000;
  int direct_element_limit = 40000;
};

/// Factorizes (or preconditions) K once, then serves many right-hand sides.
/// solve() is const and safe to call concurrently.
class LinearSolver {
 public:
  explicit LinearSolver(SolverOptions opts = {}) : opts_(opts) {}

  const SolverOptions& options() const { return opts_; }

  void factorize(const LinearSystem& sys, int num_elements) {
    sys_ = &sys;
    use_direct_ = opts_.kind == SolverKind::direct ||
                  (opts_.kind == SolverKind::automatic && num_elements <= opts_.direct_element_limit);
    if (use_direct_) {
      if (!analyzed_ || analyzed_size_ != sys.K.rows()) {
        direct_ = std::make_unique<Direct>();
        direct_->analyzePattern(sys.K);
        analyzed_ = true;
        analyzed_size_ = sys.K.rows();
      }
      direct_->factorize(sys.K);
      if (direct_->info() != Eigen::Success) {
        throw AssemblyError("stiffness matrix is not positive definite (insufficient supports?)");
      }
    } else {
      inv_diag_ = sys.K.diagonal().cwiseInverse();
    }
  }

  /// Solves K u = f for a full-length load vector; returns full-length u.
  Vector solve(const Vector& f_full) const {
    if (sys_ == nullptr) throw StateError("solve called before factorize");
    const DofMap& map = *sys_->dofs;
    const Vector f = map.restrict(f_full);
    const double fnorm = f.norm();
    if (!std::isfinite(fnorm)) throw PreconditionError("load vector is not finite");
    if (fnorm == 0.0) return Vector::Zero(map.num_full());

    Vector u;
    if (use_direct_) {
      u = direct_->solve(f);
    } else {
      u = Vector::Zero(f.size());
      conjugate_gradient(f, u);
    }
    const double res = (sys_->K * u - f).norm() / fnorm;
    if (!(res <= opts_.tol)) {
      throw SolverError("linear solve missed tolerance (relative residual " + std::to_string(res) + ")", res);
    }
    return map.prolong(u);
  }

 private:
#ifdef RTO_HAVE_CHOLMOD
  using Direct = Eigen::CholmodSupernodalLLT<SparseMatrix, Eigen::Lower>;
#else
  using Direct = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;
#endif

  // Jacobi-preconditioned CG with local state only.
  void conjugate_gradient(const Vector& f, Vector& u) const {
    const SparseMatrix& K = sys_->K;
    Vector r = f;
    Vector z = inv_diag_.cwiseProduct(r);
    Vector p = z;
    double rz = r.dot(z);
    const double target = opts_.tol * 0.5 * f.norm();
    double rnorm = r.norm();
    for (int it = 0; it < opts_.max_iterations && rnorm > target; ++it) {
      const Vector Kp = K * p;
      const double alpha = rz / p.dot(Kp);
      u.noalias() += alpha * p;
      r.noalias() -= alpha * Kp;
      rnorm = r.norm();
      z = inv_diag_.cwiseProduct(r);
      const double rz_new = r.dot(z);
      p = z + (rz_new / rz) * p;
      rz = rz_new;
    }
    if (!(rnorm <= opts_.tol * f.norm())) {
      throw SolverError("CG did not converge (relative residual " + std::to_string(rnorm / f.norm()) + ")",
                        rnorm / f.norm());
    }
  }

  SolverOptions opts_;
  const LinearSystem* sys_ = nullptr;
  bool use_direct_ = true;
  bool analyzed_ = false;
  Eigen::Index analyzed_size_ = 0;
  std::unique_ptr<Direct> direct_;
  Vector inv_diag_;
};

/// One-shot solve of K u = f.
inline Vector solve(const LinearSystem& sys, const Vector& f_full, double tol = 1e-8,
                    SolverKind kind = SolverKind::automatic) {
  SolverOptions opts;
  opts.kind = kind;
  opts.tol = tol;
  LinearSolver solver(opts);
  solver.factorize(sys, 0);
  return solver.solve(f_full);
}

inline double compliance(const Vector& f, const Vector& u) { return f.dot(u); }

/// u_e^T k0 u_e for every active element.
inline Vector element_energies(const Mesh& mesh, const Vector& u, const ElementStiffness& k0) {
  const int n = mesh.num_elements();
  Vector out(n);
  Eigen::Matrix<double, 8, 1> ue;
  for (int e = 0; e < n; ++e) {
    const auto ed = mesh.element_dofs(e);
    for (int a = 0; a < 8; ++a) ue[a] = u[ed[a]];
    out[e] = ue.dot(k0.k * ue);
  }
  return out;
}

/// dC/dxbar_i = -p xbar_i^(p-1) (E0 - E_min) u_e^T k0 u_e.
inline Vector compliance_sensitivity(const Mesh& mesh, const Vector& u, std::span<const double> xbar,
                                     const MaterialModel& mat, const ElementStiffness& k0) {
  Vector g = element_energies(mesh, u, k0);
  for (int e = 0; e < mesh.num_elements(); ++e) g[e] *= -mat.modulus_slope(xbar[e]);
  return g;
}

}  // namespace rto::fem
