#pragma once

// Random point-load models, counter-keyed sampling, and the unbiased
// m-sample estimators of the mean/variance objective and its gradient.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <thread>
#include <variant>
#include <vector>

#include "rto/density_simp.hpp"
#include "rto/error.hpp"
#include "rto/mesh_fem.hpp"

namespace rto {

/// Load direction alpha ~ U(lo, hi), fixed magnitude: f = magnitude (cos a, sin a).
struct UniformAngle {
  double lo = 0.0;
  double hi = 0.0;
  double magnitude = 1.0;
};

/// Independent normal perturbations added to each axis.
struct NormalComponents {
  double mean_x = 0.0;
  double sd_x = 0.0;
  double mean_y = 0.0;
  double sd_y = 0.0;
};

using RandomPart = std::variant<std::monostate, UniformAngle, NormalComponents>;

struct LoadPoint {
  int node = 0;
  double fx = 0.0;  // deterministic part
  double fy = 0.0;
  RandomPart random;
};

/// Loads at nodes, independent across points. A sample is a coefficient
/// vector c of length 2P (x and y force of every point).
struct LoadModel {
  std::vector<LoadPoint> points;

  int num_coefficients() const { return 2 * static_cast<int>(points.size()); }

  std::vector<fem::LoadSlot> slots() const {
    std::vector<fem::LoadSlot> s;
    for (const auto& p : points) {
      s.push_back({2 * p.node, 1.0});
      s.push_back({2 * p.node + 1, 1.0});
    }
    return s;
  }

  Vector load_vector(const Vector& coeffs, int num_dofs) const {
    Vector f = Vector::Zero(num_dofs);
    for (std::size_t p = 0; p < points.size(); ++p) {
      f[2 * points[p].node] += coeffs[2 * p];
      f[2 * points[p].node + 1] += coeffs[2 * p + 1];
    }
    return f;
  }

  bool deterministic() const {
    for (const auto& p : points) {
      if (const auto* u = std::get_if<UniformAngle>(&p.random); u && u->hi != u->lo) return false;
      if (const auto* n = std::get_if<NormalComponents>(&p.random); n && (n->sd_x != 0.0 || n->sd_y != 0.0)) {
        return false;
      }
    }
    return true;
  }
};

/// Counter-keyed random stream: the draws of sample j depend only on
/// (seed, stream, j), never on evaluation order or thread count.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  enum Purpose : std::uint64_t { kStep = 1, kCalibration = 2, kEvaluation = 3, kUser = 4 };

  static RngStream for_step(std::uint64_t seed, std::uint64_t step) { return {seed, (kStep << 48) | step}; }
  static RngStream for_calibration(std::uint64_t seed, std::uint64_t calibration, std::uint64_t repeat) {
    return {seed, (kCalibration << 48) | (calibration << 16) | repeat};
  }
  static RngStream for_evaluation(std::uint64_t seed) { return {seed, kEvaluation << 48}; }

  class Engine {
   public:
    explicit Engine(std::seed_seq& seq) : gen_(seq) {}
    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
    /// Standard normal by Box-Muller (one value per call).
    double normal() {
      const double u1 = 1.0 - uniform();  // (0, 1]
      const double u2 = uniform();
      return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

   private:
    std::mt19937_64 gen_;
  };

  Engine sample(std::uint64_t index) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return Engine(seq);
  }
};

/// One i.i.d. draw of the load coefficients.
inline Vector sample_load(const LoadModel& model, RngStream::Engine& eng) {
  Vector c(model.num_coefficients());
  for (std::size_t p = 0; p < model.points.size(); ++p) {
    const auto& pt = model.points[p];
    double fx = pt.fx;
    double fy = pt.fy;
    if (const auto* u = std::get_if<UniformAngle>(&pt.random)) {
      const double a = u->lo + (u->hi - u->lo) * eng.uniform();
      fx += u->magnitude * std::cos(a);
      fy += u->magnitude * std::sin(a);
    } else if (const auto* nc = std::get_if<NormalComponents>(&pt.random)) {
      fx += nc->mean_x + nc->sd_x * eng.normal();
      fy += nc->mean_y + nc->sd_y * eng.normal();
    }
    c[2 * p] = fx;
    c[2 * p + 1] = fy;
  }
  return c;
}

/// Closed-form E[f] as load coefficients.
inline Vector mean_load(const LoadModel& model) {
  Vector c(model.num_coefficients());
  for (std::size_t p = 0; p < model.points.size(); ++p) {
    const auto& pt = model.points[p];
    double fx = pt.fx;
    double fy = pt.fy;
    if (const auto* u = std::get_if<UniformAngle>(&pt.random)) {
      if (u->hi == u->lo) {
        fx += u->magnitude * std::cos(u->lo);
        fy += u->magnitude * std::sin(u->lo);
      } else {
        const double span = u->hi - u->lo;
        fx += u->magnitude * (std::sin(u->hi) - std::sin(u->lo)) / span;
        fy += u->magnitude * (std::cos(u->lo) - std::cos(u->hi)) / span;
      }
    } else if (const auto* nc = std::get_if<NormalComponents>(&pt.random)) {
      fx += nc->mean_x;
      fy += nc->mean_y;
    }
    c[2 * p] = fx;
    c[2 * p + 1] = fy;
  }
  return c;
}

/// Mean/variance weighting of the robust objective.
struct RtoWeights {
  double kappa = 1.0;
  double w = 1.0;

  /// w = fbar^T fbar / E0 from the closed-form mean load.
  static RtoWeights from_model(double kappa, const LoadModel& model, double E0) {
    if (!(kappa >= 0.0 && kappa <= 1.0)) throw ParameterError("kappa must lie in [0, 1]");
    const Vector fbar = mean_load(model);
    RtoWeights r{kappa, fbar.squaredNorm() / E0};
    if (!(r.w > 0.0)) throw ParameterError("mean load is zero; objective normalization undefined");
    return r;
  }

  double mean_weight() const { return kappa / w; }
  double var_weight() const { return (1.0 - kappa) / (w * w); }
};

struct ObjectiveEstimate {
  double mu = 0.0;
  double var = 0.0;
  double sigma = 0.0;
  double J = 0.0;
};

inline ObjectiveEstimate estimate_objective(std::span<const double> C, const RtoWeights& weights) {
  const std::size_t m = C.size();
  if (m == 0) throw PreconditionError("no samples");
  if (m < 2 && weights.kappa < 1.0) {
    throw PreconditionError("two i.i.d. samples are needed for the variance estimator");
  }
  ObjectiveEstimate est;
  double sum = 0.0;
  for (double c : C) sum += c;
  est.mu = sum / static_cast<double>(m);
  if (m >= 2) {
    double ss = 0.0;
    for (double c : C) ss += (c - est.mu) * (c - est.mu);
    est.var = ss / static_cast<double>(m - 1);
  }
  est.sigma = std::sqrt(est.var);
  est.J = weights.mean_weight() * est.mu + weights.var_weight() * est.var;
  return est;
}

struct GradientEstimate {
  int m = 0;
  std::vector<double> C;
  double mu = 0.0;
  double var = 0.0;
  double sigma = 0.0;
  double J = 0.0;
  Vector G_mu;
  Vector G_var;
  Vector G;
  Vector G_tilde;
};

/// Everything needed to turn a physical density into compliances.
struct FemContext {
  const fem::Mesh* mesh = nullptr;
  fem::ElementStiffness k0;
  MaterialModel material;
  LoadModel loads;
  fem::SolverOptions solver;
  int workers = 1;
  std::shared_ptr<const fem::StiffnessAssembler> assembler;

  FemContext() = default;
  FemContext(const fem::Mesh& m, std::vector<int> fixed_dofs, LoadModel load_model, MaterialModel mat, double nu,
             fem::SolverOptions opts = {}, int num_workers = 1)
      : mesh(&m),
        k0(fem::element_stiffness(1.0, nu, m.element_size())),
        material(mat),
        loads(std::move(load_model)),
        solver(opts),
        workers(num_workers) {
    material.validate();
    for (const auto& p : loads.points) {
      if (p.node < 0 || p.node >= m.num_nodes() || !m.node_live(p.node)) {
        throw ParameterError("load point is not a node of the active mesh");
      }
    }
    fem::BoundaryConditions bc{std::move(fixed_dofs), loads.slots()};
    assembler = std::make_shared<const fem::StiffnessAssembler>(m, bc, k0);
  }
};

/// Stiffness of one physical design, factorized once for many load samples.
class FactoredDesign {
 public:
  FactoredDesign(const FemContext& ctx, Vector xbar) : ctx_(&ctx), xbar_(std::move(xbar)), solver_(ctx.solver) {
    const Vector E = simp_modulus(xbar_, ctx.material);
    ctx.assembler->assemble_into({E.data(), static_cast<std::size_t>(E.size())}, sys_);
    solver_.factorize(sys_, ctx.mesh->num_elements());
  }

  const Vector& xbar() const { return xbar_; }

  Vector solve(const Vector& f) const { return solver_.solve(f); }

  /// Compliance and its gradient with respect to xbar for one load.
  double compliance(const Vector& coeffs, Vector* grad_xbar) const {
    const Vector f = ctx_->loads.load_vector(coeffs, ctx_->mesh->num_dofs());
    const Vector u = solver_.solve(f);
    if (grad_xbar) {
      *grad_xbar = fem::compliance_sensitivity(*ctx_->mesh, u, {xbar_.data(), static_cast<std::size_t>(xbar_.size())},
                                               ctx_->material, ctx_->k0);
    }
    return fem::compliance(f, u);
  }

  /// Q = B^T K^-1 B over the load coefficients, so C(c) = c^T Q c exactly.
  Eigen::MatrixXd compliance_form() const {
    const int L = ctx_->loads.num_coefficients();
    Eigen::MatrixXd Q(L, L);
    for (int a = 0; a < L; ++a) {
      Vector e = Vector::Zero(L);
      e[a] = 1.0;
      const Vector u = solver_.solve(ctx_->loads.load_vector(e, ctx_->mesh->num_dofs()));
      for (int b = 0; b < L; ++b) {
        Vector eb = Vector::Zero(L);
        eb[b] = 1.0;
        Q(b, a) = ctx_->loads.load_vector(eb, ctx_->mesh->num_dofs()).dot(u);
      }
    }
    return 0.5 * (Q + Q.transpose());
  }

 private:
  const FemContext* ctx_;
  Vector xbar_;
  fem::LinearSystem sys_;
  fem::LinearSolver solver_;
};

namespace detail {

// Runs body(j) for j in [0, count) on up to `workers` threads.
template <class Body>
void parallel_for(int count, int workers, Body&& body) {
  if (workers <= 1 || count <= 1) {
    for (int j = 0; j < count; ++j) body(j);
    return;
  }
  const int nthreads = std::min(workers, count);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nthreads));
  for (int t = 0; t < nthreads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int j = t; j < count; j += nthreads) body(j);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Gradient estimate from m loads drawn for the given coefficient samples.
/// The reduction runs in sample order, so results do not depend on `workers`.
inline GradientEstimate estimate_gradient_from_samples(const FemContext& ctx, const FilterMatrix& F,
                                                       const Vector& v_tilde, const Vector& x,
                                                       const RtoWeights& weights,
                                                       const std::vector<Vector>& samples) {
  const int m = static_cast<int>(samples.size());
  if (m < 2) throw PreconditionError("two i.i.d. samples are needed for the gradient estimator");
  FactoredDesign design(ctx, F.apply(x));

  std::vector<double> C(static_cast<std::size_t>(m));
  std::vector<Vector> grads(static_cast<std::size_t>(m));
  detail::parallel_for(m, ctx.workers, [&](int j) { C[j] = design.compliance(samples[j], &grads[j]); });

  GradientEstimate est;
  est.m = m;
  est.C = C;
  const ObjectiveEstimate obj = estimate_objective(C, weights);
  est.mu = obj.mu;
  est.var = obj.var;
  est.sigma = obj.sigma;
  est.J = obj.J;

  // Accumulate in xbar space; H^T is linear and applied once at the end.
  const Eigen::Index n = x.size();
  Vector g_mu = Vector::Zero(n);
  Vector g_cc = Vector::Zero(n);
  for (int j = 0; j < m; ++j) {
    g_mu += grads[j];
    g_cc += C[j] * grads[j];
  }
  g_mu /= static_cast<double>(m);
  const Vector g_var = (2.0 / (m - 1)) * (g_cc - static_cast<double>(m) * est.mu * g_mu);

  est.G_mu = chain_gradient(F, g_mu);
  est.G_var = chain_gradient(F, g_var);
  est.G = weights.mean_weight() * est.G_mu + weights.var_weight() * est.G_var;
  est.G_tilde = scale_gradient(est.G, v_tilde);
  return est;
}

inline std::vector<Vector> draw_samples(const LoadModel& model, const RngStream& rng, int m) {
  std::vector<Vector> samples;
  samples.reserve(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    auto eng = rng.sample(static_cast<std::uint64_t>(j));
    samples.push_back(sample_load(model, eng));
  }
  return samples;
}

inline GradientEstimate estimate_gradient(const FemContext& ctx, const FilterMatrix& F, const Vector& v_tilde,
                                          const Vector& x, const RtoWeights& weights, int m, const RngStream& rng) {
  if (m < 2) throw PreconditionError("two i.i.d. samples are needed for the gradient estimator");
  return estimate_gradient_from_samples(ctx, F, v_tilde, x, weights, draw_samples(ctx.loads, rng, m));
}

struct DesignEvaluation {
  int m = 0;
  double J = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  double J_std_error = 0.0;  // batch-means standard error of J
};

/// Large-sample estimates of J, mu and sigma for a fixed physical design.
/// Compliance is quadratic in the load coefficients, so one solve per
/// coefficient gives C for every sample exactly.
inline DesignEvaluation evaluate_design(const FemContext& ctx, const Vector& xbar, const RtoWeights& weights,
                                        int m_eval, const RngStream& rng) {
  if (m_eval < 2) throw PreconditionError("evaluation needs at least two samples");
  FactoredDesign design(ctx, xbar);
  const Eigen::MatrixXd Q = design.compliance_form();
  std::vector<double> C(static_cast<std::size_t>(m_eval));
  for (int j = 0; j < m_eval; ++j) {
    auto eng = rng.sample(static_cast<std::uint64_t>(j));
    const Vector c = sample_load(ctx.loads, eng);
    C[j] = c.dot(Q * c);
  }
  const ObjectiveEstimate obj = estimate_objective(C, weights);
  DesignEvaluation ev;
  ev.m = m_eval;
  ev.J = obj.J;
  ev.mu = obj.mu;
  ev.sigma = obj.sigma;

  const int batches = std::min(20, m_eval / 2);
  const int per = m_eval / batches;
  std::vector<double> Jb;
  for (int b = 0; b < batches; ++b) {
    Jb.push_back(estimate_objective(std::span<const double>(C).subspan(b * per, per), weights).J);
  }
  double mean = 0.0;
  for (double v : Jb) mean += v;
  mean /= batches;
  double ss = 0.0;
  for (double v : Jb) ss += (v - mean) * (v - mean);
  ev.J_std_error = std::sqrt(ss / (batches - 1)) / std::sqrt(static_cast<double>(batches));
  return ev;
}

}  // namespace rto
