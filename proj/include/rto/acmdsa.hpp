#pragma once

// Accelerated entropic mirror-descent SA loop for robust compliance
// minimization: momentum sequences, step-size calibration from sampled
// gradient bounds, adaptive recalibration and move-limit damping.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rto/density_simp.hpp"
#include "rto/entropic_prox.hpp"
#include "rto/error.hpp"
#include "rto/problem.hpp"
#include "rto/stochastic_loads.hpp"

namespace rto::acmdsa {

enum class Mode { acmdsa, mdsa, mc_reference };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::acmdsa: return "acmdsa";
    case Mode::mdsa: return "mdsa";
    case Mode::mc_reference: return "mc";
  }
  return "?";
}

struct RecalConfig {
  int N_rst = 100;
  int delta_rst = 100;
  double eps_rst = 0.025;
};

struct DampingConfig {
  int N_damp = 400;
  double eps_damp = 0.05;
  double tau = 2.0;
  int N_D = 100;
};

struct Termination {
  int N_max = 500;
  int N_min = 400;
  double eps = 0.01;
};

struct Hyperparams {
  Mode mode = Mode::acmdsa;
  double theta = 1.0;
  int m = 2;
  int N_M = 6;
  double alpha = 1.0;
  double move = 0.2;
  int m_eval = 10000;
  RecalConfig recal;
  DampingConfig damping;
  Termination stop;

  void validate() const {
    if (!(theta > 0.0) || !std::isfinite(theta)) throw ParameterError("theta must be positive");
    if (m < 2) throw ParameterError("sample size m must be >= 2");
    if (N_M < 1) throw ParameterError("N_M must be >= 1");
    if (!(alpha > 0.0)) throw ParameterError("alpha must be positive");
    if (!(move > 0.0 && move <= 1.0)) throw ParameterError("move limit must lie in (0, 1]");
    if (m_eval < 2) throw ParameterError("m_eval must be >= 2");
    if (recal.delta_rst < 1) throw ParameterError("delta_rst must be >= 1");
    if (!(damping.tau > 1.0)) throw ParameterError("tau must exceed 1");
    if (damping.N_D < 2) throw ParameterError("N_D must be >= 2");
    if (stop.N_max < 1 || stop.N_min < 0 || stop.N_min > stop.N_max) {
      throw ParameterError("termination requires 0 <= N_min <= N_max");
    }
    if (!(stop.eps > 0.0)) throw ParameterError("termination tolerance must be positive");
  }
};

/// Step-size state. eta_bar is only meaningful once calibrated.
struct StepPolicy {
  double theta = 1.0;
  double alpha = 1.0;
  double D = 1.0;  // sqrt(ln n)
  double N = 1.0;  // horizon (N_max)
  double M = 0.0;
  double Sigma = 0.0;
  double eta_bar = 0.0;
  bool constant_step = false;  // plain MDSA
  bool calibrated = false;
};

/// eta_bar = sqrt(6 alpha) D / ((N+2)^{3/2} sqrt(4 M^2 + Sigma^2)).
inline double accelerated_step_base(double alpha, double D, double N, double M, double Sigma) {
  const double denom = std::pow(N + 2.0, 1.5) * std::sqrt(4.0 * M * M + Sigma * Sigma);
  if (!(denom > 0.0)) throw NumericalError("calibration error: gradient bounds are zero");
  return std::sqrt(6.0 * alpha) * D / denom;
}

/// Robust-SA constant step sqrt(2 alpha) D / (M sqrt(N)).
inline double constant_step_base(double alpha, double D, double N, double M) {
  if (!(M > 0.0)) throw NumericalError("calibration error: gradient bound is zero");
  return std::sqrt(2.0 * alpha) * D / (M * std::sqrt(N));
}

inline double eta_k(const StepPolicy& policy, int k_in) {
  if (!policy.calibrated) throw StateError("step policy used before calibration");
  if (policy.constant_step) return policy.theta * policy.eta_bar;
  return policy.theta * policy.eta_bar * (k_in + 1) / 2.0;
}

inline double beta_k(int k_in) {
  if (k_in < 1) throw PreconditionError("k_in must be >= 1");
  return (k_in + 1) / 2.0;
}

/// Middle point x_md = x / beta + (1 - 1/beta) x_ag.
inline Vector middle_point(const Vector& x, const Vector& x_ag, double beta) {
  return x / beta + (1.0 - 1.0 / beta) * x_ag;
}

/// Aggregated point x_ag+ = x+ / beta + (1 - 1/beta) x_ag. With beta = (k_in+1)/2
/// this is the running average of the iterates weighted by their inner index.
inline Vector aggregate(const Vector& x_next, const Vector& x_ag, double beta) {
  return x_next / beta + (1.0 - 1.0 / beta) * x_ag;
}

struct GradientBounds {
  double M = 0.0;
  double Sigma = 0.0;
};

/// M = sqrt(mean ||G_i||_inf^2), Sigma = sqrt(mean ||G_i - Q||_inf^2), Q = mean G_i.
inline GradientBounds gradient_bounds(std::span<const Vector> samples) {
  if (samples.empty()) throw PreconditionError("no gradient samples");
  const double count = static_cast<double>(samples.size());
  Vector Q = Vector::Zero(samples.front().size());
  GradientBounds b;
  for (const auto& g : samples) {
    Q += g;
    b.M += g.lpNorm<Eigen::Infinity>() * g.lpNorm<Eigen::Infinity>();
  }
  Q /= count;
  for (const auto& g : samples) {
    const double d = (g - Q).lpNorm<Eigen::Infinity>();
    b.Sigma += d * d;
  }
  b.M = std::sqrt(b.M / count);
  b.Sigma = std::sqrt(b.Sigma / count);
  return b;
}

/// Sets M, Sigma and eta_bar of the policy from sampled gradient bounds.
inline void apply_bounds(StepPolicy& policy, const GradientBounds& b) {
  policy.M = b.M;
  policy.Sigma = b.Sigma;
  policy.eta_bar = policy.constant_step ? constant_step_base(policy.alpha, policy.D, policy.N, b.M)
                                        : accelerated_step_base(policy.alpha, policy.D, policy.N, b.M, b.Sigma);
  policy.calibrated = true;
}

/// Recalibration trigger: k >= N_rst, k_in >= delta_rst and ||dx_ag||_2 < eps_rst.
inline bool maybe_recalibrate(int k, int k_in, double dx_ag_l2, const RecalConfig& cfg) {
  return k >= cfg.N_rst && k_in >= cfg.delta_rst && dx_ag_l2 < cfg.eps_rst;
}

/// R_k = (1/N_D) ||E_k - E_{k-N_D+1}||_2 / ||E_k - E_{k-1}||_2, window.back() = E_k.
/// A zero denominator yields 0 and sets *zero_denominator.
inline double effective_step_ratio(std::span<const Vector> window, int N_D, bool* zero_denominator = nullptr) {
  if (static_cast<int>(window.size()) < N_D) throw PreconditionError("damping window is not full");
  const Vector& Ek = window.back();
  const Vector& Eprev = window[window.size() - 2];
  const Vector& Eold = window[window.size() - static_cast<std::size_t>(N_D)];
  const double den = (Ek - Eprev).norm();
  if (zero_denominator) *zero_denominator = den == 0.0;
  if (den == 0.0) return 0.0;
  return (Ek - Eold).norm() / N_D / den;
}

/// Move limit and the modulus history used to detect stalled progress.
class DampingState {
 public:
  DampingState(double move, const DampingConfig& cfg) : move_(move), cfg_(cfg) {}

  double move() const { return move_; }
  const DampingConfig& config() const { return cfg_; }
  int zero_denominators() const { return zero_denominators_; }
  std::optional<double> last_ratio() const { return last_ratio_; }

  void push(Vector E) {
    history_.push_back(std::move(E));
    while (static_cast<int>(history_.size()) > cfg_.N_D + 1) history_.pop_front();
  }

  /// Evaluates R_k and divides the move limit by tau when stalled. The
  /// history is cleared after a reduction, so the next one needs a fresh
  /// window of N_D + 1 moduli.
  bool maybe_damp(int k) {
    last_ratio_.reset();
    if (static_cast<int>(history_.size()) < cfg_.N_D + 1) return false;
    std::vector<Vector> window(history_.begin(), history_.end());
    bool zero = false;
    const double R = effective_step_ratio(window, cfg_.N_D, &zero);
    if (zero) ++zero_denominators_;
    last_ratio_ = R;
    if (k >= cfg_.N_damp && R <= cfg_.eps_damp) {
      move_ /= cfg_.tau;
      history_.clear();
      return true;
    }
    return false;
  }

 private:
  double move_;
  DampingConfig cfg_;
  std::deque<Vector> history_;
  std::optional<double> last_ratio_;
  int zero_denominators_ = 0;
};

struct StepRecord {
  int step = 0;
  double J_m = 0.0;
  double mu_m = 0.0;
  double var_m = 0.0;
  double eta = 0.0;
  double move = 0.0;
  double dx_ag_l2 = 0.0;
  double dx_ag_inf = 0.0;
  bool recal = false;
  bool damp = false;
  double radius = 0.0;
  int bisection_iterations = 0;
};

struct RunRecord {
  std::vector<StepRecord> history;
  double J_hat = 0.0;
  double mu_hat = 0.0;
  double sigma_hat = 0.0;
  double J_std_error = 0.0;
  int N_step = 0;
  long N_solve = 0;
  int recalibrations = 0;
  int dampings = 0;
  int volume_inactive_steps = 0;
  int clipped_exponents = 0;
  int zero_denominators = 0;
  double wall_s = 0.0;
  double final_volume_error = 0.0;  // |v^T xbar - Vf V0| / (Vf V0)
  std::vector<double> eta_bar_history;
  Vector x_star;
  Vector xbar_star;

  /// N_solve = m N_step + m N_M (1 + recalibrations).
  long expected_solves(int m, int N_M) const {
    return static_cast<long>(m) * N_step + static_cast<long>(m) * N_M * (1 + recalibrations);
  }
};

struct RunOptions {
  std::uint64_t seed = 1;
  fem::SolverOptions solver;
  int workers = 1;
  bool evaluate = true;
};

namespace detail {

struct ScaledState {
  FilterMatrix F;
  Vector v_tilde;
};

inline ScaledState make_scaled_state(const ProblemSpec& p, double radius, const Vector& volumes, double V0) {
  ScaledState s;
  s.F = build_filter(*p.mesh, radius);
  s.v_tilde = scaled_bounds(s.F, volumes, V0, p.volume_fraction);
  return s;
}

// Rescales x_tilde multiplicatively (clamped to [0, vtilde]) so that it sums to one.
inline Vector renormalize(const Vector& x_tilde, const Vector& v_tilde) {
  return prox::solve_multiplier(x_tilde, Vector::Zero(x_tilde.size()), 1.0, v_tilde, 1.0).x_tilde;
}

}  // namespace detail

/// Applies the Monte Carlo reference settings: m = 1000, 100 steps and a
/// filter schedule shifted to the same relative stage of the run.
inline void apply_mc_reference(Hyperparams& hp, RadiusSchedule& schedule) {
  const double ratio = 100.0 / hp.stop.N_max;
  hp.mode = Mode::mc_reference;
  hp.m = 1000;
  schedule.start_step = static_cast<int>(std::lround(schedule.start_step * ratio));
  schedule.interval = std::max(1, static_cast<int>(std::lround(schedule.interval * ratio)));
  hp.stop.N_max = 100;
  hp.stop.N_min = 100;
  hp.recal.N_rst = static_cast<int>(std::lround(hp.recal.N_rst * ratio));
  hp.recal.delta_rst = std::max(1, static_cast<int>(std::lround(hp.recal.delta_rst * ratio)));
  hp.damping.N_damp = static_cast<int>(std::lround(hp.damping.N_damp * ratio));
  hp.damping.N_D = std::max(2, static_cast<int>(std::lround(hp.damping.N_D * ratio)));
}

/// Runs one optimization and (optionally) the final large-sample evaluation.
/// Output design x* is the aggregated sequence (the plain iterate in mdsa mode).
inline RunRecord run(const ProblemSpec& problem, const RtoWeights& weights, const Hyperparams& hp,
                     const RunOptions& opts) {
  hp.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const fem::Mesh& mesh = *problem.mesh;
  const FemContext ctx = problem.make_context(opts.solver, opts.workers);
  const int n = mesh.num_elements();
  const Vector volumes = problem.element_volumes();
  const double V0 = volumes.sum();
  const SymmetryMap symmetry = problem.symmetric ? SymmetryMap::vertical_axis(mesh) : SymmetryMap{};
  const bool momentum = hp.mode != Mode::mdsa;

  double radius = radius_schedule(1, problem.filter);
  detail::ScaledState st = detail::make_scaled_state(problem, radius, volumes, V0);

  RunRecord rec;
  int step = 0;

  // Uniform feasible start x = Vf.
  Vector x_tilde = st.v_tilde * problem.volume_fraction;
  x_tilde = detail::renormalize(x_tilde, st.v_tilde);
  Vector x_tilde_ag = x_tilde;
  Vector x_ag = back_scale(x_tilde_ag, st.v_tilde);

  StepPolicy policy;
  policy.theta = hp.theta;
  policy.alpha = hp.alpha;
  policy.D = std::sqrt(std::log(static_cast<double>(std::max(n, 2))));
  policy.N = hp.stop.N_max;
  policy.constant_step = !momentum;

  int calibrations = 0;
  auto calibrate = [&](const Vector& x_tilde_point) {
    const Vector x_point = back_scale(x_tilde_point, st.v_tilde);
    std::vector<Vector> samples;
    for (int i = 0; i < hp.N_M; ++i) {
      const auto rng = RngStream::for_calibration(opts.seed, static_cast<std::uint64_t>(calibrations),
                                                  static_cast<std::uint64_t>(i));
      GradientEstimate est = estimate_gradient(ctx, st.F, st.v_tilde, x_point, weights, hp.m, rng);
      rec.N_solve += hp.m;
      samples.push_back(symmetrize(est.G_tilde, symmetry));
    }
    apply_bounds(policy, gradient_bounds(samples));
    rec.eta_bar_history.push_back(policy.eta_bar);
    ++calibrations;
  };

  DampingState damping(hp.move, hp.damping);
  int k_in = 1;

  try {
    calibrate(x_tilde);

    for (step = 1; step <= hp.stop.N_max; ++step) {
      StepRecord sr;
      sr.step = step;
      sr.radius = radius;

      const double beta = beta_k(k_in);
      const Vector x_tilde_md = momentum ? middle_point(x_tilde, x_tilde_ag, beta) : x_tilde;
      const Vector x_md = back_scale(x_tilde_md, st.v_tilde);

      const GradientEstimate est = estimate_gradient(ctx, st.F, st.v_tilde, x_md, weights, hp.m,
                                                     RngStream::for_step(opts.seed, static_cast<std::uint64_t>(step)));
      rec.N_solve += hp.m;
      sr.J_m = est.J;
      sr.mu_m = est.mu;
      sr.var_m = est.var;

      const Vector G_tilde = symmetrize(est.G_tilde, symmetry);
      sr.eta = eta_k(policy, k_in);
      sr.move = damping.move();
      prox::ProxOutput px = prox::mdsa_step({x_tilde, G_tilde, sr.eta, damping.move(), st.v_tilde});
      sr.bisection_iterations = px.iterations;
      rec.clipped_exponents += px.clipped;
      if (px.volume_inactive) ++rec.volume_inactive_steps;

      const Vector x_tilde_next = std::move(px.x_tilde);
      const Vector x_tilde_ag_next =
          momentum ? aggregate(x_tilde_next, x_tilde_ag, beta) : x_tilde_next;
      const Vector x_ag_next = back_scale(x_tilde_ag_next, st.v_tilde);
      const Vector dx = x_ag_next - x_ag;
      sr.dx_ag_l2 = dx.norm();
      sr.dx_ag_inf = dx.lpNorm<Eigen::Infinity>();

      x_tilde = x_tilde_next;
      x_tilde_ag = x_tilde_ag_next;
      x_ag = x_ag_next;
      rec.N_step = step;

      if (step >= hp.stop.N_min && sr.dx_ag_inf < hp.stop.eps) {
        rec.history.push_back(sr);
        break;
      }

      damping.push(simp_modulus(st.F.apply(back_scale(x_tilde, st.v_tilde)), problem.material));
      sr.damp = damping.maybe_damp(step);
      if (sr.damp) ++rec.dampings;

      ++k_in;
      if (maybe_recalibrate(step + 1, k_in, sr.dx_ag_l2, hp.recal)) {
        sr.recal = true;
        ++rec.recalibrations;
        k_in = 1;
        x_tilde = x_tilde_ag;
        calibrate(x_tilde);
      }

      const double next_radius = radius_schedule(step + 1, problem.filter);
      if (next_radius != radius) {
        const Vector x_cur = back_scale(x_tilde, st.v_tilde);
        radius = next_radius;
        st = detail::make_scaled_state(problem, radius, volumes, V0);
        x_tilde = detail::renormalize(st.v_tilde.cwiseProduct(x_cur), st.v_tilde);
        x_tilde_ag = detail::renormalize(st.v_tilde.cwiseProduct(x_ag), st.v_tilde);
        x_ag = back_scale(x_tilde_ag, st.v_tilde);
      }
      rec.history.push_back(sr);
    }
  } catch (const std::exception& e) {
    throw RunError(step, e.what());
  }

  rec.zero_denominators = damping.zero_denominators();
  rec.x_star = x_ag;
  rec.xbar_star = st.F.apply(x_ag);
  rec.final_volume_error = std::abs(volumes.dot(rec.xbar_star) - problem.volume_fraction * V0) /
                           (problem.volume_fraction * V0);

  if (rec.N_solve != rec.expected_solves(hp.m, hp.N_M)) {
    throw StateError("solve accounting mismatch");
  }

  if (opts.evaluate) {
    const DesignEvaluation ev =
        evaluate_design(ctx, rec.xbar_star, weights, hp.m_eval, RngStream::for_evaluation(opts.seed));
    rec.J_hat = ev.J;
    rec.mu_hat = ev.mu;
    rec.sigma_hat = ev.sigma;
    rec.J_std_error = ev.J_std_error;
  }
  rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

}  // namespace rto::acmdsa
