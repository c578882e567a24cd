#pragma once

// Entropic mirror-descent step on the scaled feasible set
//   { z : sum(z) = 1, lower <= z <= upper }.
// The unconstrained minimizer is multiplicative, z_i = x_i exp(-eta (G_i + lambda));
// the multiplier lambda is found by bisection on the clamped sum.

#include <algorithm>
#include <cmath>
#include <limits>

#include "rto/density_simp.hpp"
#include "rto/error.hpp"

namespace rto::prox {

inline constexpr double kExponentClip = 700.0;
inline constexpr double kSumTolerance = 1e-10;
inline constexpr double kZeroFloor = 1e-12;  // relative to vtilde
inline constexpr int kMaxBracketDoublings = 200;

struct ProxInput {
  Vector x_tilde;  // current scaled design, sum = 1
  Vector G_tilde;  // scaled stochastic gradient
  double eta = 0.0;
  double move = 1.0;
  Vector v_tilde;  // scaled upper bounds
};

struct ProxOutput {
  Vector x_tilde;
  Vector x;  // back-scaled design (filled by mdsa_step)
  double lambda = 0.0;
  int iterations = 0;
  int clamped_upper = 0;
  int clamped_lower = 0;
  int clipped = 0;  // exponent arguments clipped at +-700
  bool volume_inactive = false;  // the unconstrained candidate already fits (lambda* < 0)
};

struct Box {
  Vector lower;
  Vector upper;
};

/// z_i(lambda) = x_i exp(-eta (G_i + lambda)), exponent clipped at +-700.
inline Vector candidate(const Vector& x_tilde, const Vector& G_tilde, double eta, double lambda,
                        int* clipped = nullptr) {
  Vector z(x_tilde.size());
  int count = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    double a = -eta * (G_tilde[i] + lambda);
    if (a > kExponentClip) {
      a = kExponentClip;
      ++count;
    } else if (a < -kExponentClip) {
      a = -kExponentClip;
      ++count;
    }
    z[i] = x_tilde[i] * std::exp(a);
  }
  if (clipped) *clipped = count;
  return z;
}

/// Move-limit box: upper = min(x + v move, v), lower = max(x - v move, 0).
inline Box box_bounds(const Vector& x_tilde, const Vector& v_tilde, double move) {
  Box b;
  b.upper = (x_tilde + move * v_tilde).cwiseMin(v_tilde);
  b.lower = (x_tilde - move * v_tilde).cwiseMax(0.0);
  return b;
}

inline Vector clamp(const Vector& z, const Box& box) { return z.cwiseMax(box.lower).cwiseMin(box.upper); }

inline Vector clamp(const Vector& z, const Vector& x_tilde, const Vector& v_tilde, double move) {
  return clamp(z, box_bounds(x_tilde, v_tilde, move));
}

namespace detail {

// Sum of the clamped candidate; `base` is the (floored) multiplicative base point.
inline double clamped_sum(const Vector& base, const Vector& G, double eta, double lambda, const Box& box) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    const double a = std::clamp(-eta * (G[i] + lambda), -kExponentClip, kExponentClip);
    s += std::clamp(base[i] * std::exp(a), box.lower[i], box.upper[i]);
  }
  return s;
}

inline ProxOutput finish(const Vector& base, const Vector& G, double eta, double lambda, const Box& box) {
  ProxOutput out;
  out.lambda = lambda;
  Vector z = candidate(base, G, eta, lambda, &out.clipped);
  out.x_tilde = clamp(z, box);

  // Rescale the free components so the sum hits 1 to rounding. This is the
  // same as a tiny shift of lambda restricted to components off their bounds.
  double fixed = 0.0;
  double free = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const bool at_bound = z[i] <= box.lower[i] || z[i] >= box.upper[i];
    (at_bound ? fixed : free) += out.x_tilde[i];
  }
  if (free > 0.0) {
    const double s = (1.0 - fixed) / free;
    if (s > 0.0 && std::isfinite(s)) {
      bool ok = true;
      Vector trial = out.x_tilde;
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        if (z[i] <= box.lower[i] || z[i] >= box.upper[i]) continue;
        trial[i] *= s;
        if (trial[i] < box.lower[i] || trial[i] > box.upper[i]) {
          ok = false;
          break;
        }
      }
      if (ok) out.x_tilde = std::move(trial);
    }
  }
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (out.x_tilde[i] >= box.upper[i] && z[i] >= box.upper[i]) ++out.clamped_upper;
    if (out.x_tilde[i] <= box.lower[i] && z[i] <= box.lower[i]) ++out.clamped_lower;
  }
  return out;
}

}  // namespace detail

/// Finds lambda* with sum(clamp(z(lambda*))) = 1 by bisection and returns the
/// clamped candidate. Components that reached zero are floored at
/// 1e-12 * vtilde for the multiplicative base only.
inline ProxOutput solve_multiplier(const Vector& x_tilde, const Vector& G_tilde, double eta, const Vector& v_tilde,
                                   double move) {
  const Eigen::Index n = x_tilde.size();
  if (G_tilde.size() != n || v_tilde.size() != n) throw PreconditionError("prox input sizes differ");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw PreconditionError("step size must be finite and >= 0");
  if (!(move > 0.0 && move <= 1.0)) throw PreconditionError("move limit must lie in (0, 1]");
  if (!G_tilde.allFinite()) throw NumericalError("gradient contains non-finite entries");

  const Box box = box_bounds(x_tilde, v_tilde, move);
  const double up = box.upper.sum();
  const double lo = box.lower.sum();
  if (up < 1.0 - kSumTolerance || lo > 1.0 + kSumTolerance) {
    throw ConstraintError("volume constraint is not representable within the move-limit box");
  }
  const Vector base = x_tilde.cwiseMax(kZeroFloor * v_tilde);

  if (eta == 0.0) {
    ProxOutput out = detail::finish(base, G_tilde, 0.0, 0.0, box);
    return out;
  }

  auto sum_at = [&](double lambda) { return detail::clamped_sum(base, G_tilde, eta, lambda, box); };

  const double gmax = G_tilde.cwiseAbs().maxCoeff();
  double width = gmax + (std::abs(std::log(base.sum())) + 50.0) / eta;
  double a = -width;
  double b = width;
  double sa = sum_at(a);
  double sb = sum_at(b);
  int doublings = 0;
  while (sa < 1.0 || sb > 1.0) {
    if (++doublings > kMaxBracketDoublings) {
      throw NumericalError("bisection bracket expansion failed");
    }
    if (sa < 1.0) {
      a *= 2.0;
      sa = sum_at(a);
    }
    if (sb > 1.0) {
      b *= 2.0;
      sb = sum_at(b);
    }
  }

  int iterations = 0;
  double mid = 0.5 * (a + b);
  for (; iterations < 400; ++iterations) {
    mid = 0.5 * (a + b);
    if (mid <= a || mid >= b) break;
    const double sm = sum_at(mid);
    if (std::abs(sm - 1.0) <= 1e-14) break;
    if (sm > 1.0) {
      a = mid;
    } else {
      b = mid;
    }
  }

  ProxOutput out = detail::finish(base, G_tilde, eta, mid, box);
  out.iterations = iterations;
  out.volume_inactive = sum_at(0.0) < 1.0;
  if (std::abs(out.x_tilde.sum() - 1.0) > kSumTolerance) {
    throw NumericalError("bisection did not restore the volume constraint");
  }
  return out;
}

/// One entropic MDSA update followed by back-scaling to the original design space.
inline ProxOutput mdsa_step(const ProxInput& in) {
  ProxOutput out = solve_multiplier(in.x_tilde, in.G_tilde, in.eta, in.v_tilde, in.move);
  out.x = back_scale(out.x_tilde, in.v_tilde);
  return out;
}

}  // namespace rto::prox
