#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "rto/acmdsa.hpp"
#include "rto/problems.hpp"

using namespace rto;
using namespace rto::acmdsa;

namespace {

// 20 x 20 column with every schedule compressed into a 60-step run.
struct SmallRun {
  ProblemDef def = problems::simple_column({0.18, 20});
  Hyperparams hp;
  RtoWeights weights;

  explicit SmallRun(double kappa = 0.618) {
    const double h = def.spec.mesh->element_size();
    def.spec.filter = RadiusSchedule{3.0 * h, 1.2 * h, 30, 5, 6};
    hp = def.defaults;
    hp.theta = def.default_theta(kappa);
    hp.stop = {60, 40, 0.01};
    hp.recal = {20, 20, 0.025};
    hp.damping.N_damp = 40;
    hp.damping.N_D = 10;
    hp.m_eval = 500;
    weights = RtoWeights::from_model(kappa, def.spec.loads, def.spec.material.E0);
  }

  RunRecord go(int workers = 1, std::uint64_t seed = 3) const {
    RunOptions o;
    o.seed = seed;
    o.workers = workers;
    return run(def.spec, weights, hp, o);
  }
};

Vector unit(int n, int i) {
  Vector e = Vector::Zero(n);
  e[i] = 1.0;
  return e;
}

}  // namespace

TEST(StepPolicy, EtaAndBetaSequences) {
  StepPolicy p;
  p.theta = 2.0;
  p.eta_bar = 0.5;
  EXPECT_THROW(eta_k(p, 1), StateError);
  p.calibrated = true;
  EXPECT_DOUBLE_EQ(eta_k(p, 1), 1.0);
  EXPECT_DOUBLE_EQ(eta_k(p, 3), 2.0);
  EXPECT_DOUBLE_EQ(eta_k(p, 100), 50.5);
  p.constant_step = true;
  EXPECT_DOUBLE_EQ(eta_k(p, 100), 1.0);
  EXPECT_DOUBLE_EQ(beta_k(1), 1.0);
  EXPECT_DOUBLE_EQ(beta_k(4), 2.5);
  EXPECT_THROW(beta_k(0), PreconditionError);
}

TEST(StepPolicy, BaseStepHandValues) {
  const double D = std::sqrt(std::log(100.0));
  EXPECT_NEAR(accelerated_step_base(1.0, D, 500, 2.0, 1.0), 0.00011334919260663297, 1e-17);
  EXPECT_NEAR(constant_step_base(1.0, D, 500, 2.0), 0.06786140424415112, 1e-15);
  EXPECT_THROW(accelerated_step_base(1.0, D, 500, 0.0, 0.0), NumericalError);
  EXPECT_THROW(constant_step_base(1.0, D, 500, 0.0), NumericalError);
}

TEST(Calibration, TwoSampleBounds) {
  std::vector<Vector> g{unit(2, 0), 2.0 * unit(2, 1)};
  const GradientBounds b = gradient_bounds(g);
  EXPECT_NEAR(b.M, std::sqrt(2.5), 1e-15);
  EXPECT_NEAR(b.Sigma, 1.0, 1e-15);
  StepPolicy p;
  p.N = 500;
  p.D = 1.0;
  apply_bounds(p, b);
  EXPECT_TRUE(p.calibrated);
  EXPECT_NEAR(p.eta_bar, std::sqrt(6.0) / (std::pow(502.0, 1.5) * std::sqrt(11.0)), 1e-18);
  EXPECT_THROW(gradient_bounds(std::vector<Vector>{}), PreconditionError);
}

TEST(Calibration, IdenticalSamplesHaveZeroSpread) {
  std::vector<Vector> g(4, Vector::Constant(3, -0.7));
  const GradientBounds b = gradient_bounds(g);
  EXPECT_NEAR(b.M, 0.7, 1e-15);
  EXPECT_EQ(b.Sigma, 0.0);
}

TEST(Recalibration, TriggerConditions) {
  const RecalConfig cfg{100, 100, 0.025};
  EXPECT_TRUE(maybe_recalibrate(150, 120, 0.02, cfg));
  EXPECT_FALSE(maybe_recalibrate(99, 120, 0.02, cfg));
  EXPECT_FALSE(maybe_recalibrate(150, 99, 0.02, cfg));
  EXPECT_FALSE(maybe_recalibrate(150, 120, 0.025, cfg));
  EXPECT_TRUE(maybe_recalibrate(100, 100, 0.0, cfg));
}

TEST(Momentum, AggregateIsIndexWeightedAverage) {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const int n = 12;
  Vector x(n), ag(n), weighted = Vector::Zero(n);
  double wsum = 0.0;
  for (int i = 0; i < n; ++i) x[i] = U(gen);
  ag = x;  // value is irrelevant: the first aggregate weight on it is zero
  for (int k = 1; k <= 50; ++k) {
    const double beta = beta_k(k);
    const Vector md = middle_point(x, ag, beta);
    for (int i = 0; i < n; ++i) x[i] = U(gen) + 0.01 * md[i];
    ag = aggregate(x, ag, beta);
    weighted += k * x;
    wsum += k;
    ASSERT_LT((ag - weighted / wsum).cwiseAbs().maxCoeff(), 1e-12) << "k=" << k;
  }
}

TEST(Momentum, FirstStepHasNoMomentum) {
  const Vector x = Vector::LinSpaced(5, 0.0, 1.0);
  const Vector ag = Vector::Constant(5, 42.0);
  EXPECT_EQ(middle_point(x, ag, beta_k(1)), x);
  EXPECT_EQ(aggregate(x, ag, beta_k(1)), x);
}

TEST(Damping, RatioOnLinearAndOscillatingTraces) {
  const int N_D = 10;
  std::vector<Vector> linear, osc;
  for (int k = 1; k <= N_D; ++k) {
    linear.push_back(Vector::Constant(3, 0.1 * k));
    osc.push_back(Vector::Constant(3, k % 2 ? 1.0 : -1.0));
  }
  EXPECT_NEAR(effective_step_ratio(linear, N_D), 0.9, 1e-12);
  EXPECT_NEAR(effective_step_ratio(osc, N_D), 0.1, 1e-12);
  bool zero = false;
  std::vector<Vector> flat(N_D, Vector::Ones(3));
  EXPECT_EQ(effective_step_ratio(flat, N_D, &zero), 0.0);
  EXPECT_TRUE(zero);
  EXPECT_THROW(effective_step_ratio(std::span<const Vector>(flat).first(N_D - 1), N_D), PreconditionError);
}

TEST(Damping, ConstantTraceDampsOncePerWindow) {
  DampingState d(0.2, DampingConfig{});
  std::vector<int> fired;
  for (int k = 1; k <= 1000; ++k) {
    d.push(Vector::Constant(4, 0.5));
    if (d.maybe_damp(k)) fired.push_back(k);
  }
  EXPECT_EQ(fired, (std::vector<int>{400, 501, 602, 703, 804, 905}));
  EXPECT_NEAR(d.move(), 0.2 / 64.0, 1e-15);
  EXPECT_GT(d.zero_denominators(), 0);
}

TEST(Damping, OscillatingTraceDampsLinearDoesNot) {
  DampingState osc(0.2, DampingConfig{});
  DampingState lin(0.2, DampingConfig{});
  int osc_count = 0, lin_count = 0;
  for (int k = 1; k <= 1000; ++k) {
    osc.push(Vector::Constant(4, k % 2 ? 0.9 : 0.1));
    lin.push(Vector::Constant(4, 1e-3 * k));
    osc_count += osc.maybe_damp(k);
    lin_count += lin.maybe_damp(k);
  }
  EXPECT_EQ(osc_count, 6);
  EXPECT_EQ(lin_count, 0);
  EXPECT_DOUBLE_EQ(lin.move(), 0.2);
  ASSERT_TRUE(lin.last_ratio().has_value());
  EXPECT_NEAR(*lin.last_ratio(), 0.99, 1e-9);
}

TEST(Hyperparams, ValidationRejectsBadValues) {
  Hyperparams hp;
  EXPECT_NO_THROW(hp.validate());
  auto bad = [](auto mutate) {
    Hyperparams h;
    mutate(h);
    EXPECT_THROW(h.validate(), ParameterError);
  };
  bad([](Hyperparams& h) { h.m = 1; });
  bad([](Hyperparams& h) { h.theta = 0.0; });
  bad([](Hyperparams& h) { h.move = 1.5; });
  bad([](Hyperparams& h) { h.stop.N_min = 600; });
  bad([](Hyperparams& h) { h.damping.tau = 1.0; });
}

TEST(McReference, ScalesSchedules) {
  Hyperparams hp;
  RadiusSchedule s{3.0, 1.2, 300, 30, 6};
  apply_mc_reference(hp, s);
  EXPECT_EQ(hp.m, 1000);
  EXPECT_EQ(hp.stop.N_max, 100);
  EXPECT_EQ(hp.stop.N_min, 100);
  EXPECT_EQ(s.start_step, 60);
  EXPECT_EQ(s.interval, 6);
  EXPECT_EQ(hp.recal.N_rst, 20);
  EXPECT_EQ(hp.damping.N_damp, 80);
  EXPECT_EQ(hp.damping.N_D, 20);
}

TEST(Run, SmallColumnIsDeterministicAndAccountsSolves) {
  const SmallRun sr;
  const RunRecord a = sr.go();
  const RunRecord b = sr.go();
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].J_m, b.history[i].J_m);
    EXPECT_EQ(a.history[i].dx_ag_l2, b.history[i].dx_ag_l2);
  }
  EXPECT_EQ(a.x_star, b.x_star);
  EXPECT_EQ(a.J_hat, b.J_hat);
  EXPECT_EQ(a.N_solve, a.expected_solves(sr.hp.m, sr.hp.N_M));
  EXPECT_GE(a.N_step, sr.hp.stop.N_min);
  EXPECT_LE(a.N_step, sr.hp.stop.N_max);
  EXPECT_LT(a.final_volume_error, 1e-6);
  EXPECT_EQ(static_cast<int>(a.eta_bar_history.size()), 1 + a.recalibrations);
  EXPECT_TRUE((a.xbar_star.array() >= -1e-15).all() && (a.xbar_star.array() <= 1.0 + 1e-12).all());
}

TEST(Run, SmallColumnImprovesObjective) {
  const RunRecord r = SmallRun(1.0).go();
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 10; ++i) {
    early += r.history[i].mu_m;
    late += r.history[r.history.size() - 1 - i].mu_m;
  }
  EXPECT_LT(late, 0.8 * early);
  EXPECT_GT(r.J_hat, 0.0);
  EXPECT_GE(r.J_std_error, 0.0);
}

TEST(Run, WorkerCountDoesNotChangeTrajectory) {
  const SmallRun sr;
  const RunRecord a = sr.go(1);
  const RunRecord b = sr.go(2);
  ASSERT_EQ(a.history.size(), b.history.size());
  EXPECT_EQ(a.x_star, b.x_star);
  EXPECT_EQ(a.J_hat, b.J_hat);
}

TEST(Run, ForcedRecalibrationIsCountedAndResetsInnerIndex) {
  SmallRun sr;
  sr.hp.recal = {10, 10, 1e9};
  const RunRecord r = sr.go();
  EXPECT_GT(r.recalibrations, 0);
  EXPECT_EQ(r.N_solve, r.expected_solves(sr.hp.m, sr.hp.N_M));
  // Replays k_in: eta = theta * eta_bar_j * (k_in + 1) / 2, k_in back to 1 after each reset.
  std::size_t j = 0;
  int k_in = 1;
  for (const auto& s : r.history) {
    const double expect = sr.hp.theta * r.eta_bar_history[j] * (k_in + 1) / 2.0;
    EXPECT_NEAR(s.eta, expect, 1e-12 * expect) << "step " << s.step;
    ++k_in;
    if (s.recal) {
      ++j;
      k_in = 1;
    }
  }
  EXPECT_EQ(j, static_cast<std::size_t>(r.recalibrations));
}

TEST(Run, PlainMdsaUsesConstantStep) {
  SmallRun sr;
  sr.hp.mode = Mode::mdsa;
  sr.hp.recal.eps_rst = 0.0;
  const RunRecord r = sr.go();
  for (const auto& s : r.history) EXPECT_DOUBLE_EQ(s.eta, r.history.front().eta);
  EXPECT_EQ(r.recalibrations, 0);
}

TEST(Run, InvalidHyperparametersRejected) {
  SmallRun sr;
  sr.hp.m = 1;
  EXPECT_THROW(sr.go(), ParameterError);
}
