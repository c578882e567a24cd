#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <random>
#include <set>

#include "oracles.hpp"
#include "rto/mesh_fem.hpp"
#include "rto/problems.hpp"

using namespace rto;
using namespace rto::fem;

TEST(ElementStiffness, MatchesQuadratureOracle) {
  for (double nu : {0.0, 0.3, 0.45}) {
    for (double h : {1.0, 0.25}) {
      const Matrix8 k = element_stiffness(1.0, nu, h).k;
      const Eigen::MatrixXd ref = oracle::quad_stiffness(nu, h);
      EXPECT_LT((k - ref).cwiseAbs().maxCoeff(), 1e-12) << "nu=" << nu << " h=" << h;
    }
  }
}

TEST(ElementStiffness, KnownEntriesOfUnitSquare) {
  const double nu = 0.3;
  const Matrix8 k = element_stiffness(1.0, nu, 1.0).k;
  const double s = 1.0 / (1.0 - nu * nu);
  EXPECT_NEAR(k(0, 0), s * (0.5 - nu / 6.0), 1e-14);
  EXPECT_NEAR(k(0, 1), s * (0.125 + nu / 8.0), 1e-14);
  EXPECT_NEAR(k(0, 2), s * (-0.25 - nu / 12.0), 1e-14);
}

TEST(ElementStiffness, SymmetricWithThreeRigidModes) {
  const Matrix8 k = element_stiffness(1.0, 0.3, 1.0).k;
  EXPECT_EQ((k - k.transpose()).cwiseAbs().maxCoeff(), 0.0);
  Eigen::SelfAdjointEigenSolver<Matrix8> es(k);
  const auto ev = es.eigenvalues();
  int zeros = 0;
  for (int i = 0; i < 8; ++i) {
    EXPECT_GT(ev[i], -1e-12);
    if (std::abs(ev[i]) < 1e-12 * ev.maxCoeff()) ++zeros;
  }
  EXPECT_EQ(zeros, 3);
}

TEST(ElementStiffness, LinearInModulus) {
  const Matrix8 k1 = element_stiffness(1.0, 0.3, 1.0).k;
  const Matrix8 k2 = element_stiffness(2.0, 0.3, 1.0).k;
  EXPECT_LT((k2 - 2.0 * k1).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ElementStiffness, RejectsInvalidPoisson) {
  EXPECT_THROW(element_stiffness(1.0, 0.5, 1.0), ParameterError);
  EXPECT_THROW(element_stiffness(1.0, -0.1, 1.0), ParameterError);
}

TEST(Assemble, SingleElementEqualsReducedK0) {
  const Mesh mesh(1, 1, 1.0);
  const auto k0 = element_stiffness(1.0, 0.3, 1.0);
  BoundaryConditions bc;  // clamp the left edge
  bc.fixed_dofs = {2 * mesh.node_id(0, 0), 2 * mesh.node_id(0, 0) + 1, 2 * mesh.node_id(0, 1),
                   2 * mesh.node_id(0, 1) + 1};
  const std::vector<double> E{1.0};
  const LinearSystem sys = assemble(mesh, E, bc, k0);
  // Free local DOFs: node 1 (x, y) and node 2 (x, y) in element order.
  const std::vector<int> local{2, 3, 4, 5};
  ASSERT_EQ(sys.K.rows(), 4);
  const Eigen::MatrixXd K = sys.K;
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) EXPECT_DOUBLE_EQ(K(a, b), k0.k(local[a], local[b]));
  }
}

TEST(Assemble, SharedNodesAddContributions) {
  const Mesh mesh(2, 1, 1.0);
  const auto k0 = element_stiffness(1.0, 0.3, 1.0);
  const std::vector<int> fixed{2 * mesh.node_id(0, 0), 2 * mesh.node_id(0, 0) + 1, 2 * mesh.node_id(0, 1),
                               2 * mesh.node_id(0, 1) + 1};
  const std::vector<double> E{1.0, 1.0};
  const LinearSystem sys = assemble(mesh, E, {fixed, {}}, k0);
  const Eigen::MatrixXd K = sys.K;
  // Node (1,0) is node 1 of element 0 and node 0 of element 1.
  const int r = sys.dofs->reduced_of_full[2 * mesh.node_id(1, 0)];
  EXPECT_DOUBLE_EQ(K(r, r), k0.k(2, 2) + k0.k(0, 0));
}

TEST(Assemble, MatchesDenseOracleOnRandomModuli) {
  const Mesh mesh(4, 4, 1.0);
  const auto k0 = element_stiffness(1.0, 0.3, 1.0);
  const std::vector<int> fixed = problems::fixed_node_dofs(mesh, 0, 4, 0);
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> U(1e-4, 1.0);
  std::vector<double> E(16);
  for (double& e : E) e = U(gen);
  const LinearSystem sys = assemble(mesh, E, {fixed, {}}, k0);
  const Eigen::MatrixXd ref = oracle::dense_reduced_stiffness(mesh, E, fixed, 0.3);
  ASSERT_EQ(ref.rows(), sys.K.rows());
  EXPECT_LT((Eigen::MatrixXd(sys.K) - ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Assemble, MaskedMeshMatchesDenseOracle) {
  std::vector<char> mask{1, 1, 1, 0, 1, 0, 1, 1, 1};  // I-shape
  const Mesh mesh(3, 3, 0.5, mask);
  const auto k0 = element_stiffness(1.0, 0.3, 0.5);
  const std::vector<int> fixed = problems::fixed_node_dofs(mesh, 0, 3, 0);
  std::vector<double> E(static_cast<std::size_t>(mesh.num_elements()), 0.7);
  const LinearSystem sys = assemble(mesh, E, {fixed, {}}, k0);
  const Eigen::MatrixXd ref = oracle::dense_reduced_stiffness(mesh, E, fixed, 0.3);
  EXPECT_LT((Eigen::MatrixXd(sys.K) - ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Assemble, AdditiveInModuli) {
  const Mesh mesh(5, 3, 1.0);
  const auto k0 = element_stiffness(1.0, 0.3, 1.0);
  const StiffnessAssembler as(mesh, {problems::fixed_node_dofs(mesh, 0, 5, 0), {}}, k0);
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> U(0.01, 1.0);
  std::vector<double> a(15), b(15), ab(15);
  for (int i = 0; i < 15; ++i) {
    a[i] = U(gen);
    b[i] = U(gen);
    ab[i] = a[i] + b[i];
  }
  const SparseMatrix d = as.assemble(ab).K - as.assemble(a).K - as.assemble(b).K;
  EXPECT_LT(Eigen::MatrixXd(d).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Assemble, InsufficientSupportsRejected) {
  const Mesh mesh(2, 2, 1.0);
  const auto k0 = element_stiffness(1.0, 0.3, 1.0);
  std::vector<double> E(4, 1.0);
  EXPECT_THROW(assemble(mesh, E, {{}, {}}, k0), AssemblyError);
  // One pinned node leaves the rotation free.
  EXPECT_THROW(assemble(mesh, E, {{0, 1}, {}}, k0), AssemblyError);
}

TEST(Solve, ZeroLoadGivesZeroDisplacement) {
  const Mesh mesh(3, 3, 1.0);
  const auto k0 = element_stiffness(1.0, 0.3, 1.0);
  std::vector<double> E(9, 1.0);
  const LinearSystem sys = assemble(mesh, E, {problems::fixed_node_dofs(mesh, 0, 3, 0), {}}, k0);
  const Vector u = solve(sys, Vector::Zero(mesh.num_dofs()));
  EXPECT_EQ(u.norm(), 0.0);
}

TEST(Solve, CantileverMatchesDenseSolve) {
  const Mesh mesh(1, 1, 1.0);
  const auto k0 = element_stiffness(1.0, 0.3, 1.0);
  const std::vector<int> fixed = problems::fixed_node_dofs(mesh, 0, 0, 0);
  std::vector<int> all = fixed;
  for (int d : problems::fixed_node_dofs(mesh, 0, 0, 1)) all.push_back(d);
  const std::vector<double> E{1.0};
  const LinearSystem sys = assemble(mesh, E, {all, {}}, k0);
  Vector f = Vector::Zero(mesh.num_dofs());
  f[2 * mesh.node_id(1, 1) + 1] = -1.0;
  const Vector u = solve(sys, f, 1e-12, SolverKind::direct);
  const Vector ref = oracle::dense_solve(mesh, E, all, 0.3, f);
  EXPECT_LT((u - ref).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Solve, PatchTestReproducesConstantStrain) {
  const int N = 4;
  const double h = 0.5;
  const double nu = 0.3;
  const Mesh mesh(N, N, h);
  const auto k0 = element_stiffness(1.0, nu, h);
  std::vector<int> fixed;
  for (int iy = 0; iy <= N; ++iy) fixed.push_back(2 * mesh.node_id(0, iy));      // u_x = 0 on x = 0
  for (int ix = 0; ix <= N; ++ix) fixed.push_back(2 * mesh.node_id(ix, 0) + 1);  // u_y = 0 on y = 0
  const double sxx = 1.0;
  const double syy = 0.5;
  Vector f = Vector::Zero(mesh.num_dofs());
  for (int i = 0; i <= N; ++i) {
    const double w = (i == 0 || i == N) ? 0.5 * h : h;
    f[2 * mesh.node_id(N, i)] += sxx * w;      // right edge traction
    f[2 * mesh.node_id(i, N) + 1] += syy * w;  // top edge traction
  }
  std::vector<double> E(static_cast<std::size_t>(N * N), 1.0);
  const LinearSystem sys = assemble(mesh, E, {fixed, {}}, k0);
  const Vector u = solve(sys, f, 1e-13, SolverKind::direct);
  const double exx = sxx - nu * syy;
  const double eyy = syy - nu * sxx;
  for (int node = 0; node < mesh.num_nodes(); ++node) {
    const auto [x, y] = mesh.node_position(node);
    EXPECT_NEAR(u[2 * node], exx * x, 1e-10);
    EXPECT_NEAR(u[2 * node + 1], eyy * y, 1e-10);
  }
}

TEST(Solve, ConjugateGradientAgreesWithDirect) {
  for (int N : {4, 9, 16}) {
    const Mesh mesh(N, N, 1.0);
    const auto k0 = element_stiffness(1.0, 0.3, 1.0);
    std::mt19937_64 gen(N);
    std::uniform_real_distribution<double> U(0.01, 1.0);
    std::vector<double> E(static_cast<std::size_t>(N * N));
    for (double& e : E) e = U(gen);
    const LinearSystem sys = assemble(mesh, E, {problems::fixed_node_dofs(mesh, 0, N, 0), {}}, k0);
    Vector f = Vector::Zero(mesh.num_dofs());
    f[2 * mesh.node_id(N / 2, N) + 1] = -1.0;
    f[2 * mesh.node_id(N, N)] = 0.3;
    const Vector ud = solve(sys, f, 1e-12, SolverKind::direct);
    const Vector uc = solve(sys, f, 1e-12, SolverKind::cg);
    EXPECT_LT((ud - uc).norm() / ud.norm(), 1e-8) << "N=" << N;
  }
}

TEST(Solve, CgIterationCapReportsResidual) {
  const Mesh mesh(8, 8, 1.0);
  const auto k0 = element_stiffness(1.0, 0.3, 1.0);
  std::vector<double> E(64, 1.0);
  const LinearSystem sys = assemble(mesh, E, {problems::fixed_node_dofs(mesh, 0, 8, 0), {}}, k0);
  SolverOptions opts;
  opts.kind = SolverKind::cg;
  opts.max_iterations = 2;
  LinearSolver solver(opts);
  solver.factorize(sys, 64);
  Vector f = Vector::Zero(mesh.num_dofs());
  f[2 * mesh.node_id(4, 8) + 1] = -1.0;
  try {
    solver.solve(f);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_GT(e.residual(), opts.tol);
  }
}

TEST(Compliance, ZeroLoadAndQuadraticScaling) {
  const Mesh mesh(6, 6, 1.0);
  const auto k0 = element_stiffness(1.0, 0.3, 1.0);
  std::vector<double> E(36, 0.5);
  const LinearSystem sys = assemble(mesh, E, {problems::fixed_node_dofs(mesh, 0, 6, 0), {}}, k0);
  Vector f = Vector::Zero(mesh.num_dofs());
  EXPECT_EQ(compliance(f, solve(sys, f)), 0.0);
  f[2 * mesh.node_id(3, 6) + 1] = -1.0;
  f[2 * mesh.node_id(3, 6)] = 0.2;
  const double c1 = compliance(f, solve(sys, f));
  const double c2 = compliance(2.0 * f, solve(sys, Vector(2.0 * f)));
  EXPECT_GT(c1, 0.0);
  EXPECT_NEAR(c2, 4.0 * c1, 1e-10 * c2);
}

TEST(Compliance, UniformColumnMatchesDenseOracle) {
  const ProblemDef def = problems::simple_column({0.3, 20});
  const Mesh& mesh = *def.spec.mesh;
  const double E = def.spec.material.modulus(0.3);
  std::vector<double> Ev(static_cast<std::size_t>(mesh.num_elements()), E);
  const auto k0 = element_stiffness(1.0, 0.3, mesh.element_size());
  const LinearSystem sys = assemble(mesh, Ev, {def.spec.fixed_dofs, {}}, k0);
  Vector f = Vector::Zero(mesh.num_dofs());
  f[2 * mesh.node_id(10, 20) + 1] = 1.0;
  const double C = compliance(f, solve(sys, f));
  const double ref = f.dot(oracle::dense_solve(mesh, Ev, def.spec.fixed_dofs, 0.3, f));
  EXPECT_NEAR(C, ref, 1e-8 * ref);
}

TEST(Sensitivity, ZeroDisplacementGivesZero) {
  const Mesh mesh(3, 3, 1.0);
  const auto k0 = element_stiffness(1.0, 0.3, 1.0);
  std::vector<double> x(9, 0.5);
  const Vector g = compliance_sensitivity(mesh, Vector::Zero(mesh.num_dofs()), x, MaterialModel{}, k0);
  EXPECT_EQ(g.norm(), 0.0);
}

TEST(Sensitivity, NonPositiveForRandomDisplacements) {
  const Mesh mesh(5, 5, 1.0);
  const auto k0 = element_stiffness(1.0, 0.3, 1.0);
  std::mt19937_64 gen(9);
  std::normal_distribution<double> N01;
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vector u(mesh.num_dofs());
    for (int i = 0; i < u.size(); ++i) u[i] = N01(gen);
    std::vector<double> x(25);
    for (double& v : x) v = U(gen);
    const Vector g = compliance_sensitivity(mesh, u, x, MaterialModel{}, k0);
    EXPECT_LE(g.maxCoeff(), 0.0);
  }
}

TEST(Sensitivity, MatchesCentralFiniteDifferences) {
  const Mesh mesh(4, 4, 1.0);
  const auto k0 = element_stiffness(1.0, 0.3, 1.0);
  const MaterialModel mat;
  const std::vector<int> fixed = problems::fixed_node_dofs(mesh, 0, 4, 0);
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> U(0.2, 0.9);
  std::vector<double> x(16);
  for (double& v : x) v = U(gen);
  Vector f = Vector::Zero(mesh.num_dofs());
  f[2 * mesh.node_id(2, 4) + 1] = -1.0;
  f[2 * mesh.node_id(4, 4)] = 0.4;

  auto C = [&](const std::vector<double>& xx) {
    std::vector<double> E(xx.size());
    for (std::size_t i = 0; i < xx.size(); ++i) E[i] = mat.modulus(xx[i]);
    const LinearSystem sys = assemble(mesh, E, {fixed, {}}, k0);
    return compliance(f, solve(sys, f, 1e-14, SolverKind::direct));
  };
  std::vector<double> E(16);
  for (int i = 0; i < 16; ++i) E[i] = mat.modulus(x[i]);
  const LinearSystem sys = assemble(mesh, E, {fixed, {}}, k0);
  const Vector u = solve(sys, f, 1e-14, SolverKind::direct);
  const Vector g = compliance_sensitivity(mesh, u, x, mat, k0);
  const double step = 1e-6;
  for (int i = 0; i < 16; ++i) {
    auto xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    const double fd = (C(xp) - C(xm)) / (2.0 * step);
    EXPECT_NEAR(g[i], fd, 1e-5 * std::abs(fd)) << "element " << i;
  }
}
