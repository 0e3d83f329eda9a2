#include <cmath>

#include <gtest/gtest.h>

#include "safe_fbsde/qp.hpp"
#include "safe_fbsde/qp_check.hpp"

using namespace safe_fbsde;

namespace {

QpProblem scalar_qp(double Q, double q, double c, double d) {
  QpProblem p;
  p.Q = Matrix::Constant(1, 1, Q);
  p.q = Vector::Constant(1, q);
  p.C = Matrix::Constant(1, 1, c);
  p.d = Vector::Constant(1, d);
  return p;
}

void expect_kkt(const QpProblem& p, const QpSolution& s, double tol) {
  if (p.num_constraints() == 0) {
    EXPECT_LE((p.Q * s.u + p.q).lpNorm<Eigen::Infinity>(), tol);
    return;
  }
  EXPECT_LE((p.C * s.u - p.d).maxCoeff(), 1e-7);
  EXPECT_GE(s.lambda.minCoeff(), -tol);
  EXPECT_LE((p.Q * s.u + p.q + p.C.transpose() * s.lambda).lpNorm<Eigen::Infinity>(),
            tol * (1 + p.q.lpNorm<Eigen::Infinity>()));
  EXPECT_LE(s.lambda.cwiseProduct(s.s).cwiseAbs().maxCoeff(), tol);
}

}  // namespace

TEST(Pdipm, UnconstrainedClosedForm) {
  QpProblem p;
  p.Q = Matrix::Identity(3, 3);
  p.q = Vector::LinSpaced(3, -1.0, 2.0);
  p.C = Matrix(0, 3);
  p.d = Vector(0);
  const QpSolution s = solve_qp_pdipm(p);
  EXPECT_TRUE(s.u.isApprox(-p.q));
  EXPECT_TRUE(s.converged);
}

TEST(Pdipm, ActiveScalar) {
  const QpProblem p = scalar_qp(1.0, 0.0, -1.0, -1.0);
  const QpSolution s = solve_qp_pdipm(p);
  EXPECT_NEAR(s.u[0], 1.0, 1e-9);
  EXPECT_NEAR(s.lambda[0], 1.0, 1e-9);
  const QpSolution o = brute_force_qp_oracle(p);
  EXPECT_NEAR(o.u[0], 1.0, 1e-12);
  EXPECT_NEAR(o.lambda[0], 1.0, 1e-12);
}

TEST(Pdipm, InactiveScalar) {
  const QpSolution s = solve_qp_pdipm(scalar_qp(1.0, 1.0, 1.0, 10.0));
  EXPECT_NEAR(s.u[0], -1.0, 1e-9);
  EXPECT_NEAR(s.lambda[0], 0.0, 1e-9);
}

TEST(Pdipm, ZeroRows) {
  QpProblem p = scalar_qp(2.0, 1.0, 0.0, 0.3);
  const QpSolution s = solve_qp_pdipm(p);
  EXPECT_NEAR(s.u[0], -0.5, 1e-12);
  EXPECT_EQ(s.lambda[0], 0.0);
  EXPECT_DOUBLE_EQ(s.s[0], 0.3);
  p.d[0] = -0.1;
  EXPECT_THROW(solve_qp_pdipm(p), InfeasibleProblem);
}

TEST(Pdipm, ContradictoryRowsAreInfeasible) {
  QpProblem p;
  p.Q = Matrix::Identity(1, 1);
  p.q = Vector::Zero(1);
  p.C = Matrix(2, 1);
  p.C << 1.0, -1.0;
  p.d = Eigen::Vector2d(-1.0, -1.0);  // u <= -1 and u >= 1
  EXPECT_THROW(solve_qp_pdipm(p), InfeasibleProblem);
  EXPECT_THROW(brute_force_qp_oracle(p), InfeasibleProblem);
}

TEST(Pdipm, KktAtRandomInstances) {
  NoiseStream rng(99);
  for (int k = 0; k < 200; ++k) {
    const int n_u = 1 + k % 8;
    const int n_q = k % 7;
    const QpProblem p = random_feasible_qp(rng, n_u, n_q);
    const QpSolution s = solve_qp_pdipm(p);
    expect_kkt(p, s, 1e-7);
  }
}

TEST(Pdipm, RejectsNonSpd) {
  QpProblem p = scalar_qp(-1.0, 0.0, 1.0, 1.0);
  EXPECT_THROW(solve_qp_pdipm(p), std::invalid_argument);
  p = scalar_qp(1.0, 0.0, 1.0, 1.0);
  p.q = Vector::Zero(2);
  EXPECT_THROW(solve_qp_pdipm(p), std::invalid_argument);
}

TEST(Oracle, UnconstrainedAndFuzz) {
  QpProblem p;
  p.Q = Matrix::Identity(2, 2) * 2.0;
  p.q = Eigen::Vector2d(2.0, -4.0);
  p.C = Matrix(0, 2);
  p.d = Vector(0);
  EXPECT_TRUE(brute_force_qp_oracle(p).u.isApprox(Eigen::Vector2d(-1.0, 2.0)));

  const QpFuzzReport rep = qp_fuzz(300, 7);
  EXPECT_EQ(rep.instances, 300);
  EXPECT_EQ(rep.mismatches, 0) << "max error " << rep.max_error;
}

TEST(Assemble, PendulumShape) {
  const Matrix R = Matrix::Constant(1, 1, 0.2);
  Matrix G(2, 1);
  G << 0.0, 2.0;
  const Eigen::Vector2d vx(0.3, -0.7);
  const QpProblem p = assemble_hamiltonian_qp(R, G, vx, {});
  EXPECT_EQ(p.num_constraints(), 0);
  EXPECT_DOUBLE_EQ(p.q[0], 2.0 * -0.7);
  EXPECT_THROW(assemble_hamiltonian_qp(-R, G, vx, {}), std::invalid_argument);
}

TEST(Assemble, MultiCarShape) {
  const auto sys = make_car2d(4, {});
  const auto barriers = all_car_pair_barriers(4, 0.05, 0.1, 1.0);
  Vector x = Vector::Zero(16);
  for (int k = 0; k < 4; ++k) {
    x[4 * k] = k;
    x[4 * k + 3] = 0.1;
  }
  std::vector<ConstraintRow> rows;
  for (const auto& b : barriers) rows.push_back(constraint_row(*b, *sys, x));
  const QpProblem p = assemble_hamiltonian_qp(Matrix::Identity(8, 8), sys->actuation(x),
                                              Vector::Ones(16), rows);
  EXPECT_EQ(p.num_vars(), 8);
  EXPECT_EQ(p.num_constraints(), 6);
}

TEST(Backward, ActiveScalar) {
  const QpProblem p = scalar_qp(1.0, 0.0, -1.0, -1.0);
  const QpSolution s = solve_qp_pdipm(p);
  const QpBackward b = qp_backward(p, s, Vector::Constant(1, 0.7));
  EXPECT_NEAR(b.grad_d[0], -0.7, 1e-9);
  EXPECT_NEAR(b.grad_q[0], 0.0, 1e-9);
}

TEST(Backward, InactiveScalar) {
  const QpProblem p = scalar_qp(2.0, 1.0, 1.0, 10.0);
  const QpSolution s = solve_qp_pdipm(p);
  const QpBackward b = qp_backward(p, s, Vector::Constant(1, 0.7));
  EXPECT_NEAR(b.grad_d[0], 0.0, 1e-12);
  EXPECT_NEAR(b.grad_q[0], -0.35, 1e-12);
}

TEST(Backward, MatchesFiniteDifferences) {
  NoiseStream rng(17);
  for (int k = 0; k < 50; ++k) {
    const int n_u = 1 + k % 4;
    const int n_q = k % 4;
    const QpProblem p = random_strict_qp(rng, n_u, n_q);
    Vector w(n_u);
    for (auto& v : w) v = rng.normal();
    const QpGradientCheck c = qp_backward_fd_check(p, w);
    EXPECT_LE(c.max_rel(), 1e-5) << "instance " << k;
  }
}

TEST(Backward, DegenerateIsRegularized) {
  // Constraint active with a zero multiplier: u* = 0 sits exactly on u <= 0.
  QpProblem p = scalar_qp(1.0, 0.0, 1.0, 0.0);
  QpSolution s;
  s.u = Vector::Zero(1);
  s.s = Vector::Zero(1);
  s.lambda = Vector::Constant(1, 1e-300);
  EXPECT_TRUE(is_degenerate(s));
  const QpBackward b = qp_backward(p, s, Vector::Ones(1));
  EXPECT_TRUE(b.grad_q.allFinite());
}

TEST(ActiveSet, Mask) {
  QpSolution s;
  s.lambda = Eigen::Vector3d(1.0, 0.0, 0.5);
  s.s = Eigen::Vector3d(0.0, 2.0, 0.0);
  EXPECT_EQ(active_set_mask(s), 0b101u);
  EXPECT_FALSE(is_degenerate(s));
}
