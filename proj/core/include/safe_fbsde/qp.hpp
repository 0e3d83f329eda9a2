#pragma once

#include <span>
#include <vector>

#include "safe_fbsde/barrier.hpp"

namespace safe_fbsde {

/// min_u 1/2 u^T Q u + q^T u   s.t.  C u <= d
struct QpProblem {
  Matrix Q;
  Vector q;
  Matrix C;
  Vector d;

  int num_vars() const { return static_cast<int>(q.size()); }
  int num_constraints() const { return static_cast<int>(d.size()); }
  double objective(const Vector& u) const { return 0.5 * u.dot(Q * u) + q.dot(u); }
};

struct QpSolution {
  Vector u;
  Vector s;       // slacks d - C u, >= 0
  Vector lambda;  // inequality multipliers, >= 0
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  // True when the interior-point iterate was replaced by the exact solution of
  // the KKT system on its identified active set.
  bool polished = false;
};

struct QpBackward {
  Vector grad_q;
  Matrix grad_C;
  Vector grad_d;
  Matrix grad_Q;
  bool regularized = false;
};

struct QpSettings {
  double tol = 1e-8;
  int max_iters = 20;
  double regularization = 1e-9;
  double s_min = 1e-2;
  double step_fraction = 0.995;
  bool polish = true;
};

/// Q = R, q = G^T V_x, rows stacked in order.
QpProblem assemble_hamiltonian_qp(const Matrix& R, const Matrix& G, const Vector& vx,
                                  std::span<const ConstraintRow> rows);

/// Mehrotra predictor-corrector primal-dual interior point method.
///
/// Rows whose c is numerically zero are removed before iterating: with
/// d >= 0 they cannot bind (lambda = 0, s = d), with d < 0 the problem is
/// infeasible. Throws InfeasibleProblem if the primal residual cannot be
/// driven to zero, NumericalFailure if the Newton system breaks down.
QpSolution solve_qp_pdipm(const QpProblem& problem, const QpSettings& settings = {});

/// Reverse-mode sensitivity of u* through the KKT conditions
///   [Q, C^T diag(lambda); C, -diag(s)] [du; dlambda] = [-grad_u; 0]
/// The system is regularized by `regularization` only when it is singular
/// (weakly active constraints), which is reported in the result.
QpBackward qp_backward(const QpProblem& problem, const QpSolution& solution, const Vector& grad_u,
                       double regularization = 1e-9);

/// Exhaustive active-set enumeration; test oracle for small n_q.
QpSolution brute_force_qp_oracle(const QpProblem& problem);

/// Some constraint is weakly active (lambda_i and s_i both below threshold);
/// the solution map is not differentiable there.
bool is_degenerate(const QpSolution& solution, double threshold = 1e-6);

/// Bit mask of rows with lambda_i > s_i (rows beyond 63 are ignored).
std::uint64_t active_set_mask(const QpSolution& solution);

}  // namespace safe_fbsde
