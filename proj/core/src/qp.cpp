#include "safe_fbsde/qp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace safe_fbsde {
namespace {

constexpr double kZeroRowTol = 1e-12;

void check_problem(const QpProblem& p) {
  const auto n = p.q.size();
  const auto m = p.d.size();
  if (p.Q.rows() != n || p.Q.cols() != n || p.C.rows() != m || (m > 0 && p.C.cols() != n)) {
    std::ostringstream os;
    os << "QP shape mismatch: Q " << p.Q.rows() << "x" << p.Q.cols() << ", q " << n << ", C "
       << p.C.rows() << "x" << p.C.cols() << ", d " << m;
    throw std::invalid_argument(os.str());
  }
}

bool is_spd(const Matrix& a) {
  if (a.rows() != a.cols()) return false;
  const double scale = 1.0 + a.cwiseAbs().maxCoeff();
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  Eigen::LLT<Matrix> llt(a);
  return llt.info() == Eigen::Success;
}

double max_step(const Vector& v, const Vector& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
  }
  return alpha;
}

struct Residuals {
  Vector dual;
  Vector primal;
  double mu = 0.0;
  double zeta = 0.0;
};

Residuals residuals(const Matrix& Q, const Vector& q, const Matrix& C, const Vector& d,
                    const Vector& u, const Vector& s, const Vector& lambda) {
  Residuals r;
  r.dual = Q * u + q + C.transpose() * lambda;
  r.primal = C * u + s - d;
  const auto m = static_cast<double>(d.size());
  r.mu = m > 0 ? s.dot(lambda) / m : 0.0;
  const double scale =
      1.0 + std::max(q.lpNorm<Eigen::Infinity>(), d.size() ? d.lpNorm<Eigen::Infinity>() : 0.0);
  const double primal_inf = r.primal.size() ? r.primal.lpNorm<Eigen::Infinity>() : 0.0;
  r.zeta = std::max({r.dual.lpNorm<Eigen::Infinity>(), primal_inf, r.mu}) / scale;
  return r;
}

// Exact KKT solve on a fixed active set. Returns false if the system is
// singular.
bool solve_active_set(const Matrix& Q, const Vector& q, const Matrix& C, const Vector& d,
                      const std::vector<int>& active, Vector& u, Vector& lambda_active) {
  const auto n = q.size();
  const auto k = static_cast<Eigen::Index>(active.size());
  Matrix kkt = Matrix::Zero(n + k, n + k);
  Vector rhs(n + k);
  kkt.topLeftCorner(n, n) = Q;
  rhs.head(n) = -q;
  for (Eigen::Index a = 0; a < k; ++a) {
    kkt.block(n + a, 0, 1, n) = C.row(active[a]);
    kkt.block(0, n + a, n, 1) = C.row(active[a]).transpose();
    rhs[n + a] = d[active[a]];
  }
  Eigen::FullPivLU<Matrix> lu(kkt);
  if (!lu.isInvertible()) return false;
  Vector sol = lu.solve(rhs);
  sol += lu.solve(rhs - kkt * sol);  // one refinement step
  u = sol.head(n);
  lambda_active = sol.tail(k);
  return true;
}

// Try to turn an interior-point iterate into the exact KKT point of its
// identified active set.
bool polish(const Matrix& Q, const Vector& q, const Matrix& C, const Vector& d, Vector& u,
            Vector& s, Vector& lambda) {
  std::vector<int> active;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (lambda[i] > s[i]) active.push_back(static_cast<int>(i));
  }
  Vector u_p;
  Vector lam_a;
  if (!solve_active_set(Q, q, C, d, active, u_p, lam_a)) return false;
  const double lam_scale = 1.0 + (lam_a.size() ? lam_a.cwiseAbs().maxCoeff() : 0.0);
  for (Eigen::Index a = 0; a < lam_a.size(); ++a) {
    if (lam_a[a] < -1e-10 * lam_scale) return false;
  }
  const Vector slack = d - C * u_p;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (slack[i] < -1e-10 * (1.0 + std::abs(d[i]))) return false;
  }
  u = u_p;
  s = slack.cwiseMax(0.0);
  lambda.setZero();
  for (std::size_t a = 0; a < active.size(); ++a) {
    lambda[active[a]] = std::max(lam_a[static_cast<Eigen::Index>(a)], 0.0);
    s[active[a]] = 0.0;
  }
  return true;
}

}  // namespace

QpProblem assemble_hamiltonian_qp(const Matrix& R, const Matrix& G, const Vector& vx,
                                  std::span<const ConstraintRow> rows) {
  if (!is_spd(R)) throw std::invalid_argument("control cost R must be symmetric positive definite");
  if (G.cols() != R.rows() || G.rows() != vx.size()) {
    throw std::invalid_argument("assemble_hamiltonian_qp: G/R/V_x shape mismatch");
  }
  QpProblem p;
  p.Q = R;
  p.q = G.transpose() * vx;
  const auto n_u = R.rows();
  p.C.resize(static_cast<Eigen::Index>(rows.size()), n_u);
  p.d.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].c.size() != n_u) throw std::invalid_argument("constraint row width != n_u");
    p.C.row(static_cast<Eigen::Index>(i)) = rows[i].c.transpose();
    p.d[static_cast<Eigen::Index>(i)] = rows[i].d;
  }
  return p;
}

QpSolution solve_qp_pdipm(const QpProblem& problem, const QpSettings& settings) {
  check_problem(problem);
  const auto n = problem.q.size();
  const auto m_all = problem.d.size();

  Eigen::LLT<Matrix> q_llt(problem.Q);
  if (q_llt.info() != Eigen::Success) throw std::invalid_argument("QP matrix Q is not SPD");

  QpSolution sol;
  sol.s = problem.d;
  sol.lambda = Vector::Zero(m_all);

  std::vector<int> kept;
  std::vector<int> bad_rows;
  for (Eigen::Index i = 0; i < m_all; ++i) {
    if (problem.C.row(i).lpNorm<Eigen::Infinity>() > kZeroRowTol) {
      kept.push_back(static_cast<int>(i));
    } else if (problem.d[i] < 0.0) {
      bad_rows.push_back(static_cast<int>(i));
    }
  }
  if (!bad_rows.empty()) {
    std::ostringstream os;
    os << "QP infeasible: zero constraint row(s)";
    for (int r : bad_rows) os << " #" << r << " (d=" << problem.d[r] << ")";
    throw InfeasibleProblem(os.str());
  }

  const Matrix& Q = problem.Q;
  const Vector& q = problem.q;
  Vector u = -q_llt.solve(q);

  if (kept.empty()) {
    sol.u = u;
    sol.s = problem.d;
    const Residuals r = residuals(Q, q, problem.C, problem.d, u, sol.s, sol.lambda);
    sol.residual = r.dual.lpNorm<Eigen::Infinity>() / (1.0 + q.lpNorm<Eigen::Infinity>());
    sol.converged = true;
    return sol;
  }

  const auto m = static_cast<Eigen::Index>(kept.size());
  Matrix C(m, n);
  Vector d(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    C.row(k) = problem.C.row(kept[k]);
    d[k] = problem.d[kept[k]];
  }

  Vector s = (d - C * u).cwiseMax(settings.s_min);
  Vector lambda = Vector::Ones(m);

  Vector best_u = u, best_s = s, best_lambda = lambda;
  double best_zeta = std::numeric_limits<double>::infinity();
  double best_primal = std::numeric_limits<double>::infinity();

  const Matrix reg = settings.regularization * Matrix::Identity(n, n);
  int iter = 0;
  // Set when the iteration breaks down; infeasible problems typically end
  // this way with the multipliers diverging.
  const char* breakdown = nullptr;
  for (;; ++iter) {
    const Residuals r = residuals(Q, q, C, d, u, s, lambda);
    if (!std::isfinite(r.zeta)) {
      breakdown = "QP iterate became non-finite";
      break;
    }
    if (r.zeta < best_zeta) {
      best_zeta = r.zeta;
      best_primal = r.primal.lpNorm<Eigen::Infinity>();
      best_u = u;
      best_s = s;
      best_lambda = lambda;
    }
    if (r.zeta <= settings.tol || iter >= settings.max_iters) break;

    const Vector w = lambda.cwiseQuotient(s);
    const Matrix H = Q + C.transpose() * w.asDiagonal() * C + reg;
    Eigen::LLT<Matrix> llt(H);
    if (llt.info() != Eigen::Success) {
      breakdown = "QP Newton system is not positive definite";
      break;
    }

    // Solves the Newton system for complementarity residual rc with the
    // given dual/primal residuals.
    auto direction = [&](const Vector& rd, const Vector& rp, const Vector& rc, Vector& du,
                         Vector& ds, Vector& dl) {
      const Vector rhs =
          -rd + C.transpose() * (rc - lambda.cwiseProduct(rp)).cwiseQuotient(s);
      du = llt.solve(rhs);
      ds = -rp - C * du;
      dl = (-rc - lambda.cwiseProduct(ds)).cwiseQuotient(s);
    };

    // Affine scaling (predictor).
    Vector du_aff, ds_aff, dl_aff;
    direction(r.dual, r.primal, s.cwiseProduct(lambda), du_aff, ds_aff, dl_aff);
    const double a_aff = std::min(max_step(s, ds_aff), max_step(lambda, dl_aff));
    const double mu_aff =
        (s + a_aff * ds_aff).dot(lambda + a_aff * dl_aff) / static_cast<double>(m);
    const double sigma = r.mu > 0.0 ? std::pow(mu_aff / r.mu, 3) : 0.0;

    // Centering-corrector.
    Vector du_cc, ds_cc, dl_cc;
    const Vector rc_cc =
        ds_aff.cwiseProduct(dl_aff) - Vector::Constant(m, sigma * r.mu);
    direction(Vector::Zero(n), Vector::Zero(m), rc_cc, du_cc, ds_cc, dl_cc);

    const Vector du = du_aff + du_cc;
    const Vector ds = ds_aff + ds_cc;
    const Vector dl = dl_aff + dl_cc;
    const double alpha =
        std::min(1.0, settings.step_fraction * std::min(max_step(s, ds), max_step(lambda, dl)));
    u += alpha * du;
    s += alpha * ds;
    lambda += alpha * dl;
  }

  u = best_u;
  s = best_s;
  lambda = best_lambda;
  sol.iterations = iter;
  sol.residual = best_zeta;
  sol.converged = best_zeta <= settings.tol;

  if (settings.polish && polish(Q, q, C, d, u, s, lambda)) {
    const Residuals r = residuals(Q, q, C, d, u, s, lambda);
    sol.polished = true;
    sol.residual = r.zeta;
    sol.converged = r.zeta <= settings.tol;
    best_primal = r.primal.lpNorm<Eigen::Infinity>();
  }

  // An unconverged iterate is still usable when u itself satisfies Cu <= d;
  // only a genuine constraint excess means the QP is infeasible.
  const Vector viol = C * u - d;
  const double excess = viol.maxCoeff();
  if (!sol.converged && excess > 1e-6 * (1.0 + d.lpNorm<Eigen::Infinity>())) {
    std::ostringstream os;
    os << "QP infeasible: constraint excess " << excess << " (primal residual " << best_primal
       << ") after " << iter << " iterations; violated rows:";
    for (Eigen::Index k = 0; k < m; ++k) {
      if (viol[k] > 0.0) os << " #" << kept[k] << " (excess " << viol[k] << ")";
    }
    throw InfeasibleProblem(os.str());
  }
  if (breakdown && !sol.converged) throw NumericalFailure(breakdown);

  sol.u = u;
  sol.s = (problem.d - problem.C * u).cwiseMax(0.0);
  for (Eigen::Index k = 0; k < m; ++k) {
    sol.lambda[kept[k]] = lambda[k];
    sol.s[kept[k]] = s[k];
  }
  return sol;
}

QpBackward qp_backward(const QpProblem& problem, const QpSolution& solution, const Vector& grad_u,
                       double regularization) {
  check_problem(problem);
  const auto n = problem.q.size();
  const auto m_all = problem.d.size();
  if (grad_u.size() != n || solution.u.size() != n || solution.lambda.size() != m_all ||
      solution.s.size() != m_all) {
    throw std::invalid_argument("qp_backward: shape mismatch");
  }

  // Rows with lambda == 0 exactly cannot move u to first order and all their
  // gradients carry a lambda factor, so they drop out of the system.
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < m_all; ++i) {
    if (solution.lambda[i] > 0.0) rows.push_back(static_cast<int>(i));
  }
  const auto k = static_cast<Eigen::Index>(rows.size());
  Matrix kkt = Matrix::Zero(n + k, n + k);
  kkt.topLeftCorner(n, n) = problem.Q;
  for (Eigen::Index a = 0; a < k; ++a) {
    const int i = rows[a];
    kkt.block(0, n + a, n, 1) = problem.C.row(i).transpose() * solution.lambda[i];
    kkt.block(n + a, 0, 1, n) = problem.C.row(i);
    kkt(n + a, n + a) = -solution.s[i];
  }
  Vector rhs = Vector::Zero(n + k);
  rhs.head(n) = -grad_u;

  QpBackward out;
  Vector sol;
  Eigen::FullPivLU<Matrix> lu(kkt);
  if (lu.isInvertible()) {
    sol = lu.solve(rhs);
  } else {
    out.regularized = true;
    kkt.topLeftCorner(n, n) += regularization * Matrix::Identity(n, n);
    kkt.bottomRightCorner(k, k) -= regularization * Matrix::Identity(k, k);
    Eigen::FullPivLU<Matrix> reg_lu(kkt);
    if (!reg_lu.isInvertible()) throw NumericalFailure("KKT system singular beyond regularization");
    sol = reg_lu.solve(rhs);
  }

  const Vector du = sol.head(n);
  const Vector& u = solution.u;
  out.grad_q = du;
  out.grad_Q = 0.5 * (du * u.transpose() + u * du.transpose());
  out.grad_C = Matrix::Zero(m_all, n);
  out.grad_d = Vector::Zero(m_all);
  for (Eigen::Index a = 0; a < k; ++a) {
    const int i = rows[a];
    const double lam = solution.lambda[i];
    const double dl = sol[n + a];
    out.grad_C.row(i) = lam * (dl * u.transpose() + du.transpose());
    out.grad_d[i] = -lam * dl;
  }
  return out;
}

QpSolution brute_force_qp_oracle(const QpProblem& problem) {
  check_problem(problem);
  const int m = problem.num_constraints();
  if (m > 12) throw std::invalid_argument("brute_force_qp_oracle: n_q must be <= 12");
  if (!is_spd(problem.Q)) throw std::invalid_argument("QP matrix Q is not SPD");

  std::vector<std::uint32_t> masks(std::size_t{1} << m);
  std::iota(masks.begin(), masks.end(), 0u);
  std::stable_sort(masks.begin(), masks.end(), [](std::uint32_t a, std::uint32_t b) {
    return std::popcount(a) < std::popcount(b);
  });

  bool found = false;
  double best_obj = std::numeric_limits<double>::infinity();
  QpSolution best;
  for (const std::uint32_t mask : masks) {
    std::vector<int> active;
    for (int i = 0; i < m; ++i) {
      if (mask & (1u << i)) active.push_back(i);
    }
    Vector u;
    Vector lam_a;
    if (!solve_active_set(problem.Q, problem.q, problem.C, problem.d, active, u, lam_a)) continue;
    if (lam_a.size() && lam_a.minCoeff() < -1e-9) continue;
    const Vector slack = problem.d - problem.C * u;
    bool feasible = true;
    for (int i = 0; i < m; ++i) {
      if (slack[i] < -1e-9 * (1.0 + std::abs(problem.d[i]))) {
        feasible = false;
        break;
      }
    }
    if (!feasible) continue;
    const double obj = problem.objective(u);
    // Masks come in order of active-set size, so a strict improvement is
    // required to replace an earlier (smaller) set.
    if (!found || obj < best_obj - 1e-12 * (1.0 + std::abs(best_obj))) {
      found = true;
      best_obj = obj;
      best.u = u;
      best.s = slack.cwiseMax(0.0);
      best.lambda = Vector::Zero(m);
      for (std::size_t a = 0; a < active.size(); ++a) {
        best.lambda[active[a]] = std::max(lam_a[static_cast<Eigen::Index>(a)], 0.0);
        best.s[active[a]] = 0.0;
      }
    }
  }
  if (!found) throw InfeasibleProblem("QP infeasible: no active set yields a feasible KKT point");
  best.iterations = 0;
  best.converged = true;
  const Vector rd = problem.Q * best.u + problem.q + problem.C.transpose() * best.lambda;
  best.residual = rd.size() ? rd.lpNorm<Eigen::Infinity>() : 0.0;
  return best;
}

bool is_degenerate(const QpSolution& solution, double threshold) {
  for (Eigen::Index i = 0; i < solution.lambda.size(); ++i) {
    if (std::abs(solution.lambda[i]) < threshold && solution.s[i] < threshold) return true;
  }
  return false;
}

std::uint64_t active_set_mask(const QpSolution& solution) {
  std::uint64_t mask = 0;
  const auto m = std::min<Eigen::Index>(solution.lambda.size(), 64);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (solution.lambda[i] > solution.s[i]) mask |= (std::uint64_t{1} << i);
  }
  return mask;
}

}  // namespace safe_fbsde
