#include "safe_fbsde/qp_check.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <Eigen/SVD>

#include "safe_fbsde/gradcheck.hpp"

namespace safe_fbsde {
namespace {

Matrix random_matrix(NoiseStream& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  }
  return m;
}

Vector random_vector(NoiseStream& rng, Eigen::Index n) { return random_matrix(rng, n, 1); }

}  // namespace

QpProblem random_feasible_qp(NoiseStream& rng, int n_u, int n_q) {
  QpProblem p;
  const Matrix a = random_matrix(rng, n_u, n_u);
  p.Q = a * a.transpose() + 0.1 * Matrix::Identity(n_u, n_u);
  p.q = 2.0 * random_vector(rng, n_u);
  p.C = random_matrix(rng, n_q, n_u);
  const Vector u0 = random_vector(rng, n_u);
  p.d = p.C * u0;
  for (int i = 0; i < n_q; ++i) {
    if (rng.uniform(0.0, 1.0) < 0.5) p.d[i] += rng.uniform(0.0, 2.0);
  }
  return p;
}

QpFuzzReport qp_fuzz(int instances, std::uint64_t seed, double tolerance, int max_n_u,
                     int max_n_q) {
  const auto start = std::chrono::steady_clock::now();
  QpFuzzReport rep;
  NoiseStream rng(seed);
  for (int k = 0; k < instances; ++k) {
    const int n_u = 1 + static_cast<int>(rng.engine()() % static_cast<std::uint64_t>(max_n_u));
    const int n_q = static_cast<int>(rng.engine()() % static_cast<std::uint64_t>(max_n_q + 1));
    const QpProblem p = random_feasible_qp(rng, n_u, n_q);
    const QpSolution a = solve_qp_pdipm(p);
    const QpSolution b = brute_force_qp_oracle(p);
    const double err = (a.u - b.u).lpNorm<Eigen::Infinity>();
    rep.max_error = std::max(rep.max_error, err);
    if (!(err <= tolerance)) ++rep.mismatches;
    ++rep.instances;
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

QpProblem random_strict_qp(NoiseStream& rng, int n_u, int n_q, double margin) {
  for (;;) {
    QpProblem p = random_feasible_qp(rng, n_u, n_q);
    const QpSolution s = solve_qp_pdipm(p);
    bool strict = true;
    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < s.lambda.size(); ++i) {
      strict = strict && (s.lambda[i] > margin || s.s[i] > margin);
      if (s.lambda[i] > margin) active.push_back(i);
    }
    if (!strict || static_cast<int>(active.size()) > n_u) continue;
    // Active rows must be linearly independent, otherwise the multipliers are
    // not unique and u* has a kink there.
    if (!active.empty()) {
      Matrix ca(static_cast<Eigen::Index>(active.size()), n_u);
      for (std::size_t a = 0; a < active.size(); ++a) ca.row(static_cast<Eigen::Index>(a)) = p.C.row(active[a]);
      const Vector sv = Eigen::JacobiSVD<Matrix>(ca).singularValues();
      if (sv.minCoeff() < margin * sv.maxCoeff()) continue;
    }
    return p;
  }
}

QpGradientCheck qp_backward_fd_check(const QpProblem& problem, const Vector& w, double epsilon,
                                     const QpSettings& settings) {
  const QpSolution sol = solve_qp_pdipm(problem, settings);
  const QpBackward back = qp_backward(problem, sol, w, settings.regularization);
  auto active_set = [](const QpSolution& s) {
    std::vector<bool> a(static_cast<std::size_t>(s.lambda.size()));
    for (Eigen::Index i = 0; i < s.lambda.size(); ++i) a[static_cast<std::size_t>(i)] = s.lambda[i] > s.s[i];
    return a;
  };
  const std::vector<bool> nominal = active_set(sol);
  QpGradientCheck out;
  QpProblem p = problem;
  auto& q = p.q;
  auto& C = p.C;
  auto& d = p.d;
  // Fourth-order stencil, halving the step until no stencil point leaves the
  // nominal active set. On a fixed active set u* is affine in q and d, so those
  // take a 100x longer step: no truncation error and far less roundoff.
  auto fd = [&](double& slot, double step) {
    const double orig = slot;
    double h = step * std::max(1.0, std::abs(orig));
    double g = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt, h *= 0.5) {
      bool same = true;
      auto at = [&](double offset) {
        slot = orig + offset;
        try {
          const QpSolution s = solve_qp_pdipm(p, settings);
          same = same && s.polished && active_set(s) == nominal;
          return w.dot(s.u);
        } catch (const InfeasibleProblem&) {
          same = false;
          return 0.0;
        } catch (const NumericalFailure&) {
          same = false;
          return 0.0;
        }
      };
      g = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      if (same) break;
    }
    slot = orig;
    return g;
  };
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    out.max_rel_q = std::max(out.max_rel_q, relative_error(back.grad_q[i], fd(q[i], 100.0 * epsilon)));
  }
  for (Eigen::Index i = 0; i < C.rows(); ++i) {
    for (Eigen::Index j = 0; j < C.cols(); ++j) {
      out.max_rel_C = std::max(out.max_rel_C, relative_error(back.grad_C(i, j), fd(C(i, j), epsilon)));
    }
    out.max_rel_d = std::max(out.max_rel_d, relative_error(back.grad_d[i], fd(d[i], 100.0 * epsilon)));
  }
  return out;
}

}  // namespace safe_fbsde
