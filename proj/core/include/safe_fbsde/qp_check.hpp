#pragma once

#include "safe_fbsde/dynamics.hpp"
#include "safe_fbsde/qp.hpp"

namespace safe_fbsde {

/// Random QP with SPD Q and a known feasible point; roughly half of the rows
/// are tight at that point.
QpProblem random_feasible_qp(NoiseStream& rng, int n_u, int n_q);

struct QpFuzzReport {
  int instances = 0;
  int mismatches = 0;   // |u_pdipm - u_oracle|_inf > tolerance
  double max_error = 0.0;
  double seconds = 0.0;
};

/// PDIPM against the brute-force oracle on `instances` problems with
/// n_u in [1, max_n_u] and n_q in [0, max_n_q].
QpFuzzReport qp_fuzz(int instances, std::uint64_t seed, double tolerance = 1e-6,
                     int max_n_u = 8, int max_n_q = 6);

/// A random instance whose solution has every row strictly active or strictly
/// inactive (lambda_i > margin or s_i > margin) and linearly independent
/// active rows.
QpProblem random_strict_qp(NoiseStream& rng, int n_u, int n_q, double margin = 1e-3);

struct QpGradientCheck {
  double max_rel_q = 0.0;
  double max_rel_C = 0.0;
  double max_rel_d = 0.0;
  double max_rel() const { return std::max({max_rel_q, max_rel_C, max_rel_d}); }
};

/// qp_backward against fourth-order central differences of
/// L(q, C, d) = w . u*(q, C, d). C entries are stepped by epsilon, q and d by
/// 100 * epsilon (relative to max(1, |entry|)); a step is halved while any
/// stencil point lands on a different active set or an unpolished solve.
QpGradientCheck qp_backward_fd_check(const QpProblem& problem, const Vector& w,
                                     double epsilon = 1e-4, const QpSettings& settings = {});

}  // namespace safe_fbsde
