#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "safe_fbsde/types.hpp"

namespace safe_fbsde {

struct QpStepStats {
  int iterations = 0;
  double residual = 0.0;
  bool polished = false;
  bool converged = false;
};

/// One batch element of a rollout. Rows are time steps.
struct Trajectory {
  Matrix states;          // (N+1) x n_x
  Matrix controls;        // N x n_u
  Vector values;          // N+1, propagated V
  Matrix vx;              // N x n_x, predicted V_x along the path
  Vector vx_terminal;     // n_x, prediction at x_N
  Matrix noises;          // N x n_w
  Matrix barrier_values;  // (N+1) x n_barriers
  std::vector<QpStepStats> qp;
  bool degenerate_qp = false;
  // Digest of the QP active sets along the path; equal digests mean the
  // rollout stayed on the same smooth piece of the solution map.
  std::uint64_t active_signature = 0;

  int horizon() const { return static_cast<int>(controls.rows()); }
  /// min over time of barrier b.
  double min_barrier(int b) const { return barrier_values.col(b).minCoeff(); }
};

struct WorstCase {
  std::size_t index = 0;
  double min_h = 0.0;
  int step = 0;
};

/// Trajectory with the smallest running minimum of barrier `barrier`.
WorstCase worst_case_extract(std::span<const Trajectory> trajectories, int barrier);

}  // namespace safe_fbsde
