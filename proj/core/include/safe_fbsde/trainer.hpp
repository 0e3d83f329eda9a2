#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "safe_fbsde/barrier.hpp"
#include "safe_fbsde/gradcheck.hpp"
#include "safe_fbsde/network.hpp"
#include "safe_fbsde/qp.hpp"
#include "safe_fbsde/trajectory.hpp"

namespace safe_fbsde {

/// Quadratic running/terminal costs around x_goal with diagonal weights.
/// Errors on angle coordinates are wrapped into [-pi, pi].
struct CostSpec {
  Vector x_goal;
  Vector running_weights;   // diag(Q_r)
  Vector terminal_weights;  // diag(Q_f)
  Matrix R;
  std::vector<int> angle_indices;

  Vector error(const Vector& x) const;
  double running(const Vector& x) const;
  Vector running_gradient(const Vector& x) const;
  double terminal(const Vector& x) const;
  Vector terminal_gradient(const Vector& x) const;
  Matrix terminal_hessian(const Vector& x) const;
};

struct LossWeights {
  double a = 1.0;
  double b = 1.0;
  double c = 0.01;
  double d = 0.01;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  int batch_size = 128;
  int iterations = 201;
  int horizon_steps = 75;
  double dt = 0.02;
  LossWeights weights;
  double weight_decay = 1e-5;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
  AdamConfig adam;
  QpSettings qp;
  int threads = 0;  // 0: SAFE_FBSDE_THREADS or hardware concurrency
  bool deterministic = false;

  void validate() const;
};

/// Everything a rollout needs besides the network.
struct ControlProblem {
  SystemPtr system;
  BarrierSet barriers;
  CostSpec cost;
  Vector x0;
  Vector input_scale;  // network input = input_scale .* x (empty: identity)
};

struct RolloutRecord {
  std::vector<Trajectory> trajectories;
};

struct LossBreakdown {
  double value_term = 0.0;
  double gradient_term = 0.0;
  double terminal_value_term = 0.0;
  double terminal_gradient_term = 0.0;
  double weight_decay_term = 0.0;
  double total = 0.0;
};

/// Forward-only batched rollout with the safe controller. Element i of
/// iteration k draws its noise from NoiseStream(seed, k, i).
RolloutRecord rollout_batch(const NetworkParams& params, const ControlProblem& problem,
                            const TrainConfig& config, std::uint64_t iteration);

/// Loss terms (batch means) of a completed rollout; weight decay over the
/// tensors flagged for it.
LossBreakdown compute_loss(const RolloutRecord& record, const CostSpec& cost,
                           const LossWeights& weights, double weight_decay,
                           const NetworkParams& params);

struct BatchGradient {
  LossBreakdown loss;
  GradientSet grads;
  RolloutRecord record;
};

/// Rollout + loss + full backpropagation through time for one iteration.
BatchGradient compute_batch_gradient(const NetworkParams& params, const ControlProblem& problem,
                                     const TrainConfig& config, std::uint64_t iteration);

struct AdamState {
  ParameterSet m;
  ParameterSet v;
  int step = 0;
};

AdamState make_adam_state(const NetworkParams& params);
/// In-place Adam update with bias correction. Throws NonFiniteError on a
/// non-finite gradient entry.
void adam_step(NetworkParams& params, const GradientSet& grads, AdamState& state,
               double learning_rate, const AdamConfig& adam);

struct QpAggregate {
  double mean_iterations = 0.0;
  int max_iterations = 0;
  double max_residual = 0.0;
  double polished_fraction = 0.0;
  std::size_t solves = 0;
};

QpAggregate aggregate_qp_stats(const RolloutRecord& record);

struct IterationLog {
  int iteration = 0;
  LossBreakdown loss;
  std::vector<double> min_h;  // per barrier, min over batch and time
  QpAggregate qp;
  double psi = 0.0;
};

struct WorstCaseTrajectory {
  int iteration = -1;
  WorstCase where;
  Trajectory trajectory;
};

struct TrainResult {
  NetworkParams params;
  std::vector<IterationLog> log;
  std::vector<WorstCaseTrajectory> worst;  // per barrier over all iterations
  std::size_t trajectories = 0;
};

using IterationCallback = std::function<void(const IterationLog&)>;

/// Thrown by train() on the first h < 0. Carries the run up to and including
/// the violating iteration (worst-case trajectories point at the violation).
class TrainingSafetyViolation : public SafetyViolation {
 public:
  TrainingSafetyViolation(const std::string& what, TrainResult partial)
      : SafetyViolation(what), partial_(std::move(partial)) {}
  const TrainResult& partial() const { return partial_; }

 private:
  TrainResult partial_;
};

/// K iterations of rollout -> loss -> backprop -> Adam. Throws
/// TrainingSafetyViolation on the first observed h < 0 and InfeasibleProblem
/// when a QP has no feasible control.
TrainResult train(const ControlProblem& problem, const TrainConfig& config,
                  const IterationCallback& on_iteration = {},
                  std::optional<NetworkParams> initial = std::nullopt);

struct EvaluationResult {
  std::vector<Trajectory> trajectories;
  Matrix mean_states;  // (N+1) x n_x
  Matrix std_states;
  Matrix mean_controls;  // N x n_u
  Vector mean_values;
  Vector terminal_error_mean;  // wrapped error x_N - x_goal
  Vector terminal_error_std;
  Vector terminal_error_abs_mean;  // mean |x_N - x_goal| (wrapped)
  Vector min_h;  // per barrier
  double min_h_overall = 0.0;
};

/// Fresh-noise rollouts of the trained safe controller.
EvaluationResult evaluate(const NetworkParams& params, const ControlProblem& problem,
                          const TrainConfig& config, int num_rollouts, std::uint64_t seed);

/// Full training loss of one iteration as a function of the network
/// parameters, with the iteration's noise held fixed. The signature digests
/// the QP active sets of every rollout.
Computation training_loss_computation(const ControlProblem& problem, const TrainConfig& config,
                                      const NetworkParams& layout, std::uint64_t iteration = 0);

/// Threads to use for batch work under `config`.
int resolve_threads(const TrainConfig& config);

}  // namespace safe_fbsde
