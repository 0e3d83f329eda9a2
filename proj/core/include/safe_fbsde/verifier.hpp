#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "safe_fbsde/trainer.hpp"

namespace safe_fbsde {

/// Feedback law evaluated along one rollout.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  /// Called before each rollout with its index.
  virtual void reset(std::size_t rollout) = 0;
  virtual Vector control(const Vector& x, int step) = 0;
};

/// Each worker gets its own controller instance.
using ControllerFactory = std::function<std::unique_ptr<Controller>()>;

/// Safe controller with a zero value-gradient (the QP only enforces safety).
ControllerFactory zero_nominal_controller(const ControlProblem& problem, QpSettings settings = {});
/// Unfiltered controller u = -R^{-1} G^T V_x with V_x drawn uniformly from
/// [-scale, scale] at every step. Negative control: it ignores the barriers.
ControllerFactory random_unfiltered_controller(const ControlProblem& problem, double scale,
                                               std::uint64_t seed);
/// Safe controller driven by the trained network.
ControllerFactory network_controller(const NetworkParams& params, const ControlProblem& problem,
                                     QpSettings settings = {});

struct SafetyConfig {
  int num_rollouts = 10000;
  double epsilon = 0.0;  // a rollout violates when its running min of h drops below -epsilon
  int horizon_steps = 75;
  double dt = 0.02;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct SafetyReport {
  std::string controller;
  int num_rollouts = 0;
  double epsilon = 0.0;
  int horizon_steps = 0;
  double dt = 0.0;
  std::vector<std::string> barrier_names;
  std::vector<int> violations_per_barrier;  // rollouts with h < 0 at some step
  int violating_rollouts = 0;
  double min_h = 0.0;
  std::size_t worst_rollout = 0;
  int worst_step = 0;
  int worst_barrier = 0;
  std::size_t infeasible_qps = 0;

  /// violating_rollouts / num_rollouts; empty when num_rollouts == 0.
  std::optional<double> empirical_probability() const;
  nlohmann::json to_json() const;
};

/// Monte Carlo check that h stays above -epsilon on the discrete grid. Rollouts
/// whose QP becomes infeasible stop there and count as violating.
/// num_rollouts == 0 yields an empty report.
SafetyReport monte_carlo_safety(const ControlProblem& problem, const ControllerFactory& factory,
                                const SafetyConfig& config);

}  // namespace safe_fbsde
