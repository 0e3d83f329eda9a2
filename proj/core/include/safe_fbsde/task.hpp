#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safe_fbsde/trainer.hpp"

namespace safe_fbsde {

inline const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names{
      "pendulum-balance",    "cartpole-swingup", "cartpole-balance-1c",
      "cartpole-balance-2c", "car-obstacles",    "car-multi"};
  return names;
}

struct SystemConfig {
  std::string kind;  // pendulum | cartpole | car2d
  PendulumParams pendulum;
  CartPoleParams cartpole;
  CarParams car;
  int num_cars = 1;
};

/// One barrier entry. Fields not used by `kind` are ignored.
///   pendulum-box, cartpole-position, cartpole-angle: low, high
///   car-obstacle: center, radius, car
///   car-pairs: car_radius (expands to all pairs)
struct BarrierConfig {
  std::string kind;
  double mu = 0.0;
  double gamma = 1.0;
  double low = 0.0;
  double high = 0.0;
  std::array<double, 2> center{0.0, 0.0};
  double radius = 0.0;
  int car = 0;
  double car_radius = 0.0;
};

struct CostConfig {
  std::vector<double> x_goal;
  std::vector<double> running_weights;
  std::vector<double> terminal_weights;
  double r = 1.0;  // R = r I
  std::vector<int> angle_indices;
};

struct EvalConfig {
  int num_rollouts = 128;
  std::uint64_t seed = 1;
};

struct VerifyConfig {
  int num_rollouts = 10000;
  double epsilon = 0.0;
};

struct RunConfig {
  std::string task;
  SystemConfig system;
  std::vector<BarrierConfig> barriers;
  CostConfig cost;
  std::vector<double> x0;
  std::vector<double> input_scale;
  TrainConfig train;
  EvalConfig eval;
  VerifyConfig verify;
  std::string output_dir = "runs";

  /// Throws ConfigError on inconsistent dimensions or values.
  void validate() const;
};

/// Built-in preset. Throws ConfigError for an unknown name.
RunConfig preset(const std::string& task);

nlohmann::json to_json(const RunConfig& config);
/// Unknown keys and type mismatches raise ConfigError naming the key path.
RunConfig from_json(const nlohmann::json& j);

/// Reads a config file. A "task" key selects the preset the remaining keys
/// override, so a file may contain just the fields that differ. Parse errors
/// report line and column.
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);

/// Recursively applies `patch` onto `base` (objects merge, everything else
/// replaces).
nlohmann::json merge_json(nlohmann::json base, const nlohmann::json& patch);

SystemPtr build_system(const SystemConfig& config);
BarrierSet build_barriers(const std::vector<BarrierConfig>& config, int num_cars);
ControlProblem build_problem(const RunConfig& config);

}  // namespace safe_fbsde
