#include "safe_fbsde/verifier.hpp"

#include <limits>

#include <Eigen/Cholesky>

#include "parallel.hpp"

namespace safe_fbsde {

WorstCase worst_case_extract(std::span<const Trajectory> trajectories, int barrier) {
  if (trajectories.empty()) throw std::invalid_argument("worst_case_extract: no trajectories");
  WorstCase wc;
  wc.min_h = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const Matrix& h = trajectories[i].barrier_values;
    if (barrier < 0 || barrier >= h.cols()) {
      throw std::out_of_range("worst_case_extract: barrier index out of range");
    }
    Eigen::Index step = 0;
    const double v = h.col(barrier).minCoeff(&step);
    if (v < wc.min_h) {
      wc = WorstCase{i, v, static_cast<int>(step)};
    }
  }
  return wc;
}

namespace {

class SafeQpController : public Controller {
 public:
  SafeQpController(const ControlProblem& problem, QpSettings settings)
      : problem_(problem), settings_(settings) {}

 protected:
  Vector filtered(const Vector& x, const Vector& vx) const {
    const Matrix g = problem_.system->actuation(x);
    std::vector<ConstraintRow> rows;
    rows.reserve(problem_.barriers.size());
    for (const auto& b : problem_.barriers) rows.push_back(constraint_row(*b, *problem_.system, x));
    return solve_qp_pdipm(assemble_hamiltonian_qp(problem_.cost.R, g, vx, rows), settings_).u;
  }

  const ControlProblem& problem_;
  QpSettings settings_;
};

class ZeroNominal final : public SafeQpController {
 public:
  using SafeQpController::SafeQpController;
  std::string name() const override { return "qp-zero-nominal"; }
  void reset(std::size_t) override {}
  Vector control(const Vector& x, int) override {
    return filtered(x, Vector::Zero(x.size()));
  }
};

class NetworkPolicy final : public SafeQpController {
 public:
  NetworkPolicy(const NetworkParams& params, const ControlProblem& problem, QpSettings settings)
      : SafeQpController(problem, settings), params_(params) {}
  std::string name() const override { return "network"; }
  void reset(std::size_t) override {
    tape_ = Tape(false);
    state_ = initial_recurrent_state(tape_, params_);
  }
  Vector control(const Vector& x, int) override {
    const Vector input =
        problem_.input_scale.size() ? Vector(problem_.input_scale.cwiseProduct(x)) : x;
    const VxPrediction pred = predict_vx(tape_, params_, tape_.constant(input), state_);
    state_ = pred.state;
    return filtered(x, tape_.value(pred.vx));
  }

 private:
  const NetworkParams& params_;
  Tape tape_{false};
  RecurrentState state_;
};

class RandomUnfiltered final : public Controller {
 public:
  RandomUnfiltered(const ControlProblem& problem, double scale, std::uint64_t seed)
      : problem_(problem), scale_(scale), seed_(seed), rng_(seed) {}
  std::string name() const override { return "random-unfiltered"; }
  void reset(std::size_t rollout) override { rng_ = NoiseStream(seed_, 0x7a11, rollout); }
  Vector control(const Vector& x, int) override {
    Vector vx(x.size());
    for (Eigen::Index i = 0; i < vx.size(); ++i) vx[i] = rng_.uniform(-scale_, scale_);
    const Matrix g = problem_.system->actuation(x);
    return -problem_.cost.R.llt().solve(g.transpose() * vx);
  }

 private:
  const ControlProblem& problem_;
  double scale_;
  std::uint64_t seed_;
  NoiseStream rng_;
};

struct RolloutOutcome {
  std::vector<double> min_h;
  std::vector<int> argmin_step;
  bool infeasible = false;
};

}  // namespace

ControllerFactory zero_nominal_controller(const ControlProblem& problem, QpSettings settings) {
  return [&problem, settings] { return std::make_unique<ZeroNominal>(problem, settings); };
}

ControllerFactory random_unfiltered_controller(const ControlProblem& problem, double scale,
                                               std::uint64_t seed) {
  return [&problem, scale, seed] {
    return std::make_unique<RandomUnfiltered>(problem, scale, seed);
  };
}

ControllerFactory network_controller(const NetworkParams& params, const ControlProblem& problem,
                                     QpSettings settings) {
  return [&params, &problem, settings] {
    return std::make_unique<NetworkPolicy>(params, problem, settings);
  };
}

std::optional<double> SafetyReport::empirical_probability() const {
  if (num_rollouts == 0) return std::nullopt;
  return static_cast<double>(violating_rollouts) / num_rollouts;
}

nlohmann::json SafetyReport::to_json() const {
  nlohmann::json j;
  j["controller"] = controller;
  j["num_rollouts"] = num_rollouts;
  j["epsilon"] = epsilon;
  j["horizon_steps"] = horizon_steps;
  j["dt"] = dt;
  j["horizon"] = horizon_steps * dt;
  j["barriers"] = barrier_names;
  j["violations_per_barrier"] = violations_per_barrier;
  j["violation_count"] = violating_rollouts;
  if (const auto p = empirical_probability()) {
    j["empirical_probability"] = *p;
  } else {
    j["empirical_probability"] = nullptr;
    j["probability_undefined"] = true;
  }
  j["theorem_bound"] =
      "with the filter active and every QP feasible, the continuous-time process stays in the "
      "safe set with probability 1; the expected violation count is 0";
  j["min_h_overall"] = num_rollouts ? nlohmann::json(min_h) : nlohmann::json(nullptr);
  j["worst_trajectory_index"] = num_rollouts ? nlohmann::json(worst_rollout) : nlohmann::json(nullptr);
  j["worst_step"] = worst_step;
  j["worst_barrier"] = worst_barrier;
  j["infeasible_qps"] = infeasible_qps;
  j["note"] =
      "h is checked at the grid points of the Euler-Maruyama discretization only; "
      "a zero violation count does not certify the continuous-time process";
  return j;
}

SafetyReport monte_carlo_safety(const ControlProblem& problem, const ControllerFactory& factory,
                                const SafetyConfig& config) {
  if (config.num_rollouts < 0 || config.horizon_steps < 1 || !(config.dt > 0.0) ||
      !(config.epsilon >= 0.0)) {
    throw std::invalid_argument("monte_carlo_safety: invalid configuration");
  }
  const SystemModel& sys = *problem.system;
  const std::size_t n_b = problem.barriers.size();
  const auto n = static_cast<std::size_t>(config.num_rollouts);
  std::vector<RolloutOutcome> outcomes(n);
  const int threads = std::max(1, config.threads);

  // One controller per contiguous chunk keeps instances thread-local.
  const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  detail::parallel_for(chunks, threads, [&](std::size_t c) {
    auto ctrl = factory();
    const std::size_t lo = n * c / chunks;
    const std::size_t hi = n * (c + 1) / chunks;
    for (std::size_t r = lo; r < hi; ++r) {
      RolloutOutcome& out = outcomes[r];
      out.min_h.assign(n_b, std::numeric_limits<double>::infinity());
      out.argmin_step.assign(n_b, 0);
      ctrl->reset(r);
      NoiseStream noise(config.seed, 0x5afe7ull, r);
      Vector x = problem.x0;
      auto observe = [&](int step) {
        for (std::size_t b = 0; b < n_b; ++b) {
          const double h = problem.barriers[b]->value(x);
          if (h < out.min_h[b]) {
            out.min_h[b] = h;
            out.argmin_step[b] = step;
          }
        }
      };
      observe(0);
      for (int t = 0; t < config.horizon_steps; ++t) {
        Vector u;
        try {
          u = ctrl->control(x, t);
        } catch (const InfeasibleProblem&) {
          out.infeasible = true;
          break;
        }
        x = euler_maruyama_step(sys, x, u, config.dt, noise.sample(sys.noise_dim(), config.dt));
        observe(t + 1);
      }
    }
  });

  SafetyReport rep;
  rep.controller = factory()->name();
  rep.num_rollouts = config.num_rollouts;
  rep.epsilon = config.epsilon;
  rep.horizon_steps = config.horizon_steps;
  rep.dt = config.dt;
  for (const auto& b : problem.barriers) rep.barrier_names.push_back(b->name());
  rep.violations_per_barrier.assign(n_b, 0);
  rep.min_h = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < n; ++r) {
    const RolloutOutcome& o = outcomes[r];
    bool violated = o.infeasible;
    if (o.infeasible) ++rep.infeasible_qps;
    for (std::size_t b = 0; b < n_b; ++b) {
      if (o.min_h[b] < -config.epsilon) {
        ++rep.violations_per_barrier[b];
        violated = true;
      }
      if (o.min_h[b] < rep.min_h) {
        rep.min_h = o.min_h[b];
        rep.worst_rollout = r;
        rep.worst_step = o.argmin_step[b];
        rep.worst_barrier = static_cast<int>(b);
      }
    }
    if (violated) ++rep.violating_rollouts;
  }
  return rep;
}

}  // namespace safe_fbsde
