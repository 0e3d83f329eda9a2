#include "commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>

#include <CLI11.hpp>

#include "safe_fbsde/artifacts.hpp"
#include "safe_fbsde/gradcheck.hpp"
#include "safe_fbsde/qp_check.hpp"
#include "safe_fbsde/task.hpp"
#include "safe_fbsde/verifier.hpp"

namespace safe_fbsde::cli {
namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string task;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::optional<int> batch;
  std::optional<std::string> output_dir;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--task", o.task, "Task preset")->check(CLI::IsMember(task_names()));
  cmd->add_option("--config", o.config, "JSON run config (a \"task\" key selects the base preset)");
  cmd->add_option("--seed", o.seed, "Training seed");
  cmd->add_option("--iterations", o.iterations, "Training iterations K");
  cmd->add_option("--batch", o.batch, "Batch size M");
  cmd->add_option("--output-dir", o.output_dir, "Artifact directory");
  cmd->add_flag("--deterministic", o.deterministic, "Single-threaded, fixed-order reduction");
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig c;
  if (!o.config.empty()) {
    c = load_config(o.config);
    if (!o.task.empty() && o.task != c.task) {
      throw ConfigError("--task " + o.task + " conflicts with config task " + c.task);
    }
  } else if (!o.task.empty()) {
    c = preset(o.task);
  } else {
    throw ConfigError("one of --task or --config is required");
  }
  if (o.seed) c.train.seed = *o.seed;
  if (o.iterations) c.train.iterations = *o.iterations;
  if (o.batch) c.train.batch_size = *o.batch;
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.deterministic) c.train.deterministic = true;
  c.validate();
  return c;
}

void write_worst_cases(const fs::path& dir, const std::vector<WorstCaseTrajectory>& worst,
                       const std::vector<std::string>& names, double dt) {
  for (std::size_t b = 0; b < worst.size(); ++b) {
    if (worst[b].iteration < 0) continue;
    std::ofstream out(dir / ("worst_case_" + file_safe(names[b]) + ".csv"));
    write_trajectory_csv(out, worst[b].trajectory, dt, names);
  }
}

nlohmann::json worst_summary(const std::vector<WorstCaseTrajectory>& worst,
                             const std::vector<std::string>& names) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t b = 0; b < worst.size(); ++b) {
    j.push_back({{"barrier", names[b]},
                 {"min_h", worst[b].where.min_h},
                 {"iteration", worst[b].iteration},
                 {"batch_index", worst[b].where.index},
                 {"step", worst[b].where.step}});
  }
  return j;
}

int cmd_train(const CommonOptions& o, std::ostream& out) {
  const RunConfig config = resolve(o);
  const ControlProblem problem = build_problem(config);
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  save_config(config, dir / "config.json");
  const auto names = barrier_names(problem.barriers);

  std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
  const int every = std::max(1, config.train.iterations / 20);
  auto on_iteration = [&](const IterationLog& e) {
    log << iteration_json(e).dump() << "\n";
    log.flush();
    if (e.iteration % every == 0 || e.iteration + 1 == config.train.iterations) {
      out << "iter " << std::setw(5) << e.iteration << "  loss " << std::setprecision(6)
          << e.loss.total << "  psi " << e.psi << "  min_h";
      for (double h : e.min_h) out << " " << h;
      out << "\n";
    }
  };

  auto write_summary = [&](const TrainResult& r, const std::string& status) {
    nlohmann::json s;
    s["status"] = status;
    s["task"] = config.task;
    s["iterations_completed"] = r.log.size();
    s["trajectories"] = r.trajectories;
    s["worst_case"] = worst_summary(r.worst, names);
    write_text(dir / "train_summary.json", s.dump(2) + "\n");
  };

  try {
    const TrainResult r = train(problem, config.train, on_iteration);
    save_params(r.params, dir / "params.json");
    write_worst_cases(dir, r.worst, names, config.train.dt);
    write_summary(r, "ok");
    out << "trained " << r.log.size() << " iterations over " << r.trajectories
        << " trajectories; artifacts in " << dir.string() << "\n";
    return kOk;
  } catch (const TrainingSafetyViolation& e) {
    save_params(e.partial().params, dir / "params.json");
    write_worst_cases(dir, e.partial().worst, names, config.train.dt);
    write_summary(e.partial(), "safety_violation");
    throw;
  }
}

int cmd_evaluate(const CommonOptions& o, const std::string& params_path, std::optional<int> rollouts,
                 std::optional<std::uint64_t> eval_seed, std::ostream& out) {
  const RunConfig config = resolve(o);
  const ControlProblem problem = build_problem(config);
  const fs::path dir = config.output_dir;
  const fs::path path = params_path.empty() ? dir / "params.json" : fs::path(params_path);
  const NetworkParams params = load_params(path);
  if (params.state_dim != problem.system->state_dim()) {
    throw ConfigError("params in " + path.string() + " have n_x=" + std::to_string(params.state_dim) +
                      " but task " + config.task + " has n_x=" +
                      std::to_string(problem.system->state_dim()));
  }
  const int n = rollouts.value_or(config.eval.num_rollouts);
  const std::uint64_t seed = eval_seed.value_or(config.eval.seed);
  const EvaluationResult r = evaluate(params, problem, config.train, n, seed);
  fs::create_directories(dir);
  {
    std::ofstream csv(dir / "eval_mean.csv");
    write_mean_trajectory_csv(csv, r, config.train.dt);
  }
  const auto names = barrier_names(problem.barriers);
  nlohmann::json stats = evaluation_json(r, names);
  stats["seed"] = seed;
  write_text(dir / "eval_stats.json", stats.dump(2) + "\n");
  out << stats.dump(2) << "\n";
  return r.min_h_overall >= 0.0 ? kOk : kSafetyViolation;
}

int cmd_verify(const CommonOptions& o, const std::string& controller, const std::string& params_path,
               std::optional<int> rollouts, std::optional<double> epsilon, double scale,
               std::ostream& out) {
  const RunConfig config = resolve(o);
  const ControlProblem problem = build_problem(config);
  SafetyConfig sc;
  sc.num_rollouts = rollouts.value_or(config.verify.num_rollouts);
  sc.epsilon = epsilon.value_or(config.verify.epsilon);
  sc.horizon_steps = config.train.horizon_steps;
  sc.dt = config.train.dt;
  sc.seed = config.train.seed;
  sc.threads = resolve_threads(config.train);

  std::optional<NetworkParams> params;
  ControllerFactory factory;
  if (controller == "zero-nominal") {
    factory = zero_nominal_controller(problem, config.train.qp);
  } else if (controller == "unfiltered") {
    factory = random_unfiltered_controller(problem, scale, config.train.seed);
  } else {
    const fs::path path =
        params_path.empty() ? fs::path(config.output_dir) / "params.json" : fs::path(params_path);
    params = load_params(path);
    if (params->state_dim != problem.system->state_dim()) {
      throw ConfigError("params state dimension does not match task " + config.task);
    }
    factory = network_controller(*params, problem, config.train.qp);
  }
  const SafetyReport rep = monte_carlo_safety(problem, factory, sc);
  const nlohmann::json j = rep.to_json();
  fs::create_directories(config.output_dir);
  write_text(fs::path(config.output_dir) / ("verify_" + controller + ".json"), j.dump(2) + "\n");
  out << j.dump(2) << "\n";
  return rep.violating_rollouts == 0 ? kOk : kSafetyViolation;
}

int cmd_gradcheck(const CommonOptions& o, int steps, double tolerance, double epsilon,
                  std::ostream& out) {
  CommonOptions base = o;
  if (base.task.empty() && base.config.empty()) base.task = "pendulum-balance";
  if (!base.batch) base.batch = 2;
  RunConfig config = resolve(base);
  config.train.horizon_steps = steps;
  config.train.deterministic = true;
  const ControlProblem problem = build_problem(config);
  NoiseStream init(config.train.seed, 0xffff'ffff'ffff'ffffull, 0);
  const NetworkParams params = init_params(init, problem.system->state_dim());
  const Computation comp = training_loss_computation(problem, config.train, params);
  FdSettings fd;
  fd.epsilon = epsilon;
  const FdReport rep = finite_difference_check(comp, params.tensors, fd);
  out << std::left << std::setw(12) << "tensor" << std::right << std::setw(9) << "checked"
      << std::setw(9) << "skipped" << std::setw(14) << "max_rel_err" << std::setw(8) << "worst"
      << std::setw(14) << "analytic" << std::setw(14) << "numeric" << "\n";
  for (const auto& t : rep.tensors) {
    out << std::left << std::setw(12) << t.name << std::right << std::setw(9) << t.checked
        << std::setw(9) << t.skipped << std::scientific << std::setprecision(3) << std::setw(14)
        << t.max_rel_error << std::setw(8) << t.worst_index << std::setw(14) << t.worst_analytic
        << std::setw(14) << t.worst_numeric << std::defaultfloat << "\n";
  }
  out << "max relative error " << std::scientific << rep.max_rel_error << std::defaultfloat
      << " (tolerance " << tolerance << ", " << rep.checked << " checked, " << rep.skipped
      << " skipped)\n";
  return rep.max_rel_error <= tolerance ? kOk : kCheckFailed;
}

int cmd_qp_fuzz(int instances, std::uint64_t seed, double tolerance, std::ostream& out) {
  const QpFuzzReport rep = qp_fuzz(instances, seed, tolerance);
  out << rep.instances << " instances, " << rep.mismatches << " mismatches, max |du|_inf "
      << std::scientific << rep.max_error << std::defaultfloat << ", " << rep.seconds << " s\n";
  return rep.mismatches == 0 ? kOk : kCheckFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Safe FBSDE controller: training, evaluation and safety verification"};
  app.require_subcommand(1);

  CommonOptions common;
  auto* train_cmd = app.add_subcommand("train", "Train a controller");
  add_common(train_cmd, common);

  auto* eval_cmd = app.add_subcommand("evaluate", "Fresh-noise rollouts of a trained controller");
  add_common(eval_cmd, common);
  std::string params_path;
  std::optional<int> rollouts;
  std::optional<std::uint64_t> eval_seed;
  eval_cmd->add_option("--params", params_path, "Parameter manifest (default <output-dir>/params.json)");
  eval_cmd->add_option("--rollouts", rollouts, "Number of rollouts");
  eval_cmd->add_option("--eval-seed", eval_seed, "Evaluation noise seed");

  auto* verify_cmd = app.add_subcommand("verify", "Monte Carlo safety check");
  add_common(verify_cmd, common);
  std::string controller = "zero-nominal";
  std::optional<double> epsilon;
  double scale = 20.0;
  verify_cmd->add_option("--controller", controller, "zero-nominal | unfiltered | network")
      ->check(CLI::IsMember({"zero-nominal", "unfiltered", "network"}));
  verify_cmd->add_option("--params", params_path, "Parameter manifest for --controller network");
  verify_cmd->add_option("--rollouts", rollouts, "Number of rollouts M");
  verify_cmd->add_option("--epsilon", epsilon, "Violation threshold: h < -epsilon");
  verify_cmd->add_option("--scale", scale, "V_x range of the unfiltered controller");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the training gradient");
  add_common(grad_cmd, common);
  int steps = 5;
  double tolerance = 1e-3;
  double fd_eps = 1e-3;
  grad_cmd->add_option("--steps", steps, "Horizon N of the check")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--tolerance", tolerance, "Maximum relative error");
  grad_cmd->add_option("--fd-epsilon", fd_eps, "Relative finite-difference step");

  auto* fuzz_cmd = app.add_subcommand("qp-fuzz", "Compare the QP solver with the brute-force oracle");
  int instances = 1000;
  std::uint64_t fuzz_seed = 0;
  double fuzz_tol = 1e-6;
  fuzz_cmd->add_option("--instances", instances, "Number of random QPs");
  fuzz_cmd->add_option("--seed", fuzz_seed, "Generator seed");
  fuzz_cmd->add_option("--tolerance", fuzz_tol, "Maximum |du|_inf");

  auto* preset_cmd = app.add_subcommand("preset", "Print a task preset as JSON");
  std::string preset_task;
  preset_cmd->add_option("task", preset_task, "Task name")->required()->check(CLI::IsMember(task_names()));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kConfigError;
  }

  try {
    if (*train_cmd) return cmd_train(common, out);
    if (*eval_cmd) return cmd_evaluate(common, params_path, rollouts, eval_seed, out);
    if (*verify_cmd) return cmd_verify(common, controller, params_path, rollouts, epsilon, scale, out);
    if (*grad_cmd) return cmd_gradcheck(common, steps, tolerance, fd_eps, out);
    if (*fuzz_cmd) return cmd_qp_fuzz(instances, fuzz_seed, fuzz_tol, out);
    if (*preset_cmd) {
      out << to_json(preset(preset_task)).dump(2) << "\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const UnsafeStart& e) {
    err << "unsafe start: " << e.what() << "\n";
    return kConfigError;
  } catch (const SafetyViolation& e) {
    err << e.what() << "\n";
    return kSafetyViolation;
  } catch (const InfeasibleProblem& e) {
    err << "infeasible QP: " << e.what() << "\n";
    return kInfeasible;
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const NonFiniteError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kConfigError;
}

}  // namespace safe_fbsde::cli
