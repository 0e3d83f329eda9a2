#include "safe_fbsde/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <sstream>
#include <thread>

#include "parallel.hpp"

namespace safe_fbsde {

// ---------------------------------------------------------------- costs

Vector CostSpec::error(const Vector& x) const {
  Vector e = x - x_goal;
  for (int k : angle_indices) e[k] = std::remainder(e[k], 2.0 * std::numbers::pi);
  return e;
}

double CostSpec::running(const Vector& x) const {
  const Vector e = error(x);
  return e.dot(running_weights.cwiseProduct(e));
}

Vector CostSpec::running_gradient(const Vector& x) const {
  return 2.0 * running_weights.cwiseProduct(error(x));
}

double CostSpec::terminal(const Vector& x) const {
  const Vector e = error(x);
  return e.dot(terminal_weights.cwiseProduct(e));
}

Vector CostSpec::terminal_gradient(const Vector& x) const {
  return 2.0 * terminal_weights.cwiseProduct(error(x));
}

Matrix CostSpec::terminal_hessian(const Vector&) const {
  return Matrix(2.0 * terminal_weights.asDiagonal());
}

void TrainConfig::validate() const {
  if (batch_size < 1 || iterations < 1 || horizon_steps < 1) {
    throw std::invalid_argument("batch_size, iterations and horizon_steps must be >= 1");
  }
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be > 0");
  if (weights.a < 0 || weights.b < 0 || weights.c < 0 || weights.d < 0 || weight_decay < 0) {
    throw std::invalid_argument("loss weights must be >= 0");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
}

int resolve_threads(const TrainConfig& config) {
  if (config.deterministic) return 1;
  if (config.threads > 0) return config.threads;
  if (const char* env = std::getenv("SAFE_FBSDE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

namespace {

constexpr std::uint64_t kEvaluationStreamKey = 0x5afe'e7a1'0000'0000ull;

void check_problem(const ControlProblem& p, const NetworkParams& params) {
  if (!p.system) throw std::invalid_argument("control problem has no system");
  const int n_x = p.system->state_dim();
  if (p.x0.size() != n_x) throw std::invalid_argument("x0 dimension does not match the system");
  if (params.state_dim != n_x) {
    std::ostringstream os;
    os << "network expects n_x=" << params.state_dim << " but the system has n_x=" << n_x;
    throw std::invalid_argument(os.str());
  }
  if (p.cost.x_goal.size() != n_x || p.cost.running_weights.size() != n_x ||
      p.cost.terminal_weights.size() != n_x) {
    throw std::invalid_argument("cost dimensions do not match the system");
  }
  if (p.cost.R.rows() != p.system->control_dim() || p.cost.R.cols() != p.system->control_dim()) {
    throw std::invalid_argument("control cost R must be n_u x n_u");
  }
  if (p.input_scale.size() != 0 && p.input_scale.size() != n_x) {
    throw std::invalid_argument("input_scale must be empty or length n_x");
  }
  for (const auto& b : p.barriers) {
    if (b->state_dim() != n_x) throw std::invalid_argument("barrier " + b->name() + " has wrong n_x");
  }
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

std::string format_state(const Vector& x) {
  std::ostringstream os;
  os.precision(17);
  os << "[";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << "]";
  return os.str();
}

Var scale_input(Tape& tape, Var x, const Vector& scale) {
  if (scale.size() == 0) return x;
  return tape.record1({x}, scale.cwiseProduct(tape.value(x)), [x, scale](Tape& t, NodeOutputs o) {
    t.adjoint(x) += scale.cwiseProduct(t.adjoint(o[0]));
  });
}

// Safe control node: u = argmin Hamiltonian QP at (x, V_x).
Var qp_node(Tape& tape, const ControlProblem& problem, const QpSettings& settings, Var x, Var vx,
            QpStepStats& stats, QpSolution& solution_out) {
  const SystemModel& sys = *problem.system;
  const Vector& xv = tape.value(x);
  const Matrix g = sys.actuation(xv);
  std::vector<ConstraintRow> rows;
  std::vector<double> traces;
  rows.reserve(problem.barriers.size());
  for (const auto& b : problem.barriers) {
    rows.push_back(constraint_row(*b, sys, xv));
    traces.push_back(b->trace_term(xv, sys));
  }
  QpProblem qp = assemble_hamiltonian_qp(problem.cost.R, g, tape.value(vx), rows);
  QpSolution sol;
  try {
    sol = solve_qp_pdipm(qp, settings);
  } catch (const InfeasibleProblem& e) {
    throw InfeasibleProblem(std::string(e.what()) + " at state " + format_state(xv));
  }
  stats = QpStepStats{sol.iterations, sol.residual, sol.polished, sol.converged};
  solution_out = sol;
  Vector u = sol.u;

  const SystemModel* sys_ptr = &sys;
  const BarrierSet* barriers = &problem.barriers;
  const double reg = settings.regularization;
  return tape.record1(
      {x, vx}, std::move(u),
      [sys_ptr, barriers, reg, x, vx, g, qp = std::move(qp), sol = std::move(sol),
       traces = std::move(traces)](Tape& t, NodeOutputs o) {
        const Vector& gu = t.adjoint(o[0]);
        if (gu.isZero(0.0)) return;
        const QpBackward back = qp_backward(qp, sol, gu, reg);
        t.adjoint(vx).noalias() += g * back.grad_q;

        // d/dx of  grad_q . G(x)^T vx + sum_i grad_C_i . c_i(x) + grad_d_i d_i(x)
        const AdVector ax = seed_state(t.value(x));
        const Vector& vxv = t.value(vx);
        const AdMatrix ga = sys_ptr->actuation(ax);
        AdScalar acc = ad_zero(ax.size());
        for (Eigen::Index j = 0; j < ga.cols(); ++j) {
          if (back.grad_q[j] == 0.0) continue;
          for (Eigen::Index i = 0; i < ga.rows(); ++i) acc += back.grad_q[j] * vxv[i] * ga(i, j);
        }
        for (std::size_t b = 0; b < barriers->size(); ++b) {
          const auto bi = static_cast<Eigen::Index>(b);
          if (back.grad_d[bi] == 0.0 && back.grad_C.row(bi).isZero(0.0)) continue;
          const AdConstraintRow row = constraint_row(*(*barriers)[b], *sys_ptr, ax, traces[b]);
          for (Eigen::Index j = 0; j < row.c.size(); ++j) acc += back.grad_C(bi, j) * row.c[j];
          acc += back.grad_d[bi] * row.d;
        }
        t.adjoint(x) += acc.derivatives().head(ax.size());
      });
}

// V' = V - (q(x) + 1/2 u^T R u) dt + V_x^T Sigma dw
Var value_node(Tape& tape, const ControlProblem& problem, Var value, Var x, Var u, Var vx,
               const Vector& dw, double dt) {
  const Vector& xv = tape.value(x);
  const Vector& uv = tape.value(u);
  const Matrix sigma = problem.system->diffusion(xv);
  const Vector sigma_dw = sigma * dw;
  Vector next(1);
  next[0] = tape.scalar(value) -
            (problem.cost.running(xv) + 0.5 * uv.dot(problem.cost.R * uv)) * dt +
            tape.value(vx).dot(sigma_dw);
  const CostSpec* cost = &problem.cost;
  return tape.record1({value, x, u, vx}, std::move(next),
                      [cost, value, x, u, vx, sigma_dw, dt](Tape& t, NodeOutputs o) {
                        const double a = t.adjoint(o[0])[0];
                        t.adjoint(value)[0] += a;
                        t.adjoint(x) -= (a * dt) * cost->running_gradient(t.value(x));
                        t.adjoint(u) -= (a * dt) * (cost->R * t.value(u));
                        t.adjoint(vx) += a * sigma_dw;
                      });
}

// x' = x + (f(x) + G(x) u) dt + Sigma dw
Var sde_node(Tape& tape, const SystemModel& sys, Var x, Var u, const Vector& dw, double dt) {
  Vector next = euler_maruyama_step(sys, tape.value(x), tape.value(u), dt, dw);
  const SystemModel* sys_ptr = &sys;
  return tape.record1({x, u}, std::move(next), [sys_ptr, x, u, dt](Tape& t, NodeOutputs o) {
    const Vector& a = t.adjoint(o[0]);
    const Vector& xv = t.value(x);
    const Vector& uv = t.value(u);
    const AdVector ax = seed_state(xv);
    const AdVector f = sys_ptr->drift(ax);
    const AdMatrix g = sys_ptr->actuation(ax);
    AdScalar acc = ad_zero(ax.size());
    Matrix gv(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      if (a[i] == 0.0) {
        for (Eigen::Index j = 0; j < g.cols(); ++j) gv(i, j) = g(i, j).value();
        continue;
      }
      AdScalar fi = f[i];
      for (Eigen::Index j = 0; j < g.cols(); ++j) {
        fi += g(i, j) * uv[j];
        gv(i, j) = g(i, j).value();
      }
      acc += a[i] * fi;
    }
    t.adjoint(x) += a + dt * acc.derivatives().head(ax.size());
    t.adjoint(u).noalias() += dt * (gv.transpose() * a);
  });
}

struct TerminalTerms {
  double value_gap2;     // (phi - V)^2
  double gradient_gap2;  // |phi_x - V_x|^2
  double phi2;
  double phi_x2;
};

TerminalTerms terminal_terms(const CostSpec& cost, const Vector& x_n, double v_n,
                             const Vector& vx_n) {
  const double phi = cost.terminal(x_n);
  const Vector phi_x = cost.terminal_gradient(x_n);
  return TerminalTerms{(phi - v_n) * (phi - v_n), (phi_x - vx_n).squaredNorm(), phi * phi,
                       phi_x.squaredNorm()};
}

// Per-element loss a(phi - V)^2 + b|phi_x - V_x|^2 + c phi^2 + d |phi_x|^2.
Var terminal_loss_node(Tape& tape, const CostSpec& cost, const LossWeights& w, Var value, Var vx,
                       Var x) {
  const TerminalTerms tt = terminal_terms(cost, tape.value(x), tape.scalar(value), tape.value(vx));
  Vector out(1);
  out[0] = w.a * tt.value_gap2 + w.b * tt.gradient_gap2 + w.c * tt.phi2 + w.d * tt.phi_x2;
  const CostSpec* c = &cost;
  return tape.record1({value, vx, x}, std::move(out), [c, w, value, vx, x](Tape& t, NodeOutputs o) {
    const double s = t.adjoint(o[0])[0];
    const Vector& xv = t.value(x);
    const double phi = c->terminal(xv);
    const Vector phi_x = c->terminal_gradient(xv);
    const double gap = phi - t.scalar(value);
    const Vector grad_gap = phi_x - t.value(vx);
    t.adjoint(value)[0] += s * (-2.0 * w.a * gap);
    t.adjoint(vx) += s * (-2.0 * w.b * grad_gap);
    const Vector dphi_x = 2.0 * w.b * grad_gap + 2.0 * w.d * phi_x;
    t.adjoint(x) += s * ((2.0 * w.a * gap + 2.0 * w.c * phi) * phi_x +
                         c->terminal_hessian(xv).transpose() * dphi_x);
  });
}

struct ElementRollout {
  Trajectory trajectory;
  Var loss;
};

ElementRollout rollout_element(Tape& tape, const NetworkParams& params,
                               const ControlProblem& problem, const TrainConfig& config,
                               NoiseStream& noise) {
  const SystemModel& sys = *problem.system;
  const int n_x = sys.state_dim();
  const int n_u = sys.control_dim();
  const int n_w = sys.noise_dim();
  const int steps = config.horizon_steps;
  const auto n_b = static_cast<Eigen::Index>(problem.barriers.size());
  const double dt = config.dt;

  for (std::size_t b = 0; b < problem.barriers.size(); ++b) {
    const double h0 = problem.barriers[b]->value(problem.x0);
    if (h0 < 0.0) {
      std::ostringstream os;
      os << "initial state " << format_state(problem.x0) << " is outside the safe set of barrier "
         << problem.barriers[b]->name() << " (h=" << h0 << ")";
      throw UnsafeStart(os.str());
    }
  }

  Trajectory tr;
  tr.states.resize(steps + 1, n_x);
  tr.controls.resize(steps, n_u);
  tr.values.resize(steps + 1);
  tr.vx.resize(steps, n_x);
  tr.noises.resize(steps, n_w);
  tr.barrier_values.resize(steps + 1, n_b);
  tr.qp.resize(static_cast<std::size_t>(steps));

  auto record_barriers = [&](int row, const Vector& xv) {
    for (Eigen::Index b = 0; b < n_b; ++b) {
      tr.barrier_values(row, b) = problem.barriers[static_cast<std::size_t>(b)]->value(xv);
    }
  };

  RecurrentState state = initial_recurrent_state(tape, params);
  Var value = tape.parameter(params.tensors, NetworkParams::kPsi);
  Var x = tape.constant(problem.x0);
  tr.states.row(0) = problem.x0.transpose();
  tr.values[0] = tape.scalar(value);
  record_barriers(0, problem.x0);

  std::uint64_t signature = 0x243f6a8885a308d3ull;
  for (int t = 0; t < steps; ++t) {
    const VxPrediction pred =
        predict_vx(tape, params, scale_input(tape, x, problem.input_scale), state);
    state = pred.state;
    QpSolution sol;
    const Var u = qp_node(tape, problem, config.qp, x, pred.vx, tr.qp[static_cast<std::size_t>(t)], sol);
    tr.degenerate_qp = tr.degenerate_qp || is_degenerate(sol);
    signature = mix(signature, active_set_mask(sol));

    const Vector dw = noise.sample(n_w, dt);
    value = value_node(tape, problem, value, x, u, pred.vx, dw, dt);
    x = sde_node(tape, sys, x, u, dw, dt);

    tr.vx.row(t) = tape.value(pred.vx).transpose();
    tr.controls.row(t) = tape.value(u).transpose();
    tr.noises.row(t) = dw.transpose();
    tr.states.row(t + 1) = tape.value(x).transpose();
    tr.values[t + 1] = tape.scalar(value);
    record_barriers(t + 1, tape.value(x));
  }
  tr.active_signature = signature;

  const VxPrediction terminal =
      predict_vx(tape, params, scale_input(tape, x, problem.input_scale), state);
  tr.vx_terminal = tape.value(terminal.vx);
  const Var loss =
      terminal_loss_node(tape, problem.cost, config.weights, value, terminal.vx, x);
  return ElementRollout{std::move(tr), loss};
}

double weight_decay_norm(const NetworkParams& params) {
  double sum = 0.0;
  for (const auto& t : params.tensors) {
    if (t.weight_decay) sum += t.value.squaredNorm();
  }
  return sum;
}

}  // namespace

RolloutRecord rollout_batch(const NetworkParams& params, const ControlProblem& problem,
                            const TrainConfig& config, std::uint64_t iteration) {
  config.validate();
  check_problem(problem, params);
  RolloutRecord record;
  record.trajectories.resize(static_cast<std::size_t>(config.batch_size));
  detail::parallel_for(record.trajectories.size(), resolve_threads(config), [&](std::size_t i) {
    Tape tape(false);
    NoiseStream noise(config.seed, iteration, i);
    record.trajectories[i] = rollout_element(tape, params, problem, config, noise).trajectory;
  });
  return record;
}

LossBreakdown compute_loss(const RolloutRecord& record, const CostSpec& cost,
                           const LossWeights& weights, double weight_decay,
                           const NetworkParams& params) {
  LossBreakdown out;
  const auto m = static_cast<double>(record.trajectories.size());
  for (const auto& tr : record.trajectories) {
    const int n = tr.horizon();
    const TerminalTerms tt =
        terminal_terms(cost, tr.states.row(n).transpose(), tr.values[n], tr.vx_terminal);
    out.value_term += tt.value_gap2 / m;
    out.gradient_term += tt.gradient_gap2 / m;
    out.terminal_value_term += tt.phi2 / m;
    out.terminal_gradient_term += tt.phi_x2 / m;
  }
  out.weight_decay_term = weight_decay_norm(params);
  out.total = weights.a * out.value_term + weights.b * out.gradient_term +
              weights.c * out.terminal_value_term + weights.d * out.terminal_gradient_term +
              weight_decay * out.weight_decay_term;
  return out;
}

BatchGradient compute_batch_gradient(const NetworkParams& params, const ControlProblem& problem,
                                     const TrainConfig& config, std::uint64_t iteration) {
  config.validate();
  check_problem(problem, params);
  const auto m = static_cast<std::size_t>(config.batch_size);
  std::vector<GradientSet> element_grads(m);
  BatchGradient out;
  out.record.trajectories.resize(m);

  detail::parallel_for(m, resolve_threads(config), [&](std::size_t i) {
    Tape tape(true);
    NoiseStream noise(config.seed, iteration, i);
    ElementRollout er = rollout_element(tape, params, problem, config, noise);
    element_grads[i] = params.tensors.zeros_like();
    tape.backward(er.loss, 1.0 / static_cast<double>(m), element_grads[i]);
    out.record.trajectories[i] = std::move(er.trajectory);
  });

  // Fixed-order reduction keeps the result independent of the thread count.
  out.grads = params.tensors.zeros_like();
  for (const auto& g : element_grads) out.grads.add_scaled(g, 1.0);
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    if (params.tensors[k].weight_decay) {
      out.grads[k].value += 2.0 * config.weight_decay * params.tensors[k].value;
    }
  }
  out.loss = compute_loss(out.record, problem.cost, config.weights, config.weight_decay, params);
  return out;
}

AdamState make_adam_state(const NetworkParams& params) {
  return AdamState{params.tensors.zeros_like(), params.tensors.zeros_like(), 0};
}

void adam_step(NetworkParams& params, const GradientSet& grads, AdamState& state,
               double learning_rate, const AdamConfig& adam) {
  if (!grads.same_layout(params.tensors) || !state.m.same_layout(params.tensors)) {
    throw std::invalid_argument("adam_step: layout mismatch");
  }
  for (const auto& g : grads) {
    if (!g.value.allFinite()) throw NonFiniteError("non-finite gradient for tensor " + g.name);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(adam.beta1, state.step);
  const double bc2 = 1.0 - std::pow(adam.beta2, state.step);
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    const Matrix& g = grads[k].value;
    Matrix& m = state.m[k].value;
    Matrix& v = state.v[k].value;
    m = adam.beta1 * m + (1.0 - adam.beta1) * g;
    v = adam.beta2 * v + (1.0 - adam.beta2) * g.cwiseProduct(g);
    params.tensors[k].value.array() -=
        learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + adam.epsilon);
  }
}

QpAggregate aggregate_qp_stats(const RolloutRecord& record) {
  QpAggregate agg;
  double iters = 0.0;
  std::size_t polished = 0;
  for (const auto& tr : record.trajectories) {
    for (const auto& s : tr.qp) {
      ++agg.solves;
      iters += s.iterations;
      agg.max_iterations = std::max(agg.max_iterations, s.iterations);
      agg.max_residual = std::max(agg.max_residual, s.residual);
      polished += s.polished ? 1 : 0;
    }
  }
  if (agg.solves) {
    agg.mean_iterations = iters / static_cast<double>(agg.solves);
    agg.polished_fraction = static_cast<double>(polished) / static_cast<double>(agg.solves);
  }
  return agg;
}

TrainResult train(const ControlProblem& problem, const TrainConfig& config,
                  const IterationCallback& on_iteration, std::optional<NetworkParams> initial) {
  config.validate();
  TrainResult result;
  if (initial) {
    result.params = std::move(*initial);
  } else {
    NoiseStream init_stream(config.seed, 0xffff'ffff'ffff'ffffull, 0);
    result.params = init_params(init_stream, problem.system->state_dim());
  }
  check_problem(problem, result.params);
  AdamState adam = make_adam_state(result.params);
  const auto n_b = static_cast<int>(problem.barriers.size());
  result.worst.resize(static_cast<std::size_t>(n_b));

  for (int k = 0; k < config.iterations; ++k) {
    BatchGradient bg = compute_batch_gradient(result.params, problem, config, static_cast<std::uint64_t>(k));
    result.trajectories += bg.record.trajectories.size();

    IterationLog entry;
    entry.iteration = k;
    entry.loss = bg.loss;
    entry.qp = aggregate_qp_stats(bg.record);
    entry.psi = result.params.psi();
    entry.min_h.resize(static_cast<std::size_t>(n_b));
    int violated = -1;
    for (int b = 0; b < n_b; ++b) {
      const WorstCase wc = worst_case_extract(bg.record.trajectories, b);
      entry.min_h[static_cast<std::size_t>(b)] = wc.min_h;
      auto& best = result.worst[static_cast<std::size_t>(b)];
      if (best.iteration < 0 || wc.min_h < best.where.min_h) {
        best.iteration = k;
        best.where = wc;
        best.trajectory = bg.record.trajectories[wc.index];
      }
      if (wc.min_h < 0.0 && violated < 0) violated = b;
    }
    if (violated >= 0) {
      const WorstCase& wc = result.worst[static_cast<std::size_t>(violated)].where;
      const Trajectory& tr = bg.record.trajectories[wc.index];
      std::ostringstream os;
      os << "safety violation: barrier "
         << problem.barriers[static_cast<std::size_t>(violated)]->name() << " reached h="
         << wc.min_h << " at iteration " << k << ", batch element " << wc.index << ", step "
         << wc.step << ", state " << format_state(tr.states.row(wc.step).transpose());
      if (on_iteration) on_iteration(entry);
      result.log.push_back(entry);
      throw TrainingSafetyViolation(os.str(), std::move(result));
    }
    if (on_iteration) on_iteration(entry);
    result.log.push_back(entry);
    adam_step(result.params, bg.grads, adam, config.learning_rate, config.adam);
  }
  return result;
}

EvaluationResult evaluate(const NetworkParams& params, const ControlProblem& problem,
                          const TrainConfig& config, int num_rollouts, std::uint64_t seed) {
  if (num_rollouts < 1) throw std::invalid_argument("evaluate: num_rollouts must be >= 1");
  check_problem(problem, params);
  EvaluationResult out;
  out.trajectories.resize(static_cast<std::size_t>(num_rollouts));
  detail::parallel_for(out.trajectories.size(), resolve_threads(config), [&](std::size_t i) {
    Tape tape(false);
    NoiseStream noise(seed, kEvaluationStreamKey, i);
    out.trajectories[i] = rollout_element(tape, params, problem, config, noise).trajectory;
  });

  const auto m = static_cast<double>(num_rollouts);
  const auto& first = out.trajectories.front();
  out.mean_states = Matrix::Zero(first.states.rows(), first.states.cols());
  out.mean_controls = Matrix::Zero(first.controls.rows(), first.controls.cols());
  out.mean_values = Vector::Zero(first.values.size());
  Matrix second = out.mean_states;
  const int n = first.horizon();
  const int n_x = static_cast<int>(first.states.cols());
  out.terminal_error_mean = Vector::Zero(n_x);
  Vector err2 = Vector::Zero(n_x);
  out.terminal_error_abs_mean = Vector::Zero(n_x);
  out.min_h = Vector::Constant(first.barrier_values.cols(), std::numeric_limits<double>::infinity());
  for (const auto& tr : out.trajectories) {
    out.mean_states += tr.states / m;
    second += tr.states.cwiseProduct(tr.states) / m;
    out.mean_controls += tr.controls / m;
    out.mean_values += tr.values / m;
    const Vector e = problem.cost.error(tr.states.row(n).transpose());
    out.terminal_error_mean += e / m;
    err2 += e.cwiseProduct(e) / m;
    out.terminal_error_abs_mean += e.cwiseAbs() / m;
    for (Eigen::Index b = 0; b < tr.barrier_values.cols(); ++b) {
      out.min_h[b] = std::min(out.min_h[b], tr.barrier_values.col(b).minCoeff());
    }
  }
  out.std_states =
      (second - out.mean_states.cwiseProduct(out.mean_states)).cwiseMax(0.0).cwiseSqrt();
  out.terminal_error_std =
      (err2 - out.terminal_error_mean.cwiseProduct(out.terminal_error_mean)).cwiseMax(0.0).cwiseSqrt();
  out.min_h_overall = out.min_h.size() ? out.min_h.minCoeff() : std::numeric_limits<double>::infinity();
  return out;
}

Computation training_loss_computation(const ControlProblem& problem, const TrainConfig& config,
                                      const NetworkParams& layout, std::uint64_t iteration) {
  auto with = [layout](const ParameterSet& tensors) {
    NetworkParams p = layout;
    p.tensors = tensors;
    return p;
  };
  Computation c;
  c.value = [=, &problem](const ParameterSet& t) {
    const NetworkParams p = with(t);
    const RolloutRecord r = rollout_batch(p, problem, config, iteration);
    return compute_loss(r, problem.cost, config.weights, config.weight_decay, p).total;
  };
  c.gradient = [=, &problem](const ParameterSet& t) {
    return compute_batch_gradient(with(t), problem, config, iteration).grads;
  };
  c.signature = [=, &problem](const ParameterSet& t) {
    const RolloutRecord r = rollout_batch(with(t), problem, config, iteration);
    std::uint64_t h = 0;
    for (const auto& tr : r.trajectories) h = mix(h, tr.active_signature);
    return h;
  };
  return c;
}

}  // namespace safe_fbsde
