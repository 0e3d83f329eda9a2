#include <cmath>
#include <numbers>

#include <Eigen/LU>
#include <gtest/gtest.h>

#include "safe_fbsde/gradcheck.hpp"
#include "safe_fbsde/task.hpp"
#include "safe_fbsde/trainer.hpp"

using namespace safe_fbsde;

namespace {

constexpr double kPi = std::numbers::pi;

struct Fixture {
  RunConfig run;
  ControlProblem problem;
  NetworkParams params;
};

Fixture pendulum_setup(int batch, int steps) {
  Fixture s;
  s.run = preset("pendulum-balance");
  s.run.train.batch_size = batch;
  s.run.train.horizon_steps = steps;
  s.run.train.deterministic = true;
  s.problem = build_problem(s.run);
  NoiseStream init(7);
  s.params = init_params(init, 2);
  return s;
}

}  // namespace

TEST(Cost, WrapsAngles) {
  CostSpec c;
  c.x_goal = Eigen::Vector2d(kPi, 0.0);
  c.running_weights = Eigen::Vector2d(1.0, 1.0);
  c.terminal_weights = Eigen::Vector2d(2.0, 1.0);
  c.R = Matrix::Identity(1, 1);
  c.angle_indices = {0};
  EXPECT_NEAR(c.error(Eigen::Vector2d(-kPi + 0.1, 0.0))[0], 0.1, 1e-12);
  EXPECT_NEAR(c.terminal(Eigen::Vector2d(3 * kPi, 0.0)), 0.0, 1e-20);
}

TEST(Cost, TerminalGradientAndHessianMatchDifferences) {
  CostSpec c;
  c.x_goal = Eigen::Vector4d(0.0, kPi, 0.0, 0.0);
  c.running_weights = Eigen::Vector4d(0.1, 2.0, 0.05, 0.05);
  c.terminal_weights = Eigen::Vector4d(1.0, 20.0, 0.5, 0.5);
  c.R = Matrix::Identity(1, 1);
  c.angle_indices = {1};
  NoiseStream rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Vector x(4);
    for (auto& v : x) v = rng.uniform(-2.0, 2.0);
    const Vector g = c.terminal_gradient(x);
    const Vector gr = c.running_gradient(x);
    const Matrix H = c.terminal_hessian(x);
    for (int j = 0; j < 4; ++j) {
      Vector xp = x, xm = x;
      xp[j] += 1e-6;
      xm[j] -= 1e-6;
      EXPECT_NEAR(g[j], (c.terminal(xp) - c.terminal(xm)) / 2e-6, 1e-6 * (1 + std::abs(g[j])));
      EXPECT_NEAR(gr[j], (c.running(xp) - c.running(xm)) / 2e-6, 1e-6 * (1 + std::abs(gr[j])));
      const Vector hcol = (c.terminal_gradient(xp) - c.terminal_gradient(xm)) / 2e-6;
      EXPECT_TRUE(hcol.isApprox(H.col(j), 1e-6));
    }
  }
}

TEST(Rollout, RecordsStartNoiseAndShapes) {
  Fixture s = pendulum_setup(3, 12);
  const RolloutRecord rec = rollout_batch(s.params, s.problem, s.run.train, 5);
  ASSERT_EQ(rec.trajectories.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const Trajectory& tr = rec.trajectories[i];
    EXPECT_EQ(tr.states.rows(), 13);
    EXPECT_EQ(tr.controls.rows(), 12);
    EXPECT_TRUE(tr.states.row(0).transpose().isApprox(s.problem.x0));
    EXPECT_EQ(tr.values[0], s.params.psi());
    NoiseStream expected(s.run.train.seed, 5, i);
    for (int t = 0; t < 12; ++t) {
      EXPECT_EQ(tr.noises.row(t).transpose(), expected.sample(2, s.run.train.dt));
    }
  }
  // Same iteration, same noise; another iteration, different noise.
  const RolloutRecord again = rollout_batch(s.params, s.problem, s.run.train, 5);
  EXPECT_EQ(again.trajectories[1].states, rec.trajectories[1].states);
  const RolloutRecord other = rollout_batch(s.params, s.problem, s.run.train, 6);
  EXPECT_NE(other.trajectories[1].noises, rec.trajectories[1].noises);
}

TEST(Rollout, ValuePathTelescopes) {
  Fixture s = pendulum_setup(2, 20);
  s.params.tensors[NetworkParams::kPsi].value(0, 0) = 0.3;
  const RolloutRecord rec = rollout_batch(s.params, s.problem, s.run.train, 0);
  const CostSpec& c = s.problem.cost;
  for (const auto& tr : rec.trajectories) {
    double v = 0.3;
    for (int t = 0; t < tr.horizon(); ++t) {
      const Vector x = tr.states.row(t).transpose();
      const Vector u = tr.controls.row(t).transpose();
      const Vector dw = tr.noises.row(t).transpose();
      v += -(c.running(x) + 0.5 * u.dot(c.R * u)) * s.run.train.dt +
           tr.vx.row(t).dot(s.problem.system->diffusion(x) * dw);
      EXPECT_NEAR(tr.values[t + 1], v, 1e-10 * (1 + std::abs(v)));
    }
  }
}

TEST(Rollout, StatesFollowEulerMaruyama) {
  Fixture s = pendulum_setup(1, 15);
  const Trajectory tr = rollout_batch(s.params, s.problem, s.run.train, 2).trajectories[0];
  for (int t = 0; t < tr.horizon(); ++t) {
    const Vector next = euler_maruyama_step(*s.problem.system, tr.states.row(t).transpose(),
                                            tr.controls.row(t).transpose(), s.run.train.dt,
                                            tr.noises.row(t).transpose());
    EXPECT_TRUE(next.isApprox(tr.states.row(t + 1).transpose(), 1e-14));
  }
}

TEST(Rollout, UnsafeStartIsRejected) {
  Fixture s = pendulum_setup(1, 5);
  s.problem.x0 = Eigen::Vector2d(0.0, 0.0);
  EXPECT_THROW(rollout_batch(s.params, s.problem, s.run.train, 0), UnsafeStart);
}

TEST(Loss, MatchesHandFormulaAndIsNonNegative) {
  Fixture s = pendulum_setup(4, 10);
  const RolloutRecord rec = rollout_batch(s.params, s.problem, s.run.train, 0);
  const LossWeights w{1.0, 1.0, 0.01, 0.01};
  const LossBreakdown l = compute_loss(rec, s.problem.cost, w, 1e-5, s.params);
  double expected = 0.0;
  for (const auto& tr : rec.trajectories) {
    const Vector xn = tr.states.row(tr.horizon()).transpose();
    const double phi = s.problem.cost.terminal(xn);
    const Vector phi_x = s.problem.cost.terminal_gradient(xn);
    expected += (std::pow(phi - tr.values[tr.horizon()], 2) +
                 (phi_x - tr.vx_terminal).squaredNorm() + 0.01 * phi * phi +
                 0.01 * phi_x.squaredNorm()) /
                4.0;
  }
  double decay = 0.0;
  for (const auto& t : s.params.tensors) {
    if (t.weight_decay) decay += t.value.squaredNorm();
  }
  EXPECT_NEAR(l.total, expected + 1e-5 * decay, 1e-12 * (1 + expected));
  EXPECT_GE(l.value_term, 0.0);
  EXPECT_GE(l.gradient_term, 0.0);
  EXPECT_GE(l.total, 0.0);

  const BatchGradient bg = compute_batch_gradient(s.params, s.problem, s.run.train, 0);
  EXPECT_NEAR(bg.loss.total, l.total, 1e-12 * (1 + l.total));
}

TEST(Gradient, MatchesFiniteDifferences) {
  Fixture s = pendulum_setup(1, 3);
  const Computation c = training_loss_computation(s.problem, s.run.train, s.params, 0);
  FdSettings fd;
  fd.epsilon = 1e-3;
  const FdReport rep = finite_difference_check(c, s.params.tensors, fd);
  EXPECT_GT(rep.checked, s.params.tensors.num_scalars() / 2);
  EXPECT_LE(rep.max_rel_error, 1e-3);
}

TEST(Gradient, MatchesFiniteDifferencesWithActiveFilter) {
  // Start close to the lower bound and moving towards it so the safety
  // constraint binds along the rollout.
  Fixture s = pendulum_setup(2, 5);
  s.problem.x0 = Eigen::Vector2d(2 * kPi / 3 + 0.3, -1.0);
  const RolloutRecord rec = rollout_batch(s.params, s.problem, s.run.train, 0);
  int filtered = 0;
  for (const auto& tr : rec.trajectories) {
    for (int t = 0; t < tr.horizon(); ++t) {
      const Vector x = tr.states.row(t).transpose();
      const Vector nominal = -s.problem.cost.R.inverse() *
                             s.problem.system->actuation(x).transpose() * tr.vx.row(t).transpose();
      filtered += (tr.controls.row(t).transpose() - nominal).norm() > 1e-6;
    }
  }
  ASSERT_GT(filtered, 0);

  const Computation c = training_loss_computation(s.problem, s.run.train, s.params, 0);
  FdSettings fd;
  fd.epsilon = 1e-3;
  const FdReport rep = finite_difference_check(c, s.params.tensors, fd);
  EXPECT_GT(rep.checked, s.params.tensors.num_scalars() / 2);
  EXPECT_LE(rep.max_rel_error, 1e-3);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Fixture s = pendulum_setup(1, 1);
  NetworkParams p = s.params;
  AdamState st = make_adam_state(p);
  adam_step(p, p.tensors.zeros_like(), st, 1e-2, {});
  EXPECT_EQ(p.tensors.flatten(), s.params.tensors.flatten());
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, ConstantGradientStepsByLearningRate) {
  ParameterSet ps;
  ps.add("w", Matrix::Constant(2, 1, 1.0), false);
  NetworkParams p;
  p.tensors = ps;
  AdamState st{ps.zeros_like(), ps.zeros_like(), 0};
  GradientSet g = ps.zeros_like();
  g[0].value << 3.0, -0.5;
  for (int k = 1; k <= 5; ++k) {
    adam_step(p, g, st, 0.1, {});
    // Bias-corrected moments of a constant gradient are exact.
    EXPECT_NEAR(p.tensors[0].value(0, 0), 1.0 - 0.1 * k, 1e-7);
    EXPECT_NEAR(p.tensors[0].value(1, 0), 1.0 + 0.1 * k, 1e-7);
  }
  g[0].value(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam_step(p, g, st, 0.1, {}), NonFiniteError);
}

TEST(Train, ShortRunLogsEveryIteration) {
  Fixture s = pendulum_setup(4, 10);
  s.run.train.iterations = 3;
  int calls = 0;
  const TrainResult r = train(s.problem, s.run.train, [&](const IterationLog&) { ++calls; });
  EXPECT_EQ(calls, 3);
  ASSERT_EQ(r.log.size(), 3u);
  EXPECT_EQ(r.trajectories, 12u);
  EXPECT_EQ(r.worst.size(), s.problem.barriers.size());
  for (const auto& e : r.log) {
    EXPECT_TRUE(std::isfinite(e.loss.total));
    EXPECT_GE(e.min_h[0], 0.0);
  }
  EXPECT_NE(r.log.back().psi, 0.0);
}

TEST(Train, ThreadCountDoesNotChangeResult) {
  Fixture s = pendulum_setup(4, 10);
  s.run.train.iterations = 2;
  const TrainResult a = train(s.problem, s.run.train);
  s.run.train.deterministic = false;
  s.run.train.threads = 3;
  const TrainResult b = train(s.problem, s.run.train);
  EXPECT_EQ(a.params.tensors.flatten(), b.params.tensors.flatten());
}

TEST(Train, ConfigValidation) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.dt = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Evaluate, SummariesAreConsistent) {
  Fixture s = pendulum_setup(4, 15);
  const EvaluationResult e = evaluate(s.params, s.problem, s.run.train, 6, 3);
  ASSERT_EQ(e.trajectories.size(), 6u);
  Vector mean_last = Vector::Zero(2);
  for (const auto& tr : e.trajectories) mean_last += tr.states.row(15).transpose() / 6.0;
  EXPECT_TRUE(e.mean_states.row(15).transpose().isApprox(mean_last, 1e-12));
  EXPECT_LE(e.min_h_overall, e.min_h.minCoeff() + 1e-15);
  EXPECT_GE(e.terminal_error_abs_mean.minCoeff(), 0.0);
}

TEST(Train, PendulumPresetLossDecreases) {
  RunConfig run = preset("pendulum-balance");
  run.train.deterministic = true;
  const TrainResult r = train(build_problem(run), run.train);
  ASSERT_EQ(r.log.size(), 201u);
  double head = 0.0, tail = 0.0;
  for (int k = 0; k < 20; ++k) {
    head += r.log[static_cast<std::size_t>(k)].loss.total / 20.0;
    tail += r.log[r.log.size() - 20 + static_cast<std::size_t>(k)].loss.total / 20.0;
  }
  EXPECT_LT(tail, head);
}
