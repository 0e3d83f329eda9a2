#include <benchmark/benchmark.h>

#include "safe_fbsde/qp.hpp"
#include "safe_fbsde/qp_check.hpp"
#include "safe_fbsde/task.hpp"
#include "safe_fbsde/trainer.hpp"

using namespace safe_fbsde;

namespace {

void BM_QpSolve(benchmark::State& state) {
  const int n_u = static_cast<int>(state.range(0));
  const int n_q = static_cast<int>(state.range(1));
  NoiseStream rng(1);
  std::vector<QpProblem> problems;
  for (int i = 0; i < 64; ++i) problems.push_back(random_feasible_qp(rng, n_u, n_q));
  std::size_t k = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(solve_qp_pdipm(problems[k++ % problems.size()]));
  }
}
BENCHMARK(BM_QpSolve)->Args({1, 1})->Args({2, 3})->Args({8, 6});

void BM_QpBackward(benchmark::State& state) {
  NoiseStream rng(2);
  const QpProblem p = random_strict_qp(rng, 8, 6);
  const QpSolution s = solve_qp_pdipm(p);
  const Vector w = Vector::Ones(8);
  for (auto _ : state) benchmark::DoNotOptimize(qp_backward(p, s, w));
}
BENCHMARK(BM_QpBackward);

void BM_LstmStep(benchmark::State& state) {
  const int n_x = static_cast<int>(state.range(0));
  NoiseStream rng(3);
  const NetworkParams p = init_params(rng, n_x);
  const Vector x = Vector::Constant(n_x, 0.1);
  for (auto _ : state) {
    Tape tape(state.range(1) != 0);
    RecurrentState st = initial_recurrent_state(tape, p);
    benchmark::DoNotOptimize(predict_vx(tape, p, tape.constant(x), st));
  }
}
BENCHMARK(BM_LstmStep)->Args({2, 0})->Args({2, 1})->Args({16, 1});

void BM_Iteration(benchmark::State& state, const char* task, bool backward) {
  RunConfig run = preset(task);
  run.train.batch_size = 8;
  run.train.deterministic = true;
  const ControlProblem problem = build_problem(run);
  NoiseStream rng(4);
  const NetworkParams p = init_params(rng, problem.system->state_dim());
  for (auto _ : state) {
    if (backward) {
      benchmark::DoNotOptimize(compute_batch_gradient(p, problem, run.train, 0));
    } else {
      benchmark::DoNotOptimize(rollout_batch(p, problem, run.train, 0));
    }
  }
  state.SetItemsProcessed(state.iterations() * run.train.batch_size);
}
BENCHMARK_CAPTURE(BM_Iteration, pendulum_rollout, "pendulum-balance", false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Iteration, pendulum_gradient, "pendulum-balance", true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Iteration, car_multi_gradient, "car-multi", true)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
