// Serial vs OpenMP batch kernels on a CopyReverse TinyMLP batch.
#include <benchmark/benchmark.h>

#include "occlab/kernels.hpp"
#include "occlab/rollout.hpp"
#include "occlab/surrogate.hpp"
#include "occlab/tasks.hpp"

using namespace occlab;

namespace {

struct Fixture {
  ModelConfig model;
  Task task = make_copy_reverse(16, 3);
  ParamVector params;
  RolloutBatch batch;

  explicit Fixture(std::size_t b) {
    model.backend = Backend::TinyMLP;
    model.hidden_dim = 64;
    params = init_params(model, 1);
    Rng rng(7);
    batch = collect_rollouts(params, model, task, b, 8, 1.0, rng);
  }
};

Exec exec_of(const benchmark::State& state) {
  return state.range(1) ? Exec::Parallel : Exec::Serial;
}

void BM_Forward(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  const auto idx = f.batch.all_indices();
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::forward_batch(f.params, f.model, f.batch, idx, exec_of(state)));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Gradients(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  const auto idx = f.batch.all_indices();
  const Objective objs[] = {Objective::Rl, Objective::MtpPolicy};
  for (auto _ : state) {
    benchmark::DoNotOptimize(objective_gradients(f.params, f.model, f.batch, idx, objs, AlgoConfig{},
                                                 Estimator::Surrogate, exec_of(state)));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Rollouts(benchmark::State& state) {
  const Fixture f(8);
  for (auto _ : state) {
    Rng rng(3);
    benchmark::DoNotOptimize(collect_rollouts(f.params, f.model, f.task,
                                              static_cast<std::size_t>(state.range(0)), 8, 1.0,
                                              rng, exec_of(state)));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_Forward)->ArgsProduct({{64, 512}, {0, 1}});
BENCHMARK(BM_Gradients)->ArgsProduct({{64, 512}, {0, 1}});
BENCHMARK(BM_Rollouts)->ArgsProduct({{64, 512}, {0, 1}});

BENCHMARK_MAIN();
