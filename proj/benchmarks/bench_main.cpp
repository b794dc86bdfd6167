// Microbenchmarks for the hot paths: the dense conv kernels, one full
// network step, and one BPTT pass over a short closed-loop unroll.

#include <benchmark/benchmark.h>

#include "pvmdnn/rng.hpp"
#include "pvmdnn/trainer.hpp"

using namespace pvmdnn;

namespace {

void fill(Rng& rng, std::span<double> v) {
  for (double& x : v) x = rng.next_uniform(-1.0, 1.0);
}

Parameters bench_params(const NetworkConfig& cfg, int nseq) {
  Parameters p = init_params(cfg, 42, nseq);
  Rng rng(43);
  for (auto& st : p.initial_states) {
    for (auto& r : state_refs(st)) fill(rng, {r.data, r.size});
  }
  return p;
}

void BM_ConvValidFastLevel(benchmark::State& state) {
  // image -> fast maps, the largest single convolution in the published stack
  Rng rng(1);
  MapStack in(1, 48, 64);
  Kernel4 k(4, 1, 5, 5, 1, 1);
  fill(rng, in.data);
  fill(rng, k.data);
  MapStack out(4, 44, 60);
  for (auto _ : state) {
    out.fill(0.0);
    conv_valid_acc(out, in, k);
    benchmark::DoNotOptimize(out.data.data());
  }
}
BENCHMARK(BM_ConvValidFastLevel);

void BM_ConvTransposedMidToFast(benchmark::State& state) {
  Rng rng(2);
  MapStack in(8, 21, 29);
  Kernel4 k(8, 4, 4, 4, 2, 2);
  fill(rng, in.data);
  fill(rng, k.data);
  MapStack out(4, 44, 60);
  for (auto _ : state) {
    out.fill(0.0);
    conv_transposed_acc(out, in, k);
    benchmark::DoNotOptimize(out.data.data());
  }
}
BENCHMARK(BM_ConvTransposedMidToFast);

void BM_ForwardStep(benchmark::State& state) {
  const NetworkConfig cfg = state.range(0) == 0 ? desk_config() : table1_config();
  Parameters p = bench_params(cfg, 1);
  Rng rng(3);
  MapStack v_in(1, cfg.image_height, cfg.image_width);
  fill(rng, v_in.data);
  std::vector<double> u(cfg.code_len(), 0.0);
  fill(rng, u);
  const auto p_in = softmax_groups(u, cfg.units_per_group);

  LayerState prev = LayerState::from_initial(cfg, p.initial_states[0]);
  LayerState next = prev;
  MapStack v_out;
  std::vector<double> p_out;
  int t = 1;
  for (auto _ : state) {
    forward_step(cfg, p, prev, v_in, p_in, next, v_out, p_out, t++);
    std::swap(prev, next);
    benchmark::DoNotOptimize(v_out.data.data());
  }
}
BENCHMARK(BM_ForwardStep)->Arg(0)->Arg(1)->ArgNames({"table1"});

void BM_BpttWindow(benchmark::State& state) {
  // forward + backward over a 10-step closed-loop window (desk topology),
  // parameter gradients included
  const NetworkConfig cfg = desk_config();
  Parameters p = bench_params(cfg, 1);
  Rng rng(4);
  MapStack first_v(1, cfg.image_height, cfg.image_width);
  fill(rng, first_v.data);
  std::vector<double> u(cfg.code_len(), 0.0);
  fill(rng, u);
  const auto first_p = softmax_groups(u, cfg.units_per_group);

  const int steps = 10;
  std::vector<MapStack> targets_v;
  std::vector<std::vector<double>> targets_p;
  for (int t = 0; t < steps; ++t) {
    MapStack f(1, cfg.image_height, cfg.image_width);
    fill(rng, f.data);
    targets_v.push_back(std::move(f));
    std::vector<double> q(cfg.code_len(), 0.0);
    fill(rng, q);
    targets_p.push_back(softmax_groups(q, cfg.units_per_group));
  }

  std::vector<StepInput> inputs(steps);
  inputs[0] = {&first_v, &first_p};
  TargetsView tv;
  for (int t = 0; t < steps; ++t) {
    tv.v_targets.push_back(&targets_v[t]);
    tv.p_targets.push_back(&targets_p[t]);
  }

  Unroll roll;
  Parameters grads = zero_params(cfg, 0);
  HiddenState gu0 = HiddenState::zeros(cfg);
  for (auto _ : state) {
    rollout(cfg, p, p.initial_states[0], inputs, roll);
    for (auto& r : tensor_refs(grads, cfg)) std::fill_n(r.data, r.size, 0.0);
    gu0.set_zero();
    backward(cfg, p, roll, tv, &grads, &gu0);
    benchmark::DoNotOptimize(gu0.vf.data.data());
  }
}
BENCHMARK(BM_BpttWindow)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
