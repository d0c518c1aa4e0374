// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "lorasched/inter_sched.hpp"
#include "lorasched/lora_check.hpp"
#include "lorasched/lora_math.hpp"
#include "lorasched/rng.hpp"
#include "lorasched/simulator.hpp"
#include "lorasched/suites.hpp"

using namespace lorasched;

namespace {

inter::SchedInstance eleven_tasks(std::uint64_t seed) {
    Rng rng(seed);
    const int gs[] = {4, 4, 4, 2, 2, 2, 1, 1, 1, 1, 1};
    inter::SchedInstance inst{8, {}, {}};
    for (int i = 0; i < 11; ++i) inst.tasks.push_back({i, inter::to_micros(rng.uniform(1800, 21600)), gs[i]});
    return inst;
}

void BM_SolveExactEleven(benchmark::State& state) {
    std::uint64_t seed = 0;
    for (auto _ : state) {
        const auto inst = eleven_tasks(seed++ % 16);
        benchmark::DoNotOptimize(inter::solve_exact(inst));
    }
}
BENCHMARK(BM_SolveExactEleven)->Unit(benchmark::kMillisecond);

void BM_SolveSjfEleven(benchmark::State& state) {
    const auto inst = eleven_tasks(1);
    for (auto _ : state) benchmark::DoNotOptimize(inter::solve_sjf(inst));
}
BENCHMARK(BM_SolveSjfEleven);

void BM_GroupedForward(benchmark::State& state) {
    const auto adapters = static_cast<std::size_t>(state.range(0));
    std::vector<std::size_t> ranks, tokens;
    for (std::size_t i = 0; i < adapters; ++i) {
        ranks.push_back(16u << (i % 3));
        tokens.push_back(64);
    }
    Rng rng(3);
    const auto spec = lora::random_spec<double>(ranks, tokens, 256, 256, rng);
    const auto X = lora::random_matrix<double>(spec.total_tokens(), 256, rng);
    for (auto _ : state) benchmark::DoNotOptimize(lora::grouped_forward(spec, X));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(spec.total_tokens()));
}
BENCHMARK(BM_GroupedForward)->Arg(1)->Arg(4)->Arg(16);

void BM_GroupedBackward(benchmark::State& state) {
    const std::vector<std::size_t> ranks = {16, 32, 64, 16}, tokens = {64, 64, 64, 64};
    Rng rng(4);
    const auto spec = lora::random_spec<double>(ranks, tokens, 256, 256, rng);
    const auto X = lora::random_matrix<double>(spec.total_tokens(), 256, rng);
    const auto fwd = lora::grouped_forward(spec, X);
    for (auto _ : state) benchmark::DoNotOptimize(lora::grouped_backward(spec, fwd.cache, fwd.Y));
}
BENCHMARK(BM_GroupedBackward);

void BM_SimulateCluster(benchmark::State& state) {
    const auto w = sim::cluster_workload(0);
    const auto c = sim::eight_gpu_cluster();
    for (auto _ : state) benchmark::DoNotOptimize(sim::run(w, c, {true, true, true}, 0));
}
BENCHMARK(BM_SimulateCluster)->Unit(benchmark::kMillisecond);

void BM_SimulateEarlyExit(benchmark::State& state) {
    const auto w = sim::early_exit_workload(0.75, 500);
    const auto c = sim::single_gpu_cluster();
    for (auto _ : state) benchmark::DoNotOptimize(sim::run(w, c, {true, false, true}, 0));
}
BENCHMARK(BM_SimulateEarlyExit)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
