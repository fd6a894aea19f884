// SPDX-License-Identifier: Apache-2.0
//
// Serial reference against OpenMP kernels for exact and Monte-Carlo vote
// accuracy.
#include "tts/biassim.hpp"

#include <benchmark/benchmark.h>

namespace {

tts::CategoricalPolicySpec bias_spec()
{
    tts::CategoricalPolicySpec spec;
    spec.answers = {{"4", 0.40}, {"2", 0.45}, {"other", 0.15}};
    return spec;
}

void BM_ExactSerial(benchmark::State& state)
{
    const auto spec = bias_spec();
    for (auto _ : state)
        benchmark::DoNotOptimize(tts::exact_vote_accuracy_serial(spec, "4", static_cast<int>(state.range(0))));
}

void BM_ExactOpenMP(benchmark::State& state)
{
    const auto spec = bias_spec();
    for (auto _ : state)
        benchmark::DoNotOptimize(tts::exact_vote_accuracy(spec, "4", static_cast<int>(state.range(0))));
}

void BM_MonteCarloSerial(benchmark::State& state)
{
    const auto spec = bias_spec();
    for (auto _ : state)
        benchmark::DoNotOptimize(tts::mc_vote_accuracy_serial(spec, "4", static_cast<int>(state.range(0)), 20000, 1));
    state.SetItemsProcessed(state.iterations() * 20000);
}

void BM_MonteCarloOpenMP(benchmark::State& state)
{
    const auto spec = bias_spec();
    for (auto _ : state)
        benchmark::DoNotOptimize(tts::mc_vote_accuracy(spec, "4", static_cast<int>(state.range(0)), 20000, 1));
    state.SetItemsProcessed(state.iterations() * 20000);
}

}  // namespace

BENCHMARK(BM_ExactSerial)->Arg(15)->Arg(51)->Arg(201)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExactOpenMP)->Arg(15)->Arg(51)->Arg(201)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MonteCarloSerial)->Arg(15)->Arg(201)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MonteCarloOpenMP)->Arg(15)->Arg(201)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
