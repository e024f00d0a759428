#include <benchmark/benchmark.h>

#include "blockq/kernels.hpp"
#include "blockq/qlearning.hpp"
#include "blockq/search_space.hpp"

namespace {

using namespace blockq;

const std::vector<Trajectory>& space(int depth) {
  static std::vector<std::vector<Trajectory>> cache(8);
  if (cache[depth].empty()) cache[depth] = enumerate_all(depth);
  return cache[depth];
}

void BM_OracleSerial(benchmark::State& st) {
  const auto& ts = space(5);
  SimulatedOracleConfig cfg;
  cfg.noise_sigma = 0.02;
  for (auto _ : st) benchmark::DoNotOptimize(kernels::oracle_scores_serial(cfg, ts));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(ts.size()));
}

void BM_OracleParallel(benchmark::State& st) {
  const auto& ts = space(5);
  SimulatedOracleConfig cfg;
  cfg.noise_sigma = 0.02;
  for (auto _ : st) benchmark::DoNotOptimize(kernels::oracle_scores_parallel(cfg, ts));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(ts.size()));
}

void BM_ParamsSerial(benchmark::State& st) {
  const auto& ts = space(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(kernels::param_counts_serial(ts, {3, 32, 32}, 10));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(ts.size()));
}

void BM_ParamsParallel(benchmark::State& st) {
  const auto& ts = space(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(kernels::param_counts_parallel(ts, {3, 32, 32}, 10));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(ts.size()));
}

void BM_CodecParallel(benchmark::State& st) {
  const auto& ts = space(5);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::codec_failures_parallel(ts, 10, 5));
}

void BM_QUpdate(benchmark::State& st) {
  QTable q;
  const auto& ts = space(5);
  std::size_t i = 0;
  for (auto _ : st) {
    q_update(q, ts[i], 0.8, {});
    i = (i + 7919) % ts.size();
  }
}

}  // namespace

BENCHMARK(BM_OracleSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_OracleParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ParamsSerial)->Arg(3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ParamsParallel)->Arg(3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CodecParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_QUpdate);

BENCHMARK_MAIN();
