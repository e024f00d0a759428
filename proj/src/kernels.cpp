#include "blockq/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "blockq/errors.hpp"

namespace blockq::kernels {

namespace {

std::int64_t safe_param_count(const Trajectory& t, TensorShape input, int classes, const BuildOptions& options) {
  try {
    return build(t, input, classes, options).param_count;
  } catch (const SpatialUnderflowError&) {
    return -1;
  } catch (const ChannelMismatchError&) {
    return -1;
  }
}

bool codec_ok(const Trajectory& t, int classes, int max_depth) {
  try {
    return decode_net(encode_net(t, classes), max_depth, classes).blocks() == t.blocks();
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

std::vector<double> oracle_scores_serial(const SimulatedOracleConfig& cfg, std::span<const Trajectory> ts) {
  std::vector<double> out(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) out[i] = oracle_evaluate(cfg, ts[i]);
  return out;
}

std::vector<double> oracle_scores_parallel(const SimulatedOracleConfig& cfg, std::span<const Trajectory> ts) {
  std::vector<double> out(ts.size());
  const auto n = static_cast<std::int64_t>(ts.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[i] = oracle_evaluate(cfg, ts[i]);
  return out;
}

std::vector<std::int64_t> param_counts_serial(std::span<const Trajectory> ts, TensorShape input, int classes,
                                              const BuildOptions& options) {
  std::vector<std::int64_t> out(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) out[i] = safe_param_count(ts[i], input, classes, options);
  return out;
}

std::vector<std::int64_t> param_counts_parallel(std::span<const Trajectory> ts, TensorShape input, int classes,
                                                const BuildOptions& options) {
  std::vector<std::int64_t> out(ts.size());
  const auto n = static_cast<std::int64_t>(ts.size());
  // graph sizes vary by ~10x across nets
#pragma omp parallel for schedule(dynamic, 32)
  for (std::int64_t i = 0; i < n; ++i) out[i] = safe_param_count(ts[i], input, classes, options);
  return out;
}

std::size_t codec_failures_serial(std::span<const Trajectory> ts, int classes, int max_depth) {
  std::size_t bad = 0;
  for (const auto& t : ts) bad += codec_ok(t, classes, max_depth) ? 0 : 1;
  return bad;
}

std::size_t codec_failures_parallel(std::span<const Trajectory> ts, int classes, int max_depth) {
  std::int64_t bad = 0;
  const auto n = static_cast<std::int64_t>(ts.size());
#pragma omp parallel for schedule(static) reduction(+ : bad)
  for (std::int64_t i = 0; i < n; ++i) bad += codec_ok(ts[i], classes, max_depth) ? 0 : 1;
  return static_cast<std::size_t>(bad);
}

std::size_t count_greater_serial(std::span<const double> scores, double value) {
  std::size_t n = 0;
  for (double s : scores) n += s > value ? 1 : 0;
  return n;
}

std::size_t count_greater_parallel(std::span<const double> scores, double value) {
  std::int64_t count = 0;
  const auto n = static_cast<std::int64_t>(scores.size());
#pragma omp parallel for schedule(static) reduction(+ : count)
  for (std::int64_t i = 0; i < n; ++i) count += scores[i] > value ? 1 : 0;
  return static_cast<std::size_t>(count);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace blockq::kernels
