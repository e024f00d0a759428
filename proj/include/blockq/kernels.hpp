#pragma once

// Batch kernels over trajectory sets. Each kernel has a serial reference and
// an OpenMP version that must agree with it element for element.

#include <cstdint>
#include <span>
#include <vector>

#include "blockq/arch_builder.hpp"
#include "blockq/reward.hpp"
#include "blockq/search_space.hpp"

namespace blockq::kernels {

std::vector<double> oracle_scores_serial(const SimulatedOracleConfig& cfg, std::span<const Trajectory> ts);
std::vector<double> oracle_scores_parallel(const SimulatedOracleConfig& cfg, std::span<const Trajectory> ts);

// -1 where the architecture cannot be built (spatial underflow, channel mismatch).
std::vector<std::int64_t> param_counts_serial(std::span<const Trajectory> ts, TensorShape input, int classes,
                                              const BuildOptions& options = {});
std::vector<std::int64_t> param_counts_parallel(std::span<const Trajectory> ts, TensorShape input, int classes,
                                                const BuildOptions& options = {});

// Number of trajectories whose net string fails to decode back to the same blocks.
std::size_t codec_failures_serial(std::span<const Trajectory> ts, int classes, int max_depth);
std::size_t codec_failures_parallel(std::span<const Trajectory> ts, int classes, int max_depth);

// Number of scores strictly greater than `value` (0 means `value` is a maximum).
std::size_t count_greater_serial(std::span<const double> scores, double value);
std::size_t count_greater_parallel(std::span<const double> scores, double value);

int max_threads();

}  // namespace blockq::kernels
