#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "blockq/arch_builder.hpp"
#include "blockq/qlearning.hpp"
#include "blockq/replay_db.hpp"
#include "blockq/reward.hpp"

namespace blockq {

enum class EvaluatorKind { Simulated, External };
// Logical: row timestamps derive from the iteration number (byte-reproducible DBs).
enum class ClockMode { Logical, Wall };

struct SearchConfig {
  int max_depth = kDefaultMaxDepth;
  EpsilonSchedule schedule = EpsilonSchedule::standard();
  LearningParams params;
  double q0 = kDefaultQ0;
  int replay_batch = 100;
  int replay_period = 1;  // replay after every n-th newly evaluated model
  std::uint64_t seed = 0;
  bool dedupe = true;
  int attempt_cap_factor = 50;  // per-stage sampling cap, as a multiple of the stage quota
  int parallel = 1;             // in-flight evaluations; >1 departs from the sequential loop

  EvaluatorKind evaluator = EvaluatorKind::Simulated;
  SimulatedOracleConfig oracle;
  std::vector<Endpoint> endpoints;
  int eval_timeout_ms = 4 * 3600 * 1000;
  int eval_retries = 1;
  TrainingBudget budget;

  int class_count = kDefaultClassCount;
  TensorShape input_shape{3, 32, 32};
  std::string dataset = "cifar10";
  PoolRounding pool_rounding = PoolRounding::Floor;
  std::filesystem::path catalog_path;  // empty: shipped catalog
  std::map<int, std::vector<int>> channel_overrides;

  std::filesystem::path db_path = "replay.jsonl";
  std::filesystem::path checkpoint_path = "search.ckpt";
  std::optional<ClockMode> clock;  // default: logical for simulated, wall for external

  ClockMode effective_clock() const;
  void validate() const;

  /// Applies one `key=value` setting; throws ConfigError on unknown keys.
  void set(std::string_view key, std::string_view value);
  /// Flat key=value text; '#' starts a comment.
  static SearchConfig parse(std::string_view text);
  static SearchConfig load(const std::filesystem::path& path);
  /// Every setting as key/value pairs; parse(to_pairs()) reproduces the config.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
};

struct SearchLog {
  std::vector<ReplayRow> records;
  bool complete = false;     // every stage met its quota (or the space ran out)
  bool exhausted = false;    // every legal trajectory was evaluated before the schedule finished
  bool interrupted = false;  // stopped by RunControl

  // Non-cached rows tagged with the given stage epsilon.
  int unique_models(double epsilon) const;
  int unique_models() const;
};

struct RunControl {
  // Return after this many iterations in total (artifacts stay resumable).
  std::optional<std::int64_t> stop_after_iterations;
  std::function<void(const ReplayRow&)> on_iteration;
};

/// Fresh search: truncates the replay DB and checkpoint named in the config.
SearchLog run_search(const SearchConfig& cfg, const RunControl& control = {});

/// Continues a search from its checkpoint. A completed run is a no-op.
/// Throws IntegrityError when the checkpoint or replay DB fails verification.
SearchLog resume(const std::filesystem::path& checkpoint_path, const RunControl& control = {});

/// Loads the catalog named by the config (shipped file plus channel overrides).
Catalog load_catalog(const SearchConfig& cfg);

/// One-off evaluation of a net with the configured evaluator.
EvalResponse evaluate_net(const SearchConfig& cfg, const Trajectory& t, std::uint64_t request_id = 1);

}  // namespace blockq
