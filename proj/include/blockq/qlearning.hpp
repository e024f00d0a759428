#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "blockq/rng.hpp"
#include "blockq/search_space.hpp"

namespace blockq {

inline constexpr double kDefaultQ0 = 0.5;

struct LearningParams {
  double alpha = 0.01;  // Q-learning rate
  double gamma = 1.0;   // discount factor

  void validate() const;
};

/// Tabular state-action values. Unseen pairs read as q0.
class QTable {
 public:
  explicit QTable(double q0 = kDefaultQ0);

  double q0() const { return q0_; }
  double get(const State& s, Action a) const;
  void set(const State& s, Action a, double value);

  // max over legal_actions(s); 0 for a terminal state.
  double max_value(const State& s, int max_depth) const;
  // Highest-valued legal action; ties go to the lowest ordinal (blocks, then GAP, then SM).
  Action argmax(const State& s, int max_depth) const;

  std::size_t size() const { return values_.size(); }
  // (state key << 4 | action ordinal) -> value, in key order.
  const std::map<std::uint32_t, double>& values() const { return values_; }

  // Same table with `c` added to q0 and every stored value.
  QTable shifted(double c) const;

  friend bool operator==(const QTable&, const QTable&) = default;

 private:
  static std::uint32_t key(const State& s, Action a) { return (s.key() << 4) | static_cast<std::uint32_t>(a.ordinal()); }

  double q0_;
  std::map<std::uint32_t, double> values_;
};

struct EpsilonStage {
  double epsilon = 1.0;
  int unique_models = 0;
  friend bool operator==(const EpsilonStage&, const EpsilonStage&) = default;
};

struct EpsilonSchedule {
  std::vector<EpsilonStage> stages;

  /// Exploration schedule from 1.0 down to 0.1 (161 models in total).
  static EpsilonSchedule standard();
  /// "eps:count,eps:count,..."
  static EpsilonSchedule parse(std::string_view text);
  std::string to_string() const;

  int total_models() const;
  // epsilon in [0,1], strictly decreasing, counts >= 0
  void validate() const;

  friend bool operator==(const EpsilonSchedule&, const EpsilonSchedule&) = default;
};

struct ReplayEntry {
  std::vector<BlockCode> blocks;
  std::string net_string;
  double accuracy = 0.0;
  std::int64_t iteration = 0;
  double epsilon = 1.0;
  std::int64_t param_count = -1;  // -1: architecture could not be built
  std::string wall_time;
  bool ok = true;  // false: evaluation failed, accuracy is the 0 reward
};

/// Append-only store of evaluated architectures, deduplicated by block sequence.
/// One appender may run alongside any number of readers.
class ReplayMemory {
 public:
  ReplayMemory() = default;
  ReplayMemory(const ReplayMemory& other);
  ReplayMemory& operator=(const ReplayMemory& other);

  // False (and no change) when the sequence is already stored.
  bool append(ReplayEntry entry);
  std::optional<ReplayEntry> find(const std::vector<BlockCode>& blocks) const;
  bool contains(const std::vector<BlockCode>& blocks) const;
  ReplayEntry at(std::size_t i) const;
  std::size_t size() const;
  bool empty() const { return size() == 0; }

 private:
  static std::string key_of(const std::vector<BlockCode>& blocks);

  mutable std::shared_mutex mutex_;
  std::deque<ReplayEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// epsilon-greedy walk from the start state to a terminal state.
Trajectory sample_trajectory(const QTable& q, double epsilon, Rng& rng, int max_depth = kDefaultMaxDepth);

/// sample_trajectory with epsilon = 0; consumes no randomness.
Trajectory greedy_trajectory(const QTable& q, int max_depth = kDefaultMaxDepth);

/// Backward pass of the one-step update over the trajectory. The terminal
/// transition observes `reward` with a zero bootstrap term; earlier
/// transitions observe 0 and bootstrap from the current table.
void q_update(QTable& q, const Trajectory& t, double reward, const LearningParams& p,
              int max_depth = kDefaultMaxDepth);

/// n_samples uniform draws (with replacement) from memory, q_update each in draw order.
void replay_update(QTable& q, const ReplayMemory& mem, int n_samples, Rng& rng, const LearningParams& p,
                   int max_depth = kDefaultMaxDepth);

/// Q-table checkpoint: header (q0, alpha, gamma, schedule position, RNG
/// state, free-form metadata), one record per stored value, checksum trailer.
struct QCheckpoint {
  QTable table;
  LearningParams params;
  int stage = 0;           // index into the schedule
  int stage_models = 0;    // unique models finished in that stage
  int stage_attempts = 0;  // samples drawn in that stage
  std::string rng_state;
  std::vector<std::pair<std::string, std::string>> meta;

  std::string to_text() const;
  /// Throws IntegrityError (truncation, checksum) or ParseError.
  static QCheckpoint from_text(std::string_view text);

  std::optional<std::string> meta_value(std::string_view key) const;
};

/// Stable hash of the table contents (q0 and every record).
std::uint64_t table_hash(const QTable& q);

}  // namespace blockq
