#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blockq/block_catalog.hpp"
#include "blockq/replay_db.hpp"

namespace blockq {

struct RankedModel {
  std::string net;
  double accuracy = 0.0;
  std::int64_t iteration = 0;  // first iteration the net was evaluated
  std::int64_t params = -1;
};

struct TopK {
  std::vector<RankedModel> rows;
  std::string note;  // set when fewer than k distinct nets exist
};

/// Distinct nets ranked by accuracy (desc), then iteration (asc), then net text.
TopK top_k(std::span<const ReplayRow> rows, int k);

/// "<net> <accuracy %> <iteration> <params>", e.g. "[B(0),B(0),SM(10)] 95.32 131 4.32M".
std::string format_ranked(const RankedModel& m);
std::string render_top_k(const TopK& t);

struct StageStats {
  double epsilon = 1.0;
  int models = 0;       // newly evaluated nets (cached resamples excluded)
  int cached = 0;       // cached resamples drawn in the stage
  int failed = 0;
  double mean_accuracy = 0.0;
  double min_accuracy = 0.0;
  double best_accuracy = 0.0;
  std::string best_net;

  friend bool operator==(const StageStats&, const StageStats&) = default;
};

/// One entry per distinct epsilon, in descending epsilon order.
std::vector<StageStats> stage_stats(std::span<const ReplayRow> rows);
std::string stage_stats_csv(std::span<const StageStats> stats);
std::vector<StageStats> parse_stage_stats_csv(std::string_view text);

/// Queries: "contains:B(n)", "swap_pairs", "concat_effect".
/// Throws ParseError listing the valid queries when `query` is unknown.
std::string structural_query(std::span<const ReplayRow> rows, std::string_view query,
                             const Catalog& cat = catalog());

}  // namespace blockq
