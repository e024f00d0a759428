#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "blockq/block_catalog.hpp"

namespace blockq {

inline constexpr int kDefaultMaxDepth = 5;
// enumerate_all refuses spaces larger than this.
inline constexpr std::uint64_t kEnumerationLimit = 10'000'000;

/// Node of the block-selection MDP, keyed by (depth, current block).
struct State {
  enum class Node : std::uint8_t { Start, Block, PostGap, Terminal };

  int depth = 0;
  Node node = Node::Start;
  int block = -1;  // B(n) index when node == Block

  static State start() { return {}; }
  static State at_block(int depth, BlockCode code) { return {depth, Node::Block, code.index()}; }
  static State post_gap(int depth) { return {depth, Node::PostGap, -1}; }
  static State terminal(int depth) { return {depth, Node::Terminal, -1}; }

  bool is_terminal() const { return node == Node::Terminal; }
  // Dense integer key: depth * 16 + {block 0..11, start 12, post-gap 13, terminal 14}.
  std::uint32_t key() const;
  static State from_key(std::uint32_t key);

  friend bool operator==(const State&, const State&) = default;
};

std::string to_string(const State& s);

using Action = BlockCode;

struct Transition {
  State from;
  Action action;
  State to;
};

/// A complete start-to-terminal selection path.
class Trajectory {
 public:
  /// Validates every trajectory invariant; throws ConstraintError.
  static Trajectory from_blocks(std::vector<BlockCode> blocks, int max_depth = kDefaultMaxDepth);

  const std::vector<BlockCode>& blocks() const { return blocks_; }
  std::vector<Transition> transitions() const;
  int block_layers() const;  // number of non-terminator codes
  bool ends_with_gap() const { return blocks_.size() >= 2 && blocks_[blocks_.size() - 2].is_gap(); }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;

 private:
  explicit Trajectory(std::vector<BlockCode> blocks) : blocks_(std::move(blocks)) {}
  std::vector<BlockCode> blocks_;
};

State initial_state();

/// Legal actions in canonical order (blocks ascending, then GAP, then SM).
/// Throws ContractViolation for a terminal state.
std::vector<Action> legal_actions(const State& s, int max_depth = kDefaultMaxDepth);

/// Throws ContractViolation when `a` is not legal in `s`.
State apply(const State& s, Action a, int max_depth = kDefaultMaxDepth);

std::string encode_net(const Trajectory& t, int classes = kDefaultClassCount);
std::string encode_net(const std::vector<BlockCode>& blocks, int classes = kDefaultClassCount);

/// Parses the bracketed net-string grammar and checks trajectory rules.
/// When `expected_classes` is set, every terminator must carry that count.
Trajectory decode_net(std::string_view text, int max_depth = kDefaultMaxDepth,
                      std::optional<int> expected_classes = std::nullopt);

/// Class count carried by the terminators of a net string.
int net_class_count(std::string_view text);

/// Closed-form number of complete trajectories: sum_{d=1..D} 2 * 12^(d-1).
std::uint64_t trajectory_count(int max_depth);

/// Visits every legal trajectory once in lexicographic action order.
void for_each_trajectory(int max_depth, const std::function<void(const Trajectory&)>& visit);

/// Materialises for_each_trajectory; throws ConstraintError above kEnumerationLimit.
std::vector<Trajectory> enumerate_all(int max_depth);

}  // namespace blockq
