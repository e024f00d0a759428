#include "blockq/search_space.hpp"

#include "blockq/errors.hpp"
#include "text_util.hpp"

namespace blockq {

namespace {

constexpr std::uint32_t kStartTag = 12;
constexpr std::uint32_t kPostGapTag = 13;
constexpr std::uint32_t kTerminalTag = 14;

void check_max_depth(int max_depth) {
  if (max_depth < 1) throw ContractViolation("max_depth must be >= 1, got " + std::to_string(max_depth));
}

}  // namespace

std::uint32_t State::key() const {
  std::uint32_t tag = 0;
  switch (node) {
    case Node::Start: tag = kStartTag; break;
    case Node::Block: tag = static_cast<std::uint32_t>(block); break;
    case Node::PostGap: tag = kPostGapTag; break;
    case Node::Terminal: tag = kTerminalTag; break;
  }
  return static_cast<std::uint32_t>(depth) * 16u + tag;
}

State State::from_key(std::uint32_t key) {
  const int depth = static_cast<int>(key / 16u);
  const std::uint32_t tag = key % 16u;
  if (tag < kBlockCount) return at_block(depth, BlockCode::block(static_cast<int>(tag)));
  if (tag == kStartTag && depth == 0) return start();
  if (tag == kPostGapTag) return post_gap(depth);
  if (tag == kTerminalTag) return terminal(depth);
  throw ParseError("invalid state key " + std::to_string(key));
}

std::string to_string(const State& s) {
  switch (s.node) {
    case State::Node::Start: return "(0,start)";
    case State::Node::Block: return "(" + std::to_string(s.depth) + ",B(" + std::to_string(s.block) + "))";
    case State::Node::PostGap: return "(" + std::to_string(s.depth) + ",post-gap)";
    case State::Node::Terminal: return "(" + std::to_string(s.depth) + ",terminal)";
  }
  return "?";
}

State initial_state() { return State::start(); }

std::vector<Action> legal_actions(const State& s, int max_depth) {
  check_max_depth(max_depth);
  switch (s.node) {
    case State::Node::Start:
      return {BlockCode::block(0)};
    case State::Node::PostGap:
      return {BlockCode::sm()};
    case State::Node::Terminal:
      throw ContractViolation("terminal state " + to_string(s) + " has no actions");
    case State::Node::Block:
      break;
  }
  if (s.depth < 1 || s.depth > max_depth) {
    throw ContractViolation("state " + to_string(s) + " outside depth range 1.." + std::to_string(max_depth));
  }
  std::vector<Action> out;
  if (s.depth < max_depth) {
    out.reserve(kCodeCount);
    for (int n = 0; n < kBlockCount; ++n) out.push_back(BlockCode::block(n));
  }
  out.push_back(BlockCode::gap());
  out.push_back(BlockCode::sm());
  return out;
}

State apply(const State& s, Action a, int max_depth) {
  const auto legal = legal_actions(s, max_depth);
  bool ok = false;
  for (auto x : legal) ok = ok || x == a;
  if (!ok) {
    throw ContractViolation("action " + format_code(a) + " is illegal in state " + to_string(s));
  }
  if (a.is_block()) return State::at_block(s.depth + 1, a);
  if (a.is_gap()) return State::post_gap(s.depth);
  return State::terminal(s.depth);
}

Trajectory Trajectory::from_blocks(std::vector<BlockCode> blocks, int max_depth) {
  check_max_depth(max_depth);
  if (blocks.empty() || blocks.front() != BlockCode::block(0)) {
    throw ConstraintError("trajectory must start with B(0)");
  }
  if (!blocks.back().is_sm()) throw ConstraintError("trajectory must end with SM");
  int layers = 0;
  for (std::size_t i = 0; i + 1 < blocks.size(); ++i) {
    const auto b = blocks[i];
    if (b.is_sm()) throw ConstraintError("SM may only appear as the final code");
    if (b.is_gap() && i + 2 != blocks.size()) throw ConstraintError("GAP may only appear immediately before SM");
    if (b.is_block()) ++layers;
  }
  if (layers > max_depth) {
    throw ConstraintError("trajectory has " + std::to_string(layers) + " block layers, max depth is " +
                          std::to_string(max_depth));
  }
  return Trajectory(std::move(blocks));
}

int Trajectory::block_layers() const {
  int n = 0;
  for (auto b : blocks_) n += b.is_block() ? 1 : 0;
  return n;
}

std::vector<Transition> Trajectory::transitions() const {
  std::vector<Transition> out;
  out.reserve(blocks_.size());
  State s = initial_state();
  // from_blocks already validated legality against its max_depth; the
  // transition structure itself does not depend on it.
  for (auto a : blocks_) {
    State next;
    if (a.is_block()) next = State::at_block(s.depth + 1, a);
    else if (a.is_gap()) next = State::post_gap(s.depth);
    else next = State::terminal(s.depth);
    out.push_back({s, a, next});
    s = next;
  }
  return out;
}

std::string encode_net(const std::vector<BlockCode>& blocks, int classes) {
  std::string out = "[";
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) out += ',';
    out += format_code(blocks[i], classes);
  }
  out += ']';
  return out;
}

std::string encode_net(const Trajectory& t, int classes) { return encode_net(t.blocks(), classes); }

namespace {

std::vector<ParsedCode> parse_net_items(std::string_view text) {
  if (text.size() < 2 || text.front() != '[' || text.back() != ']') {
    throw ParseError("net string must be bracketed: '" + std::string(text) + "'");
  }
  const auto body = text.substr(1, text.size() - 2);
  if (body.empty()) throw ParseError("empty net string");
  std::vector<ParsedCode> items;
  for (auto tok : detail::split(body, ',')) items.push_back(parse_code_token(tok));
  return items;
}

}  // namespace

Trajectory decode_net(std::string_view text, int max_depth, std::optional<int> expected_classes) {
  const auto items = parse_net_items(text);
  std::optional<int> classes = expected_classes;
  std::vector<BlockCode> blocks;
  blocks.reserve(items.size());
  for (const auto& item : items) {
    if (item.classes) {
      if (classes && *classes != *item.classes) {
        throw ConstraintError("inconsistent class counts in '" + std::string(text) + "'");
      }
      classes = item.classes;
    }
    blocks.push_back(item.code);
  }
  return Trajectory::from_blocks(std::move(blocks), max_depth);
}

int net_class_count(std::string_view text) {
  for (const auto& item : parse_net_items(text)) {
    if (item.classes) return *item.classes;
  }
  throw ConstraintError("net string has no terminator: '" + std::string(text) + "'");
}

std::uint64_t trajectory_count(int max_depth) {
  check_max_depth(max_depth);
  std::uint64_t total = 0;
  std::uint64_t layer = 1;  // 12^(d-1)
  for (int d = 1; d <= max_depth; ++d) {
    if (total > UINT64_MAX / 4 || layer > UINT64_MAX / 24) {
      throw ConstraintError("trajectory count overflows for max_depth " + std::to_string(max_depth));
    }
    total += 2 * layer;
    layer *= kBlockCount;
  }
  return total;
}

namespace {

void walk(std::vector<BlockCode>& prefix, const State& s, int max_depth,
          const std::function<void(const Trajectory&)>& visit) {
  for (auto a : legal_actions(s, max_depth)) {
    prefix.push_back(a);
    const State next = apply(s, a, max_depth);
    if (next.is_terminal()) {
      visit(Trajectory::from_blocks(prefix, max_depth));
    } else {
      walk(prefix, next, max_depth, visit);
    }
    prefix.pop_back();
  }
}

void guard(int max_depth) {
  const auto n = trajectory_count(max_depth);
  if (n > kEnumerationLimit) {
    throw ConstraintError("refusing to enumerate " + std::to_string(n) + " trajectories (limit " +
                          std::to_string(kEnumerationLimit) + ")");
  }
}

}  // namespace

void for_each_trajectory(int max_depth, const std::function<void(const Trajectory&)>& visit) {
  guard(max_depth);
  std::vector<BlockCode> prefix;
  walk(prefix, initial_state(), max_depth, visit);
}

std::vector<Trajectory> enumerate_all(int max_depth) {
  guard(max_depth);
  std::vector<Trajectory> out;
  out.reserve(trajectory_count(max_depth));
  for_each_trajectory(max_depth, [&](const Trajectory& t) { out.push_back(t); });
  return out;
}

}  // namespace blockq
