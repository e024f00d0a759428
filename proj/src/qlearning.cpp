#include "blockq/qlearning.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "blockq/errors.hpp"
#include "text_util.hpp"

namespace blockq {

using detail::format_double;

void LearningParams::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1], got " + format_double(alpha));
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1], got " + format_double(gamma));
}

QTable::QTable(double q0) : q0_(q0) {}

double QTable::get(const State& s, Action a) const {
  const auto it = values_.find(key(s, a));
  return it == values_.end() ? q0_ : it->second;
}

void QTable::set(const State& s, Action a, double value) { values_[key(s, a)] = value; }

double QTable::max_value(const State& s, int max_depth) const {
  if (s.is_terminal()) return 0.0;
  double best = -INFINITY;
  for (auto a : legal_actions(s, max_depth)) best = std::max(best, get(s, a));
  return best;
}

Action QTable::argmax(const State& s, int max_depth) const {
  const auto legal = legal_actions(s, max_depth);
  Action best = legal.front();
  double best_v = get(s, best);
  for (std::size_t i = 1; i < legal.size(); ++i) {
    const double v = get(s, legal[i]);
    if (v > best_v) {
      best = legal[i];
      best_v = v;
    }
  }
  return best;
}

QTable QTable::shifted(double c) const {
  QTable out(q0_ + c);
  for (const auto& [k, v] : values_) out.values_.emplace(k, v + c);
  return out;
}

EpsilonSchedule EpsilonSchedule::standard() {
  return {{{1.0, 50}, {0.9, 7}, {0.8, 7}, {0.7, 7}, {0.6, 10},
           {0.5, 15}, {0.4, 15}, {0.3, 15}, {0.2, 15}, {0.1, 20}}};
}

EpsilonSchedule EpsilonSchedule::parse(std::string_view text) {
  EpsilonSchedule s;
  for (auto item : detail::split(detail::trim(text), ',')) {
    const auto parts = detail::split(detail::trim(item), ':');
    if (parts.size() != 2) throw ParseError("schedule stage must be eps:count, got '" + std::string(item) + "'");
    const auto eps = detail::parse_double(detail::trim(parts[0]));
    const auto n = detail::parse_int<int>(detail::trim(parts[1]));
    if (!eps || !n) throw ParseError("bad schedule stage '" + std::string(item) + "'");
    s.stages.push_back({*eps, *n});
  }
  s.validate();
  return s;
}

std::string EpsilonSchedule::to_string() const {
  std::string out;
  for (const auto& st : stages) {
    if (!out.empty()) out += ',';
    out += format_double(st.epsilon) + ":" + std::to_string(st.unique_models);
  }
  return out;
}

int EpsilonSchedule::total_models() const {
  int n = 0;
  for (const auto& st : stages) n += st.unique_models;
  return n;
}

void EpsilonSchedule::validate() const {
  if (stages.empty()) throw ConfigError("epsilon schedule is empty");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    if (!(st.epsilon >= 0.0 && st.epsilon <= 1.0)) throw ConfigError("stage epsilon outside [0, 1]");
    if (st.unique_models < 0) throw ConfigError("stage model count must be >= 0");
    if (i > 0 && !(st.epsilon < stages[i - 1].epsilon)) {
      throw ConfigError("schedule epsilons must be strictly decreasing");
    }
  }
}

ReplayMemory::ReplayMemory(const ReplayMemory& other) {
  std::shared_lock lock(other.mutex_);
  entries_ = other.entries_;
  index_ = other.index_;
}

ReplayMemory& ReplayMemory::operator=(const ReplayMemory& other) {
  if (this != &other) {
    std::scoped_lock lock(mutex_);
    std::shared_lock other_lock(other.mutex_);
    entries_ = other.entries_;
    index_ = other.index_;
  }
  return *this;
}

std::string ReplayMemory::key_of(const std::vector<BlockCode>& blocks) {
  std::string k;
  k.reserve(blocks.size());
  for (auto b : blocks) k.push_back(static_cast<char>(b.ordinal()));
  return k;
}

bool ReplayMemory::append(ReplayEntry entry) {
  if (!(entry.accuracy >= 0.0 && entry.accuracy <= 1.0)) {
    throw ContractViolation("replay accuracy outside [0, 1]: " + format_double(entry.accuracy));
  }
  auto k = key_of(entry.blocks);
  std::scoped_lock lock(mutex_);
  if (index_.count(k)) return false;
  index_.emplace(std::move(k), entries_.size());
  entries_.push_back(std::move(entry));
  return true;
}

std::optional<ReplayEntry> ReplayMemory::find(const std::vector<BlockCode>& blocks) const {
  const auto k = key_of(blocks);
  std::shared_lock lock(mutex_);
  const auto it = index_.find(k);
  if (it == index_.end()) return std::nullopt;
  return entries_[it->second];
}

bool ReplayMemory::contains(const std::vector<BlockCode>& blocks) const {
  const auto k = key_of(blocks);
  std::shared_lock lock(mutex_);
  return index_.count(k) > 0;
}

ReplayEntry ReplayMemory::at(std::size_t i) const {
  std::shared_lock lock(mutex_);
  if (i >= entries_.size()) throw ContractViolation("replay index out of range");
  return entries_[i];
}

std::size_t ReplayMemory::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

Trajectory sample_trajectory(const QTable& q, double epsilon, Rng& rng, int max_depth) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ContractViolation("epsilon outside [0, 1]");
  std::vector<BlockCode> blocks;
  State s = initial_state();
  while (!s.is_terminal()) {
    const auto legal = legal_actions(s, max_depth);
    Action a = legal.front();
    if (rng.uniform01() < epsilon) {
      a = legal[rng.uniform_index(legal.size())];
    } else {
      a = q.argmax(s, max_depth);
    }
    blocks.push_back(a);
    s = apply(s, a, max_depth);
  }
  return Trajectory::from_blocks(std::move(blocks), max_depth);
}

Trajectory greedy_trajectory(const QTable& q, int max_depth) {
  std::vector<BlockCode> blocks;
  State s = initial_state();
  while (!s.is_terminal()) {
    const Action a = q.argmax(s, max_depth);
    blocks.push_back(a);
    s = apply(s, a, max_depth);
  }
  return Trajectory::from_blocks(std::move(blocks), max_depth);
}

void q_update(QTable& q, const Trajectory& t, double reward, const LearningParams& p, int max_depth) {
  if (!(reward >= 0.0 && reward <= 1.0)) throw ContractViolation("reward outside [0, 1]: " + format_double(reward));
  const auto steps = t.transitions();
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    const bool terminal = it->to.is_terminal();
    const double r = terminal ? reward : 0.0;
    const double future = terminal ? 0.0 : q.max_value(it->to, max_depth);
    const double old = q.get(it->from, it->action);
    q.set(it->from, it->action, (1.0 - p.alpha) * old + p.alpha * (r + p.gamma * future));
  }
}

void replay_update(QTable& q, const ReplayMemory& mem, int n_samples, Rng& rng, const LearningParams& p,
                   int max_depth) {
  if (mem.empty()) throw ContractViolation("replay memory is empty");
  if (n_samples < 0) throw ContractViolation("negative replay batch");
  const auto n = mem.size();
  for (int i = 0; i < n_samples; ++i) {
    const auto entry = mem.at(rng.uniform_index(n));
    q_update(q, Trajectory::from_blocks(entry.blocks, max_depth), entry.accuracy, p, max_depth);
  }
}

namespace {

constexpr std::string_view kCheckpointMagic = "blockq-qtable 1";

std::string node_token(const State& s) {
  switch (s.node) {
    case State::Node::Start: return "start";
    case State::Node::Block: return "B(" + std::to_string(s.block) + ")";
    case State::Node::PostGap: return "post-gap";
    case State::Node::Terminal: return "terminal";
  }
  return "?";
}

State parse_state(std::string_view depth_tok, std::string_view node_tok) {
  const auto depth = detail::parse_int<int>(depth_tok);
  if (!depth || *depth < 0) throw ParseError("bad depth '" + std::string(depth_tok) + "'");
  if (node_tok == "start") {
    if (*depth != 0) throw ParseError("start state must have depth 0");
    return State::start();
  }
  if (node_tok == "post-gap") return State::post_gap(*depth);
  const auto code = parse_code(node_tok);
  if (!code.is_block()) throw ParseError("bad state node '" + std::string(node_tok) + "'");
  return State::at_block(*depth, code);
}

void write_records(std::string& out, const QTable& q) {
  for (const auto& [k, v] : q.values()) {
    const State s = State::from_key(k >> 4);
    const auto a = BlockCode::from_ordinal(static_cast<int>(k & 0xf));
    out += "q " + std::to_string(s.depth) + ' ' + node_token(s) + ' ' + format_code(a, 1) + ' ' +
           format_double(v) + '\n';
  }
}

}  // namespace

std::uint64_t table_hash(const QTable& q) {
  std::string text = "q0 " + format_double(q.q0()) + '\n';
  write_records(text, q);
  return detail::fnv1a64(text);
}

std::string QCheckpoint::to_text() const {
  std::string out(kCheckpointMagic);
  out += '\n';
  out += "q0 " + format_double(table.q0()) + '\n';
  out += "alpha " + format_double(params.alpha) + '\n';
  out += "gamma " + format_double(params.gamma) + '\n';
  out += "stage " + std::to_string(stage) + '\n';
  out += "stage_models " + std::to_string(stage_models) + '\n';
  out += "stage_attempts " + std::to_string(stage_attempts) + '\n';
  out += "rng " + rng_state + '\n';
  for (const auto& [k, v] : meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractViolation("checkpoint metadata must be single-line, key without spaces");
    }
    out += "meta " + k + ' ' + v + '\n';
  }
  write_records(out, table);
  out += "checksum " + detail::hex64(detail::fnv1a64(out)) + '\n';
  return out;
}

QCheckpoint QCheckpoint::from_text(std::string_view text) {
  // Trailer first: everything before "checksum <hex>\n" is covered by the hash.
  if (text.empty() || text.back() != '\n') {
    throw IntegrityError("checkpoint integrity check failed: file does not end with a complete line (truncated?)");
  }
  const auto body_end = text.rfind('\n', text.size() - 2);
  const auto trailer = text.substr(body_end == std::string_view::npos ? 0 : body_end + 1);
  const auto body = text.substr(0, body_end == std::string_view::npos ? 0 : body_end + 1);
  const auto trailer_toks = detail::tokens(detail::trim(trailer));
  if (trailer_toks.size() != 2 || trailer_toks[0] != "checksum") {
    throw IntegrityError("checkpoint integrity check failed: missing checksum trailer (truncated?)");
  }
  if (trailer_toks[1] != detail::hex64(detail::fnv1a64(body))) {
    throw IntegrityError("checkpoint integrity check failed: checksum mismatch");
  }

  QCheckpoint cp;
  double q0 = kDefaultQ0;
  bool seen_magic = false;
  std::vector<std::pair<State, std::pair<Action, double>>> records;
  int lineno = 0;
  for (auto raw : detail::split(body, '\n')) {
    ++lineno;
    const auto line = detail::trim(raw);
    if (line.empty()) continue;
    if (!seen_magic) {
      if (line != kCheckpointMagic) throw ParseError("not a blockq Q-table checkpoint");
      seen_magic = true;
      continue;
    }
    const auto sp = line.find(' ');
    const auto head = line.substr(0, sp);
    const auto rest = sp == std::string_view::npos ? std::string_view{} : line.substr(sp + 1);
    auto need_double = [&](std::string_view v) {
      const auto d = detail::parse_double(v);
      if (!d) throw ParseError("checkpoint line " + std::to_string(lineno) + ": bad number '" + std::string(v) + "'");
      return *d;
    };
    auto need_int = [&](std::string_view v) {
      const auto d = detail::parse_int<int>(v);
      if (!d) throw ParseError("checkpoint line " + std::to_string(lineno) + ": bad integer '" + std::string(v) + "'");
      return *d;
    };
    if (head == "q0") q0 = need_double(rest);
    else if (head == "alpha") cp.params.alpha = need_double(rest);
    else if (head == "gamma") cp.params.gamma = need_double(rest);
    else if (head == "stage") cp.stage = need_int(rest);
    else if (head == "stage_models") cp.stage_models = need_int(rest);
    else if (head == "stage_attempts") cp.stage_attempts = need_int(rest);
    else if (head == "rng") cp.rng_state = std::string(rest);
    else if (head == "meta") {
      const auto ksp = rest.find(' ');
      if (ksp == std::string_view::npos) cp.meta.emplace_back(std::string(rest), "");
      else cp.meta.emplace_back(std::string(rest.substr(0, ksp)), std::string(rest.substr(ksp + 1)));
    } else if (head == "q") {
      const auto t = detail::tokens(rest);
      if (t.size() != 4) throw ParseError("checkpoint line " + std::to_string(lineno) + ": malformed q record");
      records.push_back({parse_state(t[0], t[1]), {parse_code(t[2]), need_double(t[3])}});
    } else {
      throw ParseError("checkpoint line " + std::to_string(lineno) + ": unknown record '" + std::string(head) + "'");
    }
  }
  if (!seen_magic) throw ParseError("not a blockq Q-table checkpoint");
  cp.table = QTable(q0);
  for (const auto& [s, av] : records) cp.table.set(s, av.first, av.second);
  return cp;
}

std::optional<std::string> QCheckpoint::meta_value(std::string_view key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  return std::nullopt;
}

}  // namespace blockq
