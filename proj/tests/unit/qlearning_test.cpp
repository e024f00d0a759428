#include <doctest.h>

#include <cmath>
#include <map>

#include "blockq/errors.hpp"
#include "blockq/qlearning.hpp"
#include "blockq/rng.hpp"

using namespace blockq;

namespace {

const BlockCode B0 = BlockCode::block(0);
const BlockCode GAP = BlockCode::gap();
const BlockCode SM = BlockCode::sm();

Trajectory net(std::vector<BlockCode> b, int depth = kDefaultMaxDepth) {
  return Trajectory::from_blocks(std::move(b), depth);
}

ReplayEntry entry_for(const Trajectory& t, double acc) {
  ReplayEntry e;
  e.blocks = t.blocks();
  e.net_string = encode_net(t);
  e.accuracy = acc;
  return e;
}

// Deterministic pseudo-random reward per net, unique with overwhelming probability.
double hashed_reward(const Trajectory& t) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto c : t.blocks()) h = splitmix64(h ^ static_cast<std::uint64_t>(c.ordinal() + 1));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace

TEST_CASE("unseen pairs read as q0") {
  QTable q(0.3);
  CHECK(q.get(initial_state(), B0) == 0.3);
  CHECK(q.size() == 0);
  q.set(State::at_block(1, B0), SM, 0.9);
  CHECK(q.get(State::at_block(1, B0), SM) == 0.9);
  CHECK(q.max_value(State::at_block(1, B0), 5) == 0.9);
  CHECK(q.max_value(State::terminal(2), 5) == 0.0);
}

TEST_CASE("terminal transition update") {
  QTable q;
  const auto t = net({B0, SM});
  q_update(q, t, 0.9, LearningParams{});
  CHECK(q.get(State::at_block(1, B0), SM) == doctest::Approx(0.504).epsilon(1e-12));
  // The start transition bootstraps from max over (1,B0): still 0.504 against q0 entries of 0.5.
  CHECK(q.get(initial_state(), B0) == doctest::Approx(0.99 * 0.5 + 0.01 * 0.504).epsilon(1e-12));
}

TEST_CASE("alpha = 1, gamma = 0 copies the reward") {
  QTable q;
  q_update(q, net({B0, SM}), 0.7, LearningParams{1.0, 0.0});
  CHECK(q.get(State::at_block(1, B0), SM) == 0.7);
  CHECK(q.get(initial_state(), B0) == 0.0);
}

TEST_CASE("alpha = 0 leaves every value unchanged") {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    QTable q;
    const auto t = sample_trajectory(q, 1.0, rng);
    q_update(q, t, rng.uniform01(), LearningParams{0.0, 1.0});
    for (const auto& tr : t.transitions()) CHECK(q.get(tr.from, tr.action) == q.q0());
  }
}

TEST_CASE("q_update rejects rewards outside [0, 1]") {
  QTable q;
  CHECK_THROWS_AS(q_update(q, net({B0, SM}), 1.5, LearningParams{}), ContractViolation);
  CHECK_THROWS_AS(q_update(q, net({B0, SM}), -0.1, LearningParams{}), ContractViolation);
}

TEST_CASE("stored values stay inside [0, 1]") {
  Rng rng(11);
  for (double q0 : {0.0, 0.5, 1.0}) {
    QTable q(q0);
    for (int i = 0; i < 3000; ++i) {
      const LearningParams p{rng.uniform01(), rng.uniform01()};
      q_update(q, sample_trajectory(q, 0.7, rng), rng.uniform01(), p);
    }
    for (const auto& [k, v] : q.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("greedy tie-break on an all-q0 table") {
  QTable q;
  CHECK(greedy_trajectory(q).blocks() == std::vector<BlockCode>{B0, B0, B0, B0, B0, GAP, SM});
  Rng rng(1);
  CHECK(sample_trajectory(q, 0.0, rng).blocks() == greedy_trajectory(q).blocks());
  CHECK(greedy_trajectory(q, 2).blocks() == std::vector<BlockCode>{B0, B0, GAP, SM});
}

TEST_CASE("greedy picks a unique maximum") {
  QTable q;
  q.set(State::at_block(1, B0), SM, 0.99);
  CHECK(greedy_trajectory(q).blocks() == std::vector<BlockCode>{B0, SM});
}

TEST_CASE("greedy is invariant under a constant shift") {
  Rng rng(21);
  QTable q;
  for (int i = 0; i < 400; ++i) {
    const auto t = sample_trajectory(q, 1.0, rng);
    q_update(q, t, hashed_reward(t), LearningParams{0.2, 1.0});
  }
  for (double c : {0.01, 0.5, 3.0}) CHECK(greedy_trajectory(q.shifted(c)) == greedy_trajectory(q));
}

TEST_CASE("epsilon = 1 draws actions uniformly") {
  QTable q;
  q.set(State::at_block(1, B0), SM, 0.99);  // greedy preference must not leak in
  Rng rng(5);
  const int n = 100000;
  std::map<int, int> counts;
  for (int i = 0; i < n; ++i) counts[sample_trajectory(q, 1.0, rng).blocks()[1].ordinal()]++;
  REQUIRE(counts.size() == 14);
  const double p = 1.0 / 14.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (const auto& [ord, c] : counts) CHECK(std::fabs(c - n * p) < 3 * sigma);
}

TEST_CASE("sampling is deterministic per seed") {
  QTable q;
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) CHECK(sample_trajectory(q, 0.5, a) == sample_trajectory(q, 0.5, b));
  CHECK_THROWS_AS(sample_trajectory(q, 1.1, a), ContractViolation);
}

TEST_CASE("replay memory deduplicates by block sequence") {
  ReplayMemory mem;
  CHECK(mem.append(entry_for(net({B0, SM}), 0.4)));
  CHECK_FALSE(mem.append(entry_for(net({B0, SM}), 0.9)));
  CHECK(mem.append(entry_for(net({B0, GAP, SM}), 0.6)));
  CHECK(mem.size() == 2);
  CHECK(mem.find(net({B0, SM}).blocks())->accuracy == 0.4);
  CHECK_FALSE(mem.contains(net({B0, B0, SM}).blocks()));
  CHECK_THROWS_AS(mem.at(2), ContractViolation);
}

TEST_CASE("replay update") {
  const LearningParams p;
  SUBCASE("empty memory is an error") {
    QTable q;
    Rng rng(0);
    CHECK_THROWS_AS(replay_update(q, ReplayMemory{}, 5, rng, p), ContractViolation);
  }
  SUBCASE("zero samples leave the table unchanged") {
    ReplayMemory mem;
    mem.append(entry_for(net({B0, SM}), 0.8));
    QTable q;
    Rng rng(0);
    replay_update(q, mem, 0, rng, p);
    CHECK(q == QTable{});
  }
  SUBCASE("a single entry is replayed n times") {
    const auto t = net({B0, B0, GAP, SM});
    ReplayMemory mem;
    mem.append(entry_for(t, 0.8));
    QTable a, b;
    Rng rng(3);
    replay_update(a, mem, 3, rng, p);
    for (int i = 0; i < 3; ++i) q_update(b, t, 0.8, p);
    CHECK(a == b);
  }
  SUBCASE("fixed seed gives byte-identical tables") {
    ReplayMemory mem;
    Rng fill(8);
    QTable scratch;
    for (int i = 0; i < 40; ++i) {
      const auto t = sample_trajectory(scratch, 1.0, fill);
      mem.append(entry_for(t, hashed_reward(t)));
    }
    QTable a, b;
    Rng ra(77), rb(77);
    replay_update(a, mem, 500, ra, p);
    replay_update(b, mem, 500, rb, p);
    QCheckpoint ca{a, p}, cb{b, p};
    CHECK(ca.to_text() == cb.to_text());
  }
}

TEST_CASE("uniform exploration converges to the best depth-2 net") {
  constexpr int depth = 2;
  Trajectory best = enumerate_all(depth).front();
  for (const auto& t : enumerate_all(depth)) {
    if (hashed_reward(t) > hashed_reward(best)) best = t;
  }
  QTable q;
  Rng rng(2024);
  const LearningParams p{0.1, 1.0};
  for (int i = 0; i < 5000; ++i) {
    const auto t = sample_trajectory(q, 1.0, rng, depth);
    q_update(q, t, hashed_reward(t), p, depth);
  }
  CHECK(greedy_trajectory(q, depth) == best);
}

TEST_CASE("epsilon schedule") {
  const auto s = EpsilonSchedule::standard();
  CHECK(s.total_models() == 161);
  CHECK(s.stages.front() == EpsilonStage{1.0, 50});
  CHECK(s.stages.back() == EpsilonStage{0.1, 20});
  CHECK(EpsilonSchedule::parse(s.to_string()) == s);
  CHECK(EpsilonSchedule::parse("1.0:2").total_models() == 2);
  CHECK_THROWS_AS(EpsilonSchedule::parse("1.0"), ParseError);
  CHECK_THROWS_AS(EpsilonSchedule::parse("1.0:x"), ParseError);
  CHECK_THROWS_AS(EpsilonSchedule::parse("0.5:2,0.9:3").validate(), ConfigError);
  CHECK_THROWS_AS(EpsilonSchedule::parse("1.5:2").validate(), ConfigError);
  CHECK_THROWS_AS(EpsilonSchedule{}.validate(), ConfigError);
  CHECK_THROWS_AS((LearningParams{1.2, 1.0}.validate()), ConfigError);
}

TEST_CASE("checkpoint text") {
  QTable q;
  Rng rng(6);
  for (int i = 0; i < 30; ++i) {
    const auto t = sample_trajectory(q, 1.0, rng);
    q_update(q, t, hashed_reward(t), LearningParams{});
  }
  QCheckpoint cp{q, LearningParams{0.05, 0.9}, 3, 4, 17, rng.state(), {{"iteration", "42"}, {"note", "a b"}}};
  const auto text = cp.to_text();

  SUBCASE("roundtrip") {
    const auto back = QCheckpoint::from_text(text);
    CHECK(back.table == q);
    CHECK(table_hash(back.table) == table_hash(q));
    CHECK(back.params.alpha == 0.05);
    CHECK(back.params.gamma == 0.9);
    CHECK(back.stage == 3);
    CHECK(back.stage_models == 4);
    CHECK(back.stage_attempts == 17);
    CHECK(back.rng_state == rng.state());
    CHECK(back.meta_value("iteration") == "42");
    CHECK(back.meta_value("note") == "a b");
    CHECK_FALSE(back.meta_value("missing"));
    CHECK(back.to_text() == text);
  }
  SUBCASE("truncation is detected") {
    CHECK_THROWS_AS(QCheckpoint::from_text(text.substr(0, text.size() / 2)), IntegrityError);
    CHECK_THROWS_AS(QCheckpoint::from_text(text.substr(0, text.size() - 1)), IntegrityError);
  }
  SUBCASE("a flipped byte is detected") {
    auto bad = text;
    const auto pos = bad.find("q 1");
    REQUIRE(pos != std::string::npos);
    bad[pos + 2] = '2';
    CHECK_THROWS_AS(QCheckpoint::from_text(bad), IntegrityError);
  }
}

TEST_CASE("table hash tracks contents") {
  QTable a, b;
  CHECK(table_hash(a) == table_hash(b));
  b.set(initial_state(), B0, 0.6);
  CHECK(table_hash(a) != table_hash(b));
  CHECK(table_hash(QTable(0.5)) != table_hash(QTable(0.4)));
}
