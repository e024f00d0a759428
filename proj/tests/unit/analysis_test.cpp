#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "blockq/analysis.hpp"
#include "blockq/errors.hpp"
#include "blockq/harness.hpp"
#include "support/temp_dir.hpp"

using namespace blockq;

namespace {

ReplayRow row(std::int64_t iteration, std::string net, double acc, double eps = 1.0, std::int64_t params = 1'000'000) {
  ReplayRow r;
  r.iteration = iteration;
  r.epsilon = eps;
  r.net = std::move(net);
  r.accuracy = acc;
  r.params = params;
  return r;
}

std::vector<ReplayRow> oracle_run(const testing::TempDir& dir) {
  SearchConfig cfg;
  cfg.seed = 8;
  cfg.oracle.seed = 8;
  cfg.oracle.noise_sigma = 0.02;
  cfg.replay_batch = 20;
  cfg.db_path = dir / "replay.jsonl";
  cfg.checkpoint_path = dir / "search.ckpt";
  return run_search(cfg).records;
}

}  // namespace

TEST_CASE("top-k ordering") {
  const std::vector<ReplayRow> db{row(1, "[B(0),SM(10)]", .92), row(2, "[B(0),B(2),SM(10)]", .95),
                                  row(3, "[B(0),B(3),SM(10)]", .90)};
  const auto t = top_k(db, 3);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0].accuracy == .95);
  CHECK(t.rows[1].accuracy == .92);
  CHECK(t.rows[2].accuracy == .90);
  CHECK(t.note.empty());
  CHECK(top_k(db, 1).rows.size() == 1);
}

TEST_CASE("top-k ties go to the earlier iteration") {
  const std::vector<ReplayRow> db{row(7, "[B(0),B(2),SM(10)]", .95), row(3, "[B(0),B(4),SM(10)]", .95)};
  const auto t = top_k(db, 2);
  CHECK(t.rows[0].iteration == 3);
  CHECK(t.rows[1].iteration == 7);
}

TEST_CASE("top-k depends on contents, not row order") {
  std::vector<ReplayRow> db;
  for (int i = 1; i <= 30; ++i) db.push_back(row(i, "[B(0)" + std::string(i % 5, ' ') + ",SM(10)]", (i % 7) / 10.0));
  const auto expected = render_top_k(top_k(db, 10));
  std::mt19937 g(3);
  std::shuffle(db.begin(), db.end(), g);
  CHECK(render_top_k(top_k(db, 10)) == expected);
}

TEST_CASE("top-k counts each net once, at its first iteration") {
  auto cached = row(9, "[B(0),SM(10)]", .92);
  cached.cached = true;
  const std::vector<ReplayRow> db{row(4, "[B(0),SM(10)]", .92), cached};
  const auto t = top_k(db, 5);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].iteration == 4);
  CHECK(t.note == "only 1 distinct models (k=5)");
  CHECK(render_top_k(t).ends_with("# only 1 distinct models (k=5)\n"));
  CHECK_THROWS_AS(top_k(db, 0), ContractViolation);
}

TEST_CASE("top-k row formatting") {
  const RankedModel m{"[B(0),B(0),SM(10)]", 0.9532, 131, 4'320'000};
  CHECK(format_ranked(m) == "[B(0),B(0),SM(10)] 95.32 131 4.32M");
  CHECK(format_ranked({"[B(0),B(0),B(0),SM(10)]", 0.5, 2, -1}) == "[B(0),B(0),B(0),SM(10)] 50.00 2 -");
}

TEST_CASE("stage statistics") {
  SUBCASE("mean of one stage") {
    const auto s = stage_stats(std::vector<ReplayRow>{row(1, "[B(0),SM(10)]", .2), row(2, "[B(0),GAP(10),SM(10)]", .4)});
    REQUIRE(s.size() == 1);
    CHECK(s[0].models == 2);
    CHECK(s[0].mean_accuracy == doctest::Approx(.3).epsilon(1e-12));
    CHECK(s[0].min_accuracy == .2);
    CHECK(s[0].best_accuracy == .4);
    CHECK(s[0].best_net == "[B(0),GAP(10),SM(10)]");
  }
  SUBCASE("stages come out in descending epsilon, cached rows excluded from the mean") {
    auto c = row(4, "[B(0),SM(10)]", .2, 0.5);
    c.cached = true;
    const std::vector<ReplayRow> db{row(1, "[B(0),SM(10)]", .2, 0.5), row(2, "[B(0),B(2),SM(10)]", .6, 1.0), c,
                                    row(5, "[B(0),B(3),SM(10)]", .8, 0.5)};
    const auto s = stage_stats(db);
    REQUIRE(s.size() == 2);
    CHECK(s[0].epsilon == 1.0);
    CHECK(s[1].epsilon == 0.5);
    CHECK(s[1].models == 2);
    CHECK(s[1].cached == 1);
    CHECK(s[1].mean_accuracy == doctest::Approx(.5).epsilon(1e-12));
  }
}

TEST_CASE("stage statistics on an oracle run") {
  testing::TempDir dir;
  const auto db = oracle_run(dir);
  const auto stats = stage_stats(db);
  REQUIRE(stats.size() == 10);
  CHECK(stats.back().mean_accuracy > stats.front().mean_accuracy);

  // Independent streaming pass.
  for (const auto& s : stats) {
    double sum = 0;
    int n = 0;
    for (const auto& r : db) {
      if (r.epsilon == s.epsilon && !r.cached) {
        sum += r.accuracy;
        ++n;
      }
    }
    CHECK(n == s.models);
    CHECK(std::fabs(sum / n - s.mean_accuracy) < 1e-12);
    CHECK(s.mean_accuracy >= s.min_accuracy);
    CHECK(s.mean_accuracy <= s.best_accuracy);
  }

  const auto csv = stage_stats_csv(stats);
  CHECK(csv.starts_with("epsilon,models,cached,failed,mean_accuracy,min_accuracy,best_accuracy,best_net\n"));
  CHECK(parse_stage_stats_csv(csv) == stats);
  CHECK_THROWS_AS(parse_stage_stats_csv("header\n1,2,3\n"), ParseError);
}

TEST_CASE("structural queries on an oracle run") {
  testing::TempDir dir;
  const auto db = oracle_run(dir);

  const auto contains = structural_query(db, "contains:B(1)");
  CHECK(contains.starts_with("with B(1): nets="));
  int with_b1 = 0;
  for (const auto& r : db) {
    if (r.net.find("B(1)") == std::string::npos) continue;
    CHECK(r.accuracy == 0.1);
    ++with_b1;
  }
  CHECK(with_b1 > 0);
  CHECK(contains.find("best=10.00") != std::string::npos);

  const auto swaps = structural_query(db, "swap_pairs");
  CHECK(swaps.find("swap pairs: ") != std::string::npos);
  std::size_t pos = 0;
  while ((pos = swaps.find("delta=", pos)) != std::string::npos) {
    pos += 6;
    CHECK(swaps.substr(pos, 4) == "0.00");
  }

  const auto concat = structural_query(db, "concat_effect");
  CHECK(concat.find("residual concat=") != std::string::npos);

  CHECK_THROWS_AS(structural_query(db, "contains:B(12)"), ParseError);
  CHECK_THROWS_AS(structural_query(db, "contains:GAP"), ParseError);
  CHECK_THROWS_WITH_AS(structural_query(db, "histogram"), doctest::Contains("swap_pairs"), ParseError);
}
