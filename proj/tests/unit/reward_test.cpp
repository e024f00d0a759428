#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <set>

#include <json.hpp>

#include "blockq/errors.hpp"
#include "blockq/qlearning.hpp"
#include "blockq/reward.hpp"
#include "blockq/rng.hpp"

using namespace blockq;
using namespace std::chrono_literals;

namespace {

const BlockCode B0 = BlockCode::block(0);
const BlockCode B1 = BlockCode::block(1);
const BlockCode B3 = BlockCode::block(3);
const BlockCode B4 = BlockCode::block(4);
const BlockCode GAP = BlockCode::gap();
const BlockCode SM = BlockCode::sm();

Trajectory net(std::vector<BlockCode> b) { return Trajectory::from_blocks(std::move(b)); }

EvalRequest request(std::uint64_t id) { return make_request(id, net({B0, B3, SM}), 10, "cifar10"); }

// Answers every request with the given accuracy, echoing the id.
WireServer::LineHandler echo(double accuracy) {
  return WireServer::protocol_handler(
      [accuracy](const EvalRequest& req) { return EvalResponse::success(req.id, accuracy, "stub"); });
}

}  // namespace

TEST_CASE("poison codes score the poison value") {
  const SimulatedOracleConfig cfg;
  CHECK(oracle_evaluate(cfg, {B0, B1, SM}) == 0.1);
  CHECK(oracle_evaluate(cfg, {B0, B3, B1, GAP, SM}) == 0.1);
}

TEST_CASE("the oracle ignores block order") {
  SimulatedOracleConfig cfg;
  cfg.noise_sigma = 0.02;
  cfg.seed = 5;
  CHECK(oracle_evaluate(cfg, {B0, B4, B3, SM}) == oracle_evaluate(cfg, {B0, B3, B4, SM}));
}

TEST_CASE("flat base scores give the base plus the concat bonus") {
  SimulatedOracleConfig cfg;
  cfg.base_scores.fill(0.8);
  CHECK(oracle_evaluate(cfg, {B0, B3, SM}) == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(oracle_evaluate(cfg, {B0, BlockCode::block(9), SM}) == doctest::Approx(0.83).epsilon(1e-12));
  CHECK(oracle_evaluate(cfg, {B0, BlockCode::block(6), SM}) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(oracle_evaluate(cfg, {B0, B0, GAP, SM}) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("oracle determinism") {
  SimulatedOracleConfig cfg;
  cfg.noise_sigma = 0.05;
  cfg.seed = 17;
  const std::vector<BlockCode> blocks{B0, B3, BlockCode::block(10), GAP, SM};
  std::set<double> seen;
  for (int i = 0; i < 10000; ++i) seen.insert(oracle_evaluate(cfg, blocks));
  CHECK(seen.size() == 1);
}

TEST_CASE("oracle range over the whole space") {
  SimulatedOracleConfig cfg;
  cfg.noise_sigma = 0.2;
  cfg.seed = 3;
  std::size_t outside = 0, visited = 0;
  for_each_trajectory(5, [&](const Trajectory& t) {
    const double v = oracle_evaluate(cfg, t);
    outside += !(v >= 0.0 && v <= 1.0);
    ++visited;
  });
  CHECK(visited == 45242);
  CHECK(outside == 0);
}

TEST_CASE("poison dominates every other block") {
  SimulatedOracleConfig cfg;
  cfg.noise_sigma = 0.05;
  Rng rng(12);
  const QTable q;
  int checked = 0;
  while (checked < 1000) {
    const auto t = sample_trajectory(q, 1.0, rng);
    const auto& b = t.blocks();
    if (std::find(b.begin(), b.end(), B1) == b.end()) continue;
    CHECK(oracle_evaluate(cfg, t) == cfg.poison_value);
    ++checked;
  }
}

TEST_CASE("oracle rejects illegal sequences and bad settings") {
  const SimulatedOracleConfig cfg;
  CHECK_THROWS_AS(oracle_evaluate(cfg, {B3, SM}), ConstraintError);
  CHECK_THROWS_AS(oracle_evaluate(cfg, {B0, GAP}), ConstraintError);
  SimulatedOracleConfig bad;
  bad.noise_sigma = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.poison_codes = {SM};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("request codec") {
  auto req = request(7);
  req.dataset = "svhn";
  req.budget.epochs = 3;
  const auto line = encode_request(req);
  CHECK(line.find('\n') == std::string::npos);
  const auto back = decode_request(line);
  CHECK(back.id == 7);
  CHECK(back.net_string == "[B(0),B(3),SM(10)]");
  CHECK(back.blocks == req.blocks);
  CHECK(back.dataset == "svhn");
  CHECK(back.budget.epochs == 3);
  CHECK(back.budget.max_retrains == 5);
  CHECK(back.budget.lr0 == 0.001);
  CHECK(back.budget.drop_factor == 0.2);
  CHECK(back.budget.retrain_drop_factor == 0.4);
  CHECK(back.budget.drop_every == 5);

  CHECK(decode_request(R"({"id":1,"net":"[B(0),SM(10)]","future_field":[1,2]})").id == 1);
  CHECK_THROWS_AS(decode_request("{"), ParseError);
  CHECK_THROWS_AS(decode_request(R"({"net":"[B(0),SM(10)]"})"), ParseError);
  CHECK_THROWS_AS(decode_request(R"({"id":"x","net":"[B(0),SM(10)]"})"), ParseError);
  CHECK_THROWS_AS(decode_request(R"({"id":1,"net":"[B(3),SM(10)]"})"), ConstraintError);
}

TEST_CASE("response codec") {
  const auto ok = decode_response(encode_response(EvalResponse::success(4, 0.42, "done")));
  CHECK(ok.ok());
  CHECK(ok.id == 4);
  CHECK(ok.accuracy == 0.42);
  CHECK(ok.detail == "done");

  const auto failed = decode_response(encode_response(EvalResponse::failure(5, "diverged")));
  CHECK_FALSE(failed.ok());
  CHECK_FALSE(failed.accuracy);
  CHECK(failed.detail == "diverged");

  CHECK(decode_response("garbage").detail.starts_with("malformed response"));
  CHECK(decode_response(R"({"id":1,"status":"ok"})").detail.starts_with("malformed response"));
  CHECK(decode_response(R"({"id":1,"status":"ok","accuracy":1.5})").detail.starts_with("accuracy out of range"));
  CHECK(decode_response(R"({"id":1,"status":"ok","accuracy":0.5,"extra":true})").ok());
}

TEST_CASE("endpoint parsing") {
  const auto ep = Endpoint::parse("trainer.local:7000");
  CHECK(ep.host == "trainer.local");
  CHECK(ep.port == 7000);
  CHECK(ep.to_string() == "trainer.local:7000");
  CHECK_THROWS_AS(Endpoint::parse("7000"), ParseError);
  CHECK_THROWS_AS(Endpoint::parse("host:0"), ParseError);
  CHECK_THROWS_AS(Endpoint::parse("host:http"), ParseError);
}

TEST_CASE("external evaluation against stub trainers") {
  SUBCASE("echo") {
    WireServer server(echo(0.42));
    ExternalEvaluator client({server.endpoint()});
    const auto resp = client.evaluate(request(11), 2s);
    CHECK(resp.ok());
    CHECK(resp.id == 11);
    CHECK(resp.accuracy == 0.42);
  }
  SUBCASE("id mismatch") {
    WireServer server([](std::string_view) -> std::optional<std::string> {
      return encode_response(EvalResponse::success(999, 0.5));
    });
    ExternalEvaluator client({server.endpoint()});
    const auto resp = client.evaluate(request(3), 2s);
    CHECK_FALSE(resp.ok());
    CHECK(resp.id == 3);
    CHECK(resp.detail == "id mismatch");
  }
  SUBCASE("silent trainer times out on schedule") {
    WireServer server([](std::string_view) -> std::optional<std::string> { return std::nullopt; });
    ExternalEvaluator client({server.endpoint()});
    const auto t0 = std::chrono::steady_clock::now();
    const auto resp = client.evaluate(request(1), 1s);
    const auto elapsed = std::chrono::steady_clock::now() - t0;
    CHECK_FALSE(resp.ok());
    CHECK(resp.detail == "timeout");
    CHECK(elapsed >= 800ms);
    CHECK(elapsed <= 1200ms);
  }
  SUBCASE("malformed reply") {
    WireServer server([](std::string_view) -> std::optional<std::string> { return std::string("not json"); });
    ExternalEvaluator client({server.endpoint()});
    const auto resp = client.evaluate(request(2), 2s);
    CHECK_FALSE(resp.ok());
    CHECK(resp.id == 2);
    CHECK(resp.detail.starts_with("malformed response"));
  }
  SUBCASE("accuracy out of range") {
    WireServer server(echo(1.7));
    ExternalEvaluator client({server.endpoint()});
    const auto resp = client.evaluate(request(2), 2s);
    CHECK_FALSE(resp.ok());
    CHECK(resp.detail.starts_with("accuracy out of range"));
  }
  SUBCASE("trainer reports failure") {
    WireServer server(WireServer::protocol_handler(
        [](const EvalRequest& req) { return EvalResponse::failure(req.id, "out of memory"); }));
    ExternalEvaluator client({server.endpoint()});
    const auto resp = client.evaluate(request(8), 2s);
    CHECK_FALSE(resp.ok());
    CHECK(resp.detail == "out of memory");
  }
  SUBCASE("unparseable request is answered with a parse failure") {
    const auto handler = WireServer::protocol_handler([](const EvalRequest& r) { return EvalResponse::success(r.id, 1); });
    const auto reply = handler(R"({"id":4,"net":"[B(2),SM(10)]"})");
    REQUIRE(reply);
    const auto j = nlohmann::json::parse(*reply);
    CHECK(j["status"] == "failed");
    CHECK(j["detail"].get<std::string>().starts_with("parse: "));
  }
  SUBCASE("no listener is a transport error") {
    Endpoint dead;
    {
      WireServer server(echo(0.5));
      dead = server.endpoint();
    }
    ExternalEvaluator client({dead});
    const auto resp = client.evaluate(request(1), 1s);
    CHECK_FALSE(resp.ok());
    CHECK(resp.detail.starts_with("transport: "));
  }
}

TEST_CASE("concurrent requests are matched by id") {
  WireServer a(WireServer::protocol_handler(
      [](const EvalRequest& req) { return EvalResponse::success(req.id, static_cast<double>(req.id) / 100.0); }));
  WireServer b(WireServer::protocol_handler(
      [](const EvalRequest& req) { return EvalResponse::success(req.id, static_cast<double>(req.id) / 100.0); }));
  ExternalEvaluator client({a.endpoint(), b.endpoint()});
  std::vector<EvalRequest> reqs;
  for (std::uint64_t id = 1; id <= 12; ++id) reqs.push_back(request(id));
  int callbacks = 0;
  const auto out = client.evaluate_many(reqs, 3s, [&](const EvalResponse&) { ++callbacks; });
  CHECK(callbacks == 12);
  REQUIRE(out.size() == 12);
  std::set<std::uint64_t> ids;
  for (const auto& r : out) {
    CHECK(r.ok());
    CHECK(*r.accuracy == doctest::Approx(static_cast<double>(r.id) / 100.0));
    ids.insert(r.id);
  }
  CHECK(ids.size() == 12);
}
