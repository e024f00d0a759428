#include <doctest.h>

#include <json.hpp>

#include "blockq/errors.hpp"
#include "blockq/replay_db.hpp"
#include "support/temp_dir.hpp"

using namespace blockq;

namespace {

ReplayRow sample_row() {
  ReplayRow r;
  r.iteration = 12;
  r.epsilon = 0.7;
  r.net = "[B(0),B(3),GAP(10),SM(10)]";
  r.accuracy = 0.8765;
  r.params = 1234567;
  r.timestamp = "1970-01-01T00:00:12Z";
  r.q_hash = "00ff00ff00ff00ff";
  return r;
}

}  // namespace

TEST_CASE("row codec roundtrip") {
  auto r = sample_row();
  CHECK(decode_row(encode_row(r)) == r);
  r.params = -1;
  r.cached = true;
  r.status = "failed";
  r.accuracy = 0.0;
  const auto line = encode_row(r);
  CHECK(line.find("\"params\":null") != std::string::npos);
  CHECK(decode_row(line) == r);
}

TEST_CASE("row codec rejects bad rows") {
  CHECK_THROWS_AS(decode_row("{"), ParseError);
  CHECK_THROWS_AS(decode_row("[]"), ParseError);
  auto j = nlohmann::json::parse(encode_row(sample_row()));
  j.erase("net");
  CHECK_THROWS_WITH_AS(decode_row(j.dump()), doctest::Contains("'net'"), ParseError);
  j = nlohmann::json::parse(encode_row(sample_row()));
  j["iteration"] = "twelve";
  CHECK_THROWS_WITH_AS(decode_row(j.dump()), doctest::Contains("'iteration'"), ParseError);
  auto r = sample_row();
  r.status = "maybe";
  CHECK_THROWS_AS(decode_row(encode_row(r)), ParseError);
  r = sample_row();
  r.accuracy = 1.2;
  CHECK_THROWS_AS(decode_row(encode_row(r)), ParseError);
}

TEST_CASE("DB text") {
  auto a = sample_row();
  auto b = sample_row();
  b.iteration = 13;
  const auto text = encode_row(a) + "\n\n" + encode_row(b) + "\n";
  CHECK(parse_replay_db(text) == std::vector<ReplayRow>{a, b});
  CHECK_THROWS_WITH_AS(parse_replay_db(text + "oops\n"), doctest::Contains("line 4"), ParseError);

  testing::TempDir dir;
  testing::spit(dir / "db.jsonl", text);
  CHECK(read_replay_db(dir / "db.jsonl").size() == 2);
  CHECK_THROWS_AS(read_replay_db(dir / "missing.jsonl"), IoError);
}
