#include <doctest.h>

#include <string>

#include "../support/temp_dir.hpp"
#include "blockq/block_catalog.hpp"
#include "blockq/errors.hpp"

using namespace blockq;

namespace {

std::string shipped_text() { return testing::slurp(BLOCKQ_SOURCE_DIR "/data/catalog.txt"); }

std::string replace_line(std::string text, const std::string& prefix, const std::string& line) {
  const auto at = text.find(prefix);
  REQUIRE(at != std::string::npos);
  const auto end = text.find('\n', at);
  return text.replace(at, end - at, line);
}

}  // namespace

TEST_CASE("block codes format and parse") {
  CHECK(format_code(BlockCode::block(0)) == "B(0)");
  CHECK(format_code(BlockCode::block(11)) == "B(11)");
  CHECK(format_code(BlockCode::gap()) == "GAP(10)");
  CHECK(format_code(BlockCode::sm(), 100) == "SM(100)");
  CHECK(parse_code("B(7)") == BlockCode::block(7));
  CHECK(parse_code("GAP(10)") == BlockCode::gap());
  CHECK(parse_code_token("SM(43)").classes == 43);
  CHECK_FALSE(parse_code_token("B(3)").classes.has_value());
  CHECK_THROWS_AS(parse_code("B(12)"), ParseError);
  CHECK_THROWS_AS(parse_code("B(-1)"), ParseError);
  CHECK_THROWS_AS(parse_code("SM(0)"), ParseError);
  CHECK_THROWS_AS(parse_code("C(1)"), ParseError);
  CHECK_THROWS_AS(parse_code("B(1"), ParseError);
  CHECK_THROWS_AS(BlockCode::block(12), ContractViolation);
}

TEST_CASE("every code roundtrips through its text form") {
  for (int ord = 0; ord < kCodeCount; ++ord) {
    const auto code = BlockCode::from_ordinal(ord);
    CHECK(parse_code(format_code(code)) == code);
    CHECK(code.ordinal() == ord);
  }
}

TEST_CASE("shipped catalog matches the block families") {
  const Catalog& cat = catalog();
  CHECK(cat.size() == 14);
  CHECK(cat.blocks().size() == 12);
  CHECK(cat.terminators().size() == 2);
  CHECK(cat.block(0).family == Family::Dense);
  CHECK(cat.block(0).spatial_factor == Rational{1, 4});
  for (int n = 1; n <= 4; ++n) CHECK(cat.block(n).family == Family::Residual);
  for (int n = 5; n <= 11; ++n) CHECK(cat.block(n).family == Family::InceptionLike);
  CHECK(cat.block(1).concat_mode == ConcatMode::None);
  CHECK(cat.block(2).concat_mode == ConcatMode::FinalOnly);
  CHECK(cat.block(3).concat_mode == ConcatMode::FinalOnly);
  CHECK(cat.block(4).concat_mode == ConcatMode::EveryUnit);
  for (int n = 5; n <= 7; ++n) CHECK(cat.block(n).concat_mode == ConcatMode::None);
  for (int n = 8; n <= 11; ++n) CHECK(cat.block(n).concat_mode == ConcatMode::FinalOnly);
  // B(5)..B(7) share a template and differ in width only
  CHECK(cat.block(5).topology == cat.block(6).topology);
  CHECK(cat.block(5).channel_profile != cat.block(6).channel_profile);
  CHECK(cat.block(6).channel_profile != cat.block(7).channel_profile);
  CHECK(&catalog() == &Catalog::builtin());
}

TEST_CASE("compiled-in catalog equals the shipped file") {
  const auto parsed = Catalog::parse(shipped_text(), "catalog.txt");
  for (int n = 0; n < kBlockCount; ++n) {
    CHECK(parsed.block(n).channel_profile == catalog().block(n).channel_profile);
    CHECK(parsed.block(n).concat_mode == catalog().block(n).concat_mode);
  }
}

TEST_CASE("catalog validation rejects broken invariants") {
  const auto text = shipped_text();
  SUBCASE("dense block with a concat mode") {
    const auto bad = replace_line(text, "block 0 ",
                                  "block 0  family=dense units=2 concat=final order=bn_relu_conv growth=12 layers=12 "
                                  "stem=16 spatial=1/4");
    CHECK_THROWS_AS(Catalog::parse(bad), CatalogError);
  }
  SUBCASE("plain residual block with concat") {
    const auto bad = replace_line(text, "block 1 ",
                                  "block 1  family=residual units=3 concat=final order=conv_bn_relu "
                                  "channels=16,32,64 spatial=1/1");
    CHECK_THROWS_AS(Catalog::parse(bad), CatalogError);
  }
  SUBCASE("B(5) and B(6) with the same width") {
    const auto bad = replace_line(text, "block 6 ",
                                  "block 6  family=inception units=1 concat=none order=conv_bn_relu channels=64 "
                                  "spatial=1/1 template=inception");
    CHECK_THROWS_AS(Catalog::parse(bad), CatalogError);
  }
  SUBCASE("missing block") {
    CHECK_THROWS_AS(Catalog::parse(replace_line(text, "block 11 ", "")), CatalogError);
  }
  SUBCASE("unknown key names the line") {
    const auto bad = replace_line(text, "block 2 ",
                                  "block 2  family=residual units=3 concat=final order=conv_bn_relu "
                                  "channels=16,32,64 spatial=1/1 colour=red");
    try {
      Catalog::parse(bad, "bad.txt");
      FAIL("expected CatalogError");
    } catch (const CatalogError& e) {
      CHECK(std::string(e.what()).find("bad.txt:") != std::string::npos);
    }
  }
}

TEST_CASE("channel overrides") {
  const auto cat = catalog().with_channels(3, {8, 16, 32});
  CHECK(cat.block(3).channel_profile == std::vector<int>{8, 16, 32});
  CHECK(catalog().block(3).channel_profile == std::vector<int>{32, 64, 128});
  CHECK_THROWS_AS(catalog().with_channels(3, {8, 16}), CatalogError);
  CHECK_THROWS_AS(catalog().with_channels(3, {8, 0, 32}), CatalogError);
  CHECK_THROWS(catalog().with_channels(12, {8}));
}

TEST_CASE("catalog file loading") {
  testing::TempDir dir;
  testing::spit(dir / "cat.txt", shipped_text());
  CHECK(Catalog::load(dir / "cat.txt").format_version() == 1);
  CHECK_THROWS_AS(Catalog::load(dir / "missing.txt"), IoError);
}
