#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace blockq {

inline constexpr int kBlockCount = 12;
inline constexpr int kCodeCount = kBlockCount + 2;
inline constexpr int kDefaultClassCount = 10;

/// One entry of the block-code vocabulary: a block module B(0)..B(11) or one
/// of the two terminators. The ordinal (blocks 0..11, GAP 12, SM 13) is also
/// the canonical action order used for enumeration and argmax tie-breaking.
class BlockCode {
 public:
  static BlockCode block(int n);
  static constexpr BlockCode gap() { return BlockCode(kBlockCount); }
  static constexpr BlockCode sm() { return BlockCode(kBlockCount + 1); }
  static BlockCode from_ordinal(int ordinal);

  constexpr int ordinal() const { return ordinal_; }
  constexpr bool is_block() const { return ordinal_ < kBlockCount; }
  constexpr bool is_gap() const { return ordinal_ == kBlockCount; }
  constexpr bool is_sm() const { return ordinal_ == kBlockCount + 1; }
  constexpr bool is_terminator() const { return !is_block(); }

  // Block number n of B(n); throws ContractViolation on a terminator.
  int index() const;

  friend constexpr auto operator<=>(BlockCode, BlockCode) = default;

 private:
  constexpr explicit BlockCode(int ordinal) : ordinal_(static_cast<std::uint8_t>(ordinal)) {}
  std::uint8_t ordinal_;
};

/// Renders "B(n)", "GAP(classes)" or "SM(classes)".
std::string format_code(BlockCode code, int classes = kDefaultClassCount);

/// Inverse of format_code. The class count carried by GAP/SM is validated
/// (positive integer) but not returned; use parse_code_token for it.
BlockCode parse_code(std::string_view text);

struct ParsedCode {
  BlockCode code;
  std::optional<int> classes;  // set for terminators
};
ParsedCode parse_code_token(std::string_view text);

enum class Family { Dense, Residual, InceptionLike };
enum class ConcatMode { None, FinalOnly, EveryUnit };
enum class ConvOrder { ConvBnRelu, BnReluConv };

std::string_view to_string(Family f);
std::string_view to_string(ConcatMode m);
std::string_view to_string(ConvOrder o);

struct Rational {
  int num = 1;
  int den = 1;
  friend bool operator==(const Rational&, const Rational&) = default;
};

// One node of an inception-like block's internal topology.
struct TemplateOp {
  enum class Kind { Conv, AvgPool, Add, Concat };
  std::string id;
  Kind kind = Kind::Conv;
  int kernel = 1;
  Rational width;  // fraction of the block's output channels (conv only)
  std::vector<std::string> inputs;
};

struct BlockTemplate {
  std::string name;
  std::vector<TemplateOp> ops;
};

struct BlockSpec {
  BlockCode code = BlockCode::sm();
  Family family = Family::Dense;
  int unit_count = 0;
  ConcatMode concat_mode = ConcatMode::None;
  ConvOrder order = ConvOrder::ConvBnRelu;
  std::vector<int> channel_profile;
  Rational spatial_factor;
  int growth_rate = 0;             // dense only
  int dense_layers_per_block = 0;  // dense only
  int stem_channels = 0;           // dense only
  std::shared_ptr<const BlockTemplate> topology;  // inception-like only
};

struct TerminatorSpec {
  BlockCode code = BlockCode::sm();
  std::string_view description;
};

/// Immutable block catalog, normally parsed from data/catalog.txt.
class Catalog {
 public:
  static Catalog parse(std::string_view text, std::string_view origin = "<memory>");
  static Catalog load(const std::filesystem::path& path);
  // The catalog file shipped with the repository, compiled in.
  static const Catalog& builtin();

  const BlockSpec& block(int n) const;
  const BlockSpec& spec(BlockCode code) const { return block(code.index()); }
  std::span<const BlockSpec> blocks() const { return blocks_; }
  std::span<const TerminatorSpec> terminators() const { return terminators_; }
  std::size_t size() const { return blocks_.size() + terminators_.size(); }
  int format_version() const { return format_version_; }

  /// Copy with one block's channel profile replaced (re-validated).
  Catalog with_channels(int block, std::vector<int> profile) const;

 private:
  Catalog() = default;
  void validate() const;

  int format_version_ = 0;
  std::vector<BlockSpec> blocks_;
  std::vector<TerminatorSpec> terminators_;
};

/// The shipped catalog; identical across calls.
const Catalog& catalog();

}  // namespace blockq
