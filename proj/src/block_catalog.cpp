#include "blockq/block_catalog.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "blockq/errors.hpp"
#include "catalog_data.hpp"
#include "text_util.hpp"

namespace blockq {

using detail::parse_int;
using detail::split;
using detail::tokens;
using detail::trim;

BlockCode BlockCode::block(int n) {
  if (n < 0 || n >= kBlockCount) {
    throw ContractViolation("block code B(" + std::to_string(n) + ") outside 0..11");
  }
  return BlockCode(n);
}

BlockCode BlockCode::from_ordinal(int ordinal) {
  if (ordinal < 0 || ordinal >= kCodeCount) {
    throw ContractViolation("block-code ordinal " + std::to_string(ordinal) + " outside 0..13");
  }
  return BlockCode(ordinal);
}

int BlockCode::index() const {
  if (!is_block()) throw ContractViolation("terminator has no block index");
  return ordinal_;
}

std::string format_code(BlockCode code, int classes) {
  if (code.is_block()) return "B(" + std::to_string(code.index()) + ")";
  return std::string(code.is_gap() ? "GAP(" : "SM(") + std::to_string(classes) + ")";
}

ParsedCode parse_code_token(std::string_view text) {
  const auto open = text.find('(');
  if (open == std::string_view::npos || text.size() < open + 3 || text.back() != ')') {
    throw ParseError("malformed block code '" + std::string(text) + "'");
  }
  const auto head = text.substr(0, open);
  const auto arg = text.substr(open + 1, text.size() - open - 2);
  // Digits only: no sign, no whitespace.
  if (arg.empty() || !std::all_of(arg.begin(), arg.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw ParseError("malformed block code '" + std::string(text) + "'");
  }
  const auto value = parse_int<int>(arg);
  if (!value) throw ParseError("malformed block code '" + std::string(text) + "'");
  if (head == "B") {
    if (*value >= kBlockCount) {
      throw ParseError("block code '" + std::string(text) + "' outside B(0)..B(11)");
    }
    return {BlockCode::block(*value), std::nullopt};
  }
  if (head == "GAP" || head == "SM") {
    if (*value < 1) throw ParseError("class count in '" + std::string(text) + "' must be positive");
    return {head == "GAP" ? BlockCode::gap() : BlockCode::sm(), *value};
  }
  throw ParseError("unknown block code '" + std::string(text) + "'");
}

BlockCode parse_code(std::string_view text) { return parse_code_token(text).code; }

std::string_view to_string(Family f) {
  switch (f) {
    case Family::Dense: return "dense";
    case Family::Residual: return "residual";
    case Family::InceptionLike: return "inception";
  }
  return "?";
}

std::string_view to_string(ConcatMode m) {
  switch (m) {
    case ConcatMode::None: return "none";
    case ConcatMode::FinalOnly: return "final";
    case ConcatMode::EveryUnit: return "every";
  }
  return "?";
}

std::string_view to_string(ConvOrder o) {
  return o == ConvOrder::ConvBnRelu ? "conv_bn_relu" : "bn_relu_conv";
}

namespace {

struct LineError {
  std::string_view origin;
  int line;
  [[noreturn]] void fail(const std::string& msg) const {
    throw CatalogError(std::string(origin) + ":" + std::to_string(line) + ": " + msg);
  }
};

Rational parse_rational(std::string_view s, const LineError& at) {
  const auto parts = split(s, '/');
  if (parts.size() != 2) at.fail("expected <num>/<den>, got '" + std::string(s) + "'");
  const auto n = parse_int<int>(parts[0]);
  const auto d = parse_int<int>(parts[1]);
  if (!n || !d || *n <= 0 || *d <= 0) at.fail("bad ratio '" + std::string(s) + "'");
  return {*n, *d};
}

int parse_positive(std::string_view s, const LineError& at, std::string_view what) {
  const auto v = parse_int<int>(s);
  if (!v || *v <= 0) at.fail(std::string(what) + " must be a positive integer, got '" + std::string(s) + "'");
  return *v;
}

std::map<std::string, std::string, std::less<>> parse_fields(std::span<const std::string_view> toks,
                                                             const LineError& at) {
  std::map<std::string, std::string, std::less<>> out;
  for (auto t : toks) {
    const auto eq = t.find('=');
    if (eq == std::string_view::npos || eq == 0) at.fail("expected key=value, got '" + std::string(t) + "'");
    const std::string key(t.substr(0, eq));
    if (out.count(key)) at.fail("duplicate key '" + key + "'");
    out.emplace(key, std::string(t.substr(eq + 1)));
  }
  return out;
}

std::string take(std::map<std::string, std::string, std::less<>>& fields, std::string_view key) {
  const auto it = fields.find(key);
  if (it == fields.end()) return {};
  auto v = std::move(it->second);
  fields.erase(it);
  return v;
}

TemplateOp parse_op(std::span<const std::string_view> toks, const LineError& at) {
  // op <id> <kind> key=value...
  if (toks.size() < 3) at.fail("op needs an id and a kind");
  TemplateOp op;
  op.id = std::string(toks[1]);
  if (op.id == "in") at.fail("'in' is reserved for the block input");
  const auto kind = toks[2];
  if (kind == "conv") op.kind = TemplateOp::Kind::Conv;
  else if (kind == "avgpool") op.kind = TemplateOp::Kind::AvgPool;
  else if (kind == "add") op.kind = TemplateOp::Kind::Add;
  else if (kind == "concat") op.kind = TemplateOp::Kind::Concat;
  else at.fail("unknown op kind '" + std::string(kind) + "'");

  auto fields = parse_fields(toks.subspan(3), at);
  const auto k = take(fields, "k");
  const auto w = take(fields, "w");
  const auto in = take(fields, "in");
  if (!fields.empty()) at.fail("unknown op key '" + fields.begin()->first + "'");
  if (in.empty()) at.fail("op '" + op.id + "' has no inputs");
  for (auto s : split(in, ',')) op.inputs.emplace_back(s);

  const bool spatial = op.kind == TemplateOp::Kind::Conv || op.kind == TemplateOp::Kind::AvgPool;
  if (spatial) {
    if (k.empty()) at.fail("op '" + op.id + "' needs k=");
    op.kernel = parse_positive(k, at, "k");
    if (op.kernel % 2 == 0) at.fail("kernel must be odd for same padding");
    if (op.inputs.size() != 1) at.fail("op '" + op.id + "' takes exactly one input");
  } else {
    if (!k.empty()) at.fail("op '" + op.id + "' does not take k=");
    if (op.inputs.size() < 2) at.fail("op '" + op.id + "' needs at least two inputs");
  }
  if (op.kind == TemplateOp::Kind::Conv) {
    if (w.empty()) at.fail("conv op '" + op.id + "' needs w=");
    op.width = parse_rational(w, at);
  } else if (!w.empty()) {
    at.fail("op '" + op.id + "' does not take w=");
  }
  return op;
}

void check_template(const BlockTemplate& t, const LineError& at) {
  std::set<std::string, std::less<>> seen{"in"};
  for (const auto& op : t.ops) {
    for (const auto& in : op.inputs) {
      if (!seen.count(in)) at.fail("template '" + t.name + "': op '" + op.id + "' reads undefined '" + in + "'");
    }
    if (!seen.insert(op.id).second) at.fail("template '" + t.name + "': duplicate op id '" + op.id + "'");
  }
  if (!seen.count("out")) at.fail("template '" + t.name + "' has no 'out' op");
}

}  // namespace

Catalog Catalog::parse(std::string_view text, std::string_view origin) {
  Catalog cat;
  std::map<std::string, std::shared_ptr<BlockTemplate>, std::less<>> templates;
  std::map<int, std::pair<BlockSpec, std::string>> blocks;  // spec + template name
  std::set<int> terminators;
  std::shared_ptr<BlockTemplate> open_template;
  int template_line = 0;

  int lineno = 0;
  for (auto raw : split(text, '\n')) {
    ++lineno;
    const LineError at{origin, lineno};
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto toks = tokens(line);
    const auto head = toks[0];

    if (open_template) {
      if (head == "end") {
        if (toks.size() != 1) at.fail("'end' takes no arguments");
        check_template(*open_template, at);
        open_template.reset();
      } else if (head == "op") {
        open_template->ops.push_back(parse_op(toks, at));
      } else {
        at.fail("expected 'op' or 'end' inside template");
      }
      continue;
    }

    if (head == "format") {
      if (toks.size() != 2) at.fail("format takes one argument");
      cat.format_version_ = parse_positive(toks[1], at, "format");
      if (cat.format_version_ != 1) at.fail("unsupported catalog format " + std::to_string(cat.format_version_));
    } else if (head == "template") {
      if (toks.size() != 2) at.fail("template takes one name");
      const std::string name(toks[1]);
      if (templates.count(name)) at.fail("duplicate template '" + name + "'");
      open_template = std::make_shared<BlockTemplate>();
      open_template->name = name;
      templates.emplace(name, open_template);
      template_line = lineno;
    } else if (head == "terminator") {
      if (toks.size() != 2) at.fail("terminator takes one name");
      int ord = -1;
      if (toks[1] == "GAP") ord = BlockCode::gap().ordinal();
      else if (toks[1] == "SM") ord = BlockCode::sm().ordinal();
      else at.fail("unknown terminator '" + std::string(toks[1]) + "'");
      if (!terminators.insert(ord).second) at.fail("duplicate terminator");
    } else if (head == "block") {
      if (toks.size() < 2) at.fail("block needs a code");
      const auto n = parse_int<int>(toks[1]);
      if (!n || *n < 0 || *n >= kBlockCount) at.fail("block code '" + std::string(toks[1]) + "' outside 0..11");
      if (blocks.count(*n)) at.fail("duplicate block " + std::to_string(*n));

      auto fields = parse_fields(std::span(toks).subspan(2), at);
      BlockSpec spec;
      spec.code = BlockCode::block(*n);

      const auto family = take(fields, "family");
      if (family == "dense") spec.family = Family::Dense;
      else if (family == "residual") spec.family = Family::Residual;
      else if (family == "inception") spec.family = Family::InceptionLike;
      else at.fail("unknown family '" + family + "'");

      spec.unit_count = parse_positive(take(fields, "units"), at, "units");

      const auto concat = take(fields, "concat");
      if (concat == "none") spec.concat_mode = ConcatMode::None;
      else if (concat == "final") spec.concat_mode = ConcatMode::FinalOnly;
      else if (concat == "every") spec.concat_mode = ConcatMode::EveryUnit;
      else at.fail("unknown concat mode '" + concat + "'");

      const auto order = take(fields, "order");
      if (order == "conv_bn_relu") spec.order = ConvOrder::ConvBnRelu;
      else if (order == "bn_relu_conv") spec.order = ConvOrder::BnReluConv;
      else at.fail("unknown conv order '" + order + "'");

      spec.spatial_factor = parse_rational(take(fields, "spatial"), at);

      if (const auto ch = take(fields, "channels"); !ch.empty()) {
        for (auto c : split(ch, ',')) spec.channel_profile.push_back(parse_positive(c, at, "channels"));
      }
      if (const auto g = take(fields, "growth"); !g.empty()) spec.growth_rate = parse_positive(g, at, "growth");
      if (const auto l = take(fields, "layers"); !l.empty()) spec.dense_layers_per_block = parse_positive(l, at, "layers");
      if (const auto s = take(fields, "stem"); !s.empty()) spec.stem_channels = parse_positive(s, at, "stem");
      auto tmpl = take(fields, "template");
      if (!fields.empty()) at.fail("unknown block key '" + fields.begin()->first + "'");
      blocks.emplace(*n, std::make_pair(std::move(spec), std::move(tmpl)));
    } else {
      at.fail("unknown record '" + std::string(head) + "'");
    }
  }
  if (open_template) {
    LineError{origin, template_line}.fail("template '" + open_template->name + "' is missing 'end'");
  }
  if (cat.format_version_ == 0) LineError{origin, 0}.fail("missing 'format' record");

  for (auto& [n, entry] : blocks) {
    auto& [spec, tmpl] = entry;
    if (!tmpl.empty()) {
      const auto it = templates.find(tmpl);
      if (it == templates.end()) LineError{origin, 0}.fail("block " + std::to_string(n) + " names unknown template '" + tmpl + "'");
      spec.topology = it->second;
    }
    cat.blocks_.push_back(std::move(spec));
  }
  for (int ord : terminators) {
    const auto code = BlockCode::from_ordinal(ord);
    cat.terminators_.push_back({code, code.is_gap() ? "global average pooling" : "softmax classifier"});
  }
  cat.validate();
  return cat;
}

void Catalog::validate() const {
  auto fail = [](int n, const std::string& msg) {
    throw CatalogError("B(" + std::to_string(n) + "): " + msg);
  };
  if (blocks_.size() != kBlockCount) {
    throw CatalogError("catalog defines " + std::to_string(blocks_.size()) + " blocks, expected 12");
  }
  if (terminators_.size() != 2) throw CatalogError("catalog must define both GAP and SM terminators");

  for (const auto& b : blocks_) {
    const int n = b.code.index();
    const Family expected = n == 0 ? Family::Dense : (n <= 4 ? Family::Residual : Family::InceptionLike);
    if (b.family != expected) fail(n, "family must be " + std::string(to_string(expected)));
    const ConvOrder order = n == 0 ? ConvOrder::BnReluConv : ConvOrder::ConvBnRelu;
    if (b.order != order) fail(n, "conv order must be " + std::string(to_string(order)));

    switch (b.family) {
      case Family::Dense:
        if (b.unit_count != 2) fail(n, "dense block holds exactly two dense sub-blocks");
        if (b.growth_rate != 12 || b.dense_layers_per_block != 12) fail(n, "dense block must be DenseNet-40 (k=12, 12 layers per sub-block)");
        if (b.stem_channels <= 0) fail(n, "dense block needs stem=");
        if (!(b.spatial_factor == Rational{1, 4})) fail(n, "dense block spatial factor must be 1/4");
        if (b.concat_mode != ConcatMode::None) fail(n, "dense block has no block-level concat mode");
        break;
      case Family::Residual: {
        if (b.unit_count != 3) fail(n, "residual blocks contain three residual units");
        if (static_cast<int>(b.channel_profile.size()) != b.unit_count) fail(n, "channel profile needs one entry per unit");
        const ConcatMode mode = n == 1 ? ConcatMode::None : (n == 4 ? ConcatMode::EveryUnit : ConcatMode::FinalOnly);
        if (b.concat_mode != mode) fail(n, "concat mode must be " + std::string(to_string(mode)));
        break;
      }
      case Family::InceptionLike: {
        if (b.unit_count != 1) fail(n, "inception-like blocks have one unit");
        if (b.channel_profile.size() != 1) fail(n, "inception-like blocks take one total output channel count");
        if (!b.topology) fail(n, "inception-like block needs template=");
        const ConcatMode mode = n <= 7 ? ConcatMode::None : ConcatMode::FinalOnly;
        if (b.concat_mode != mode) fail(n, "concat mode must be " + std::string(to_string(mode)));
        break;
      }
    }
    if (b.family != Family::Dense && !(b.spatial_factor == Rational{1, 1})) {
      fail(n, "only the dense block may change spatial size");
    }
    if (b.family != Family::InceptionLike && b.topology) fail(n, "template= is only valid for inception-like blocks");
  }
  // B(5)..B(7) differ only in output width.
  const auto& p5 = blocks_[5].channel_profile;
  const auto& p6 = blocks_[6].channel_profile;
  const auto& p7 = blocks_[7].channel_profile;
  if (p5 == p6 || p5 == p7 || p6 == p7) throw CatalogError("B(5), B(6), B(7) need distinct channel profiles");
}

const BlockSpec& Catalog::block(int n) const {
  if (n < 0 || n >= static_cast<int>(blocks_.size())) {
    throw ContractViolation("no block B(" + std::to_string(n) + ") in catalog");
  }
  return blocks_[n];
}

Catalog Catalog::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open catalog file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const Catalog& Catalog::builtin() {
  static const Catalog cat = parse(detail::kBuiltinCatalogText, "builtin:data/catalog.txt");
  return cat;
}

Catalog Catalog::with_channels(int block_index, std::vector<int> profile) const {
  (void)block(block_index);  // bounds check
  Catalog copy = *this;
  auto& b = copy.blocks_[block_index];
  if (std::any_of(profile.begin(), profile.end(), [](int c) { return c <= 0; })) {
    throw CatalogError("channel counts must be positive");
  }
  b.channel_profile = std::move(profile);
  copy.validate();
  return copy;
}

const Catalog& catalog() { return Catalog::builtin(); }

}  // namespace blockq
