#include "blockq/arch_builder.hpp"

#include <array>
#include <cstdio>
#include <map>

#include "blockq/errors.hpp"
#include "text_util.hpp"

namespace blockq {

std::string TensorShape::to_string() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

TensorShape TensorShape::parse(std::string_view text) {
  const auto parts = detail::split(detail::trim(text), 'x');
  if (parts.size() != 3) throw ParseError("shape must be CxHxW, got '" + std::string(text) + "'");
  std::array<int, 3> v{};
  for (int i = 0; i < 3; ++i) {
    const auto n = detail::parse_int<int>(parts[i]);
    if (!n || *n < 1) throw ParseError("shape dims must be positive, got '" + std::string(text) + "'");
    v[i] = *n;
  }
  return {v[0], v[1], v[2]};
}

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Input: return "Input";
    case LayerKind::Conv: return "Conv";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Concat: return "Concat";
    case LayerKind::Add: return "Add";
    case LayerKind::AvgPool: return "AvgPool";
    case LayerKind::GlobalAvgPool: return "GlobalAvgPool";
    case LayerKind::FullyConnected: return "FullyConnected";
    case LayerKind::Softmax: return "Softmax";
  }
  return "?";
}

namespace {

class GraphBuilder {
 public:
  GraphBuilder(TensorShape input, PoolRounding rounding) : rounding_(rounding) {
    nodes_.push_back({0, LayerKind::Input, {}, {}, input, -1});
  }

  void set_block(int position) { block_ = position; }
  const TensorShape& shape(int id) const { return nodes_[id].out_shape; }
  int last() const { return static_cast<int>(nodes_.size()) - 1; }
  std::vector<LayerNode> take() { return std::move(nodes_); }

  int conv(int in, int kernel, int filters, int stride = 1) {
    const auto& s = shape(in);
    const int pad = kernel / 2;
    const int h = (s.height + 2 * pad - kernel) / stride + 1;
    const int w = (s.width + 2 * pad - kernel) / stride + 1;
    return add_node(LayerKind::Conv, {kernel, stride, pad, filters}, {in}, {filters, h, w});
  }
  int batch_norm(int in) { return add_node(LayerKind::BatchNorm, {}, {in}, shape(in)); }
  int relu(int in) { return add_node(LayerKind::ReLU, {}, {in}, shape(in)); }

  int composite(int in, int kernel, int filters, ConvOrder order) {
    if (order == ConvOrder::ConvBnRelu) return relu(batch_norm(conv(in, kernel, filters)));
    return conv(relu(batch_norm(in)), kernel, filters);
  }

  int same_pool(int in, int kernel) {
    return add_node(LayerKind::AvgPool, {kernel, 1, kernel / 2, 0}, {in}, shape(in));
  }

  int downsample(int in) {
    const auto& s = shape(in);
    auto half = [&](int d) { return rounding_ == PoolRounding::Floor ? d / 2 : (d + 1) / 2; };
    const int h = half(s.height);
    const int w = half(s.width);
    if (h < 1 || w < 1) {
      throw SpatialUnderflowError("spatial underflow: 2x2 pooling of " + s.to_string() + " at block position " +
                                  std::to_string(block_) + " leaves no pixels");
    }
    return add_node(LayerKind::AvgPool, {2, 2, 0, 0}, {in}, {s.channels, h, w});
  }

  int concat(const std::vector<int>& ins) {
    TensorShape out = shape(ins.front());
    out.channels = 0;
    for (int id : ins) {
      const auto& s = shape(id);
      if (s.height != out.height || s.width != out.width) {
        throw ChannelMismatchError("concat inputs disagree on spatial dims: " + shape(ins.front()).to_string() +
                                   " vs " + s.to_string());
      }
      out.channels += s.channels;
    }
    return add_node(LayerKind::Concat, {}, ins, out);
  }

  int sum(const std::vector<int>& ins) {
    const TensorShape out = shape(ins.front());
    for (int id : ins) {
      if (!(shape(id) == out)) {
        throw ChannelMismatchError("add inputs disagree: " + out.to_string() + " vs " + shape(id).to_string());
      }
    }
    return add_node(LayerKind::Add, {}, ins, out);
  }

  int global_pool(int in) {
    return add_node(LayerKind::GlobalAvgPool, {}, {in}, {shape(in).channels, 1, 1});
  }

  int classifier(int in, int classes) {
    const int fc = add_node(LayerKind::FullyConnected, {0, 1, 0, classes}, {in}, {classes, 1, 1});
    return add_node(LayerKind::Softmax, {}, {fc}, {classes, 1, 1});
  }

 private:
  int add_node(LayerKind kind, LayerHyper hyper, std::vector<int> inputs, TensorShape out) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({id, kind, hyper, std::move(inputs), out, block_});
    return id;
  }

  PoolRounding rounding_;
  int block_ = -1;
  std::vector<LayerNode> nodes_;
};

int build_dense(GraphBuilder& g, int in, const BlockSpec& spec, bool with_stem) {
  int x = in;
  if (with_stem) x = g.conv(x, 3, spec.stem_channels);
  for (int sub = 0; sub < spec.unit_count; ++sub) {
    for (int l = 0; l < spec.dense_layers_per_block; ++l) {
      const int y = g.composite(x, 3, spec.growth_rate, spec.order);
      x = g.concat({x, y});
    }
    // transition: BN-ReLU-Conv1x1 (channel preserving) + 2x2 average pool
    x = g.composite(x, 1, g.shape(x).channels, spec.order);
    x = g.downsample(x);
  }
  return x;
}

int build_residual(GraphBuilder& g, int in, const BlockSpec& spec) {
  int x = in;
  int y = in;
  for (int unit = 0; unit < spec.unit_count; ++unit) {
    const int filters = spec.channel_profile[unit];
    const int a = g.composite(x, 3, filters, spec.order);
    const int b = g.composite(a, 3, filters, spec.order);
    const int skip = g.shape(x).channels == filters ? x : g.conv(x, 1, filters);
    y = g.sum({b, skip});
    x = spec.concat_mode == ConcatMode::EveryUnit ? g.concat({in, y}) : y;
  }
  if (spec.concat_mode == ConcatMode::FinalOnly) return g.concat({in, y});
  return x;
}

int build_inception(GraphBuilder& g, int in, const BlockSpec& spec) {
  const int width = spec.channel_profile.front();
  const auto& tmpl = *spec.topology;
  std::map<std::string, int, std::less<>> ids{{"in", in}};
  auto lookup = [&](const std::vector<std::string>& names) {
    std::vector<int> out;
    for (const auto& n : names) out.push_back(ids.at(n));
    return out;
  };
  for (const auto& op : tmpl.ops) {
    int id = -1;
    switch (op.kind) {
      case TemplateOp::Kind::Conv: {
        const long long scaled = static_cast<long long>(width) * op.width.num;
        if (scaled % op.width.den != 0) {
          throw ChannelMismatchError("template '" + tmpl.name + "' op '" + op.id + "': width " +
                                     std::to_string(op.width.num) + "/" + std::to_string(op.width.den) + " of " +
                                     std::to_string(width) + " channels is not integral");
        }
        id = g.composite(ids.at(op.inputs.front()), op.kernel, static_cast<int>(scaled / op.width.den), spec.order);
        break;
      }
      case TemplateOp::Kind::AvgPool: id = g.same_pool(ids.at(op.inputs.front()), op.kernel); break;
      case TemplateOp::Kind::Add: id = g.sum(lookup(op.inputs)); break;
      case TemplateOp::Kind::Concat: id = g.concat(lookup(op.inputs)); break;
    }
    ids[op.id] = id;
  }
  const int out = ids.at("out");
  if (g.shape(out).channels != width) {
    throw ChannelMismatchError("template '" + tmpl.name + "' produces " + std::to_string(g.shape(out).channels) +
                               " channels, block B(" + std::to_string(spec.code.index()) + ") declares " +
                               std::to_string(width));
  }
  if (spec.concat_mode == ConcatMode::FinalOnly) return g.concat({in, out});
  return out;
}

}  // namespace

ArchitectureGraph build(const Trajectory& t, TensorShape input_shape, int class_count, const BuildOptions& options) {
  if (input_shape.channels < 1 || input_shape.height < 1 || input_shape.width < 1) {
    throw ContractViolation("input shape must be positive");
  }
  if (class_count < 1) throw ContractViolation("class count must be positive");
  const Catalog& cat = options.catalog ? *options.catalog : catalog();

  ArchitectureGraph graph;
  graph.net = encode_net(t, class_count);
  graph.input_shape = input_shape;
  graph.class_count = class_count;

  GraphBuilder g(input_shape, options.pool_rounding);
  int x = 0;
  const auto& codes = t.blocks();
  std::vector<std::pair<int, int>> ranges;  // [first, last] node ids per position
  for (std::size_t pos = 0; pos < codes.size(); ++pos) {
    const auto code = codes[pos];
    g.set_block(static_cast<int>(pos));
    const int first = g.last() + 1;
    const TensorShape in_shape = g.shape(x);
    if (code.is_gap()) {
      x = g.global_pool(x);
    } else if (code.is_sm()) {
      x = g.classifier(x, class_count);
    } else {
      const auto& spec = cat.spec(code);
      switch (spec.family) {
        case Family::Dense: x = build_dense(g, x, spec, pos == 0); break;
        case Family::Residual: x = build_residual(g, x, spec); break;
        case Family::InceptionLike: x = build_inception(g, x, spec); break;
      }
    }
    graph.blocks.push_back({static_cast<int>(pos), code, in_shape, g.shape(x), 0});
    ranges.emplace_back(first, g.last());
  }
  graph.nodes = g.take();

  for (std::size_t i = 0; i < graph.blocks.size(); ++i) {
    std::int64_t p = 0;
    for (int id = ranges[i].first; id <= ranges[i].second; ++id) p += node_params(graph, graph.nodes[id]);
    graph.blocks[i].params = p;
  }
  graph.param_count = count_params(graph);
  return graph;
}

std::int64_t node_params(const ArchitectureGraph& g, const LayerNode& node) {
  auto in_shape = [&]() -> const TensorShape& { return g.nodes.at(node.inputs.at(0)).out_shape; };
  switch (node.kind) {
    case LayerKind::Conv: {
      const std::int64_t k = node.hyper.kernel;
      return k * k * in_shape().channels * node.hyper.filters + node.hyper.filters;
    }
    case LayerKind::BatchNorm:
      return 2 * std::int64_t{node.out_shape.channels};
    case LayerKind::FullyConnected:
      return in_shape().elements() * node.hyper.filters + node.hyper.filters;
    default:
      return 0;
  }
}

std::int64_t count_params(const ArchitectureGraph& g) {
  std::int64_t total = 0;
  for (const auto& n : g.nodes) total += node_params(g, n);
  return total;
}

std::string format_params_millions(std::int64_t params) {
  if (params < 0) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fM", static_cast<double>(params) / 1e6);
  return buf;
}

std::optional<std::string_view> reported_params(std::string_view dataset, std::string_view net) {
  struct Row {
    std::string_view dataset, net, params;
  };
  static constexpr Row kRows[] = {
      {"cifar10", "[B(0),B(0),SM(10)]", "4.32M"},
      {"cifar10", "[B(0),B(0),B(10),B(0),SM(10)]", "7.37M"},
      {"cifar10", "[B(0),B(6),B(7),SM(10)]", "5.27M"},
      {"cifar10", "[B(0),B(0),B(2),B(2),SM(10)]", "22.17M"},
      {"cifar10", "[B(0),B(0),GAP(10),SM(10)]", "4.29M"},
      {"cifar10", "[B(0),B(10),SM(10)]", "5.41M"},
      {"cifar10", "[B(0),B(3),B(4),B(0),SM(10)]", "7.54M"},
      {"cifar10", "[B(0),B(0),B(6),B(0),SM(10)]", "7.67M"},
      {"cifar10", "[B(0),B(0),B(3),B(9),SM(10)]", "2.74M"},
      {"cifar10", "[B(0),B(8),B(3),B(0),SM(10)]", "7.17M"},
      {"svhn", "[B(0),B(0),B(4),B(2),SM(10)]", "14.06M"},
      {"svhn", "[B(0),B(4),B(3),B(0),SM(10)]", "7.67M"},
      {"svhn", "[B(0),B(0),SM(10)]", "4.32M"},
      {"svhn", "[B(0),B(9),B(0),B(4),SM(10)]", "5.47M"},
      {"svhn", "[B(0),B(3),B(2),GAP(10),SM(10)]", "13.29M"},
      {"svhn", "[B(0),B(11),B(0),B(2),SM(10)]", "14.74M"},
      {"svhn", "[B(0),B(3),GAP(10),SM(10)]", "4.39M"},
      {"svhn", "[B(0),B(3),B(5),B(0),SM(10)]", "7.59M"},
      {"svhn", "[B(0),B(9),B(0),SM(10)]", "4.78M"},
      {"svhn", "[B(0),B(3),B(0),SM(10)]", "6.71M"},
      {"mnist", "[B(0),GAP(10),SM(10)]", "2.07M"},
      {"mnist", "[B(0),B(3),B(4),B(0),SM(10)]", "7.54M"},
      {"mnist", "[B(0),B(0),SM(10)]", "4.29M"},
      {"mnist", "[B(0),B(3),B(0),B(0),SM(10)]", "8.89M"},
      {"mnist", "[B(0),B(0),B(4),B(10),SM(10)]", "4.32M"},
      {"mnist", "[B(0),B(2),B(8),B(0),SM(10)]", "13.55M"},
      {"mnist", "[B(0),B(0),GAP(10),SM(10)]", "4.29M"},
      {"mnist", "[B(0),B(5),B(8),B(0),SM(10)]", "5.48M"},
      {"mnist", "[B(0),B(3),GAP(10),SM(10)]", "4.39M"},
      {"mnist", "[B(0),B(9),B(11),B(0),SM(10)]", "6.74M"},
  };
  for (const auto& r : kRows) {
    if (r.dataset == dataset && r.net == net) return r.params;
  }
  return std::nullopt;
}

std::string summarize(const ArchitectureGraph& g, std::optional<std::string_view> dataset) {
  std::string out;
  char line[160];
  out += "net      " + g.net + "\n";
  out += "input    " + g.input_shape.to_string() + "\n";
  out += "classes  " + std::to_string(g.class_count) + "\n";
  out += "nodes    " + std::to_string(g.nodes.size()) + "\n";
  std::snprintf(line, sizeof line, "%-4s %-8s %-10s %-14s %-14s %12s\n", "pos", "block", "family", "in", "out",
                "params");
  out += line;
  for (const auto& b : g.blocks) {
    std::string family = "classifier";
    if (b.code.is_gap()) family = "pooling";
    else if (b.code.is_block()) family = std::string(to_string(catalog().spec(b.code).family));
    std::snprintf(line, sizeof line, "%-4d %-8s %-10s %-14s %-14s %12lld\n", b.position,
                  format_code(b.code, g.class_count).c_str(), family.c_str(), b.in_shape.to_string().c_str(),
                  b.out_shape.to_string().c_str(), static_cast<long long>(b.params));
    out += line;
  }
  out += "total params " + std::to_string(g.param_count) + " (" + format_params_millions(g.param_count) + ")\n";
  if (dataset) {
    if (const auto rep = reported_params(*dataset, g.net)) {
      out += "reported params " + std::string(*rep) + " (" + std::string(*dataset) + ", not expected to match)\n";
    }
  }
  return out;
}

std::string export_graph(const ArchitectureGraph& g) {
  std::string out = "# blockq graph 1\n";
  out += "net " + g.net + "\n";
  out += "input " + g.input_shape.to_string() + "\n";
  out += "classes " + std::to_string(g.class_count) + "\n";
  out += "params " + std::to_string(g.param_count) + "\n";
  for (const auto& n : g.nodes) {
    out += "node " + std::to_string(n.id) + " " + std::string(to_string(n.kind));
    switch (n.kind) {
      case LayerKind::Conv:
        out += " k=" + std::to_string(n.hyper.kernel) + " s=" + std::to_string(n.hyper.stride) +
               " p=" + std::to_string(n.hyper.pad) + " f=" + std::to_string(n.hyper.filters);
        break;
      case LayerKind::AvgPool:
        out += " k=" + std::to_string(n.hyper.kernel) + " s=" + std::to_string(n.hyper.stride) +
               " p=" + std::to_string(n.hyper.pad);
        break;
      case LayerKind::FullyConnected:
        out += " f=" + std::to_string(n.hyper.filters);
        break;
      default:
        break;
    }
    out += " in=";
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(n.inputs[i]);
    }
    out += " out=" + n.out_shape.to_string() + " block=" + std::to_string(n.block) + "\n";
  }
  return out;
}

}  // namespace blockq
