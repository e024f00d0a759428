#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "blockq/block_catalog.hpp"
#include "blockq/search_space.hpp"

namespace blockq {

struct TensorShape {
  int channels = 1;
  int height = 1;
  int width = 1;

  std::int64_t elements() const { return std::int64_t{channels} * height * width; }
  std::string to_string() const;  // "CxHxW"
  static TensorShape parse(std::string_view text);

  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

enum class LayerKind { Input, Conv, BatchNorm, ReLU, Concat, Add, AvgPool, GlobalAvgPool, FullyConnected, Softmax };
std::string_view to_string(LayerKind k);

struct LayerHyper {
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  int filters = 0;  // Conv and FullyConnected output width
};

struct LayerNode {
  int id = 0;
  LayerKind kind = LayerKind::Input;
  LayerHyper hyper;
  std::vector<int> inputs;
  TensorShape out_shape;
  int block = -1;  // trajectory position that produced the node; -1 for the input
};

struct BlockSummary {
  int position = 0;
  BlockCode code = BlockCode::sm();
  TensorShape in_shape;
  TensorShape out_shape;
  std::int64_t params = 0;
};

struct ArchitectureGraph {
  std::string net;  // net string of the source trajectory
  std::vector<LayerNode> nodes;  // topological order; nodes[0] is the input
  TensorShape input_shape;
  int class_count = kDefaultClassCount;
  std::int64_t param_count = 0;
  std::vector<BlockSummary> blocks;
};

// How the 2x2 stride-2 transition pool rounds odd sizes.
enum class PoolRounding { Floor, Ceil };

struct BuildOptions {
  const Catalog* catalog = nullptr;  // nullptr: the shipped catalog
  PoolRounding pool_rounding = PoolRounding::Floor;
};

/// Expands a trajectory into a layer graph with inferred shapes.
/// Throws SpatialUnderflowError or ChannelMismatchError.
ArchitectureGraph build(const Trajectory& t, TensorShape input_shape, int class_count,
                        const BuildOptions& options = {});

/// Trainable parameters of one node (weights + biases, BN scale + shift).
std::int64_t node_params(const ArchitectureGraph& g, const LayerNode& node);

/// Sum of node_params over the graph, re-deriving fan-in from each node's inputs.
std::int64_t count_params(const ArchitectureGraph& g);

/// "4.32M"-style rendering (millions, two decimals).
std::string format_params_millions(std::int64_t params);

/// Reference parameter counts for a handful of well-known nets, keyed by
/// dataset tag (cifar10, svhn, mnist) and net string.
std::optional<std::string_view> reported_params(std::string_view dataset, std::string_view net);

/// Per-block shape table and totals; byte-stable for identical graphs.
std::string summarize(const ArchitectureGraph& g, std::optional<std::string_view> dataset = std::nullopt);

/// One node per line: id, kind, hyper-parameters, input ids, output shape.
std::string export_graph(const ArchitectureGraph& g);

}  // namespace blockq
