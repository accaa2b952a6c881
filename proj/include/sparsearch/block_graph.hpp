#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "sparsearch/nn_ops.hpp"
#include "sparsearch/tensor.hpp"

namespace sparsearch {

// Position inside one block: level 0 index 0 is the block input, level M+1
// index 0 the block output, operations sit at levels [1, M] with index [1, N].
struct NodeId {
  int level = 0;
  int index = 0;
  auto operator<=>(const NodeId&) const = default;
};

struct Edge {
  NodeId src;
  NodeId dst;
  bool operator==(const Edge&) const = default;
};

// Completely connected block DAG. Edge order is fixed: for every operation in
// (level, index) order its incoming edges (block input first, then earlier
// operations in (level, index) order); afterwards one edge from every
// operation to the block output, again in (level, index) order.
class BlockGraph {
 public:
  BlockGraph() = default;
  BlockGraph(int levels, int ops_per_level);

  int levels() const { return levels_; }
  int ops_per_level() const { return ops_per_level_; }
  std::size_t op_count() const { return static_cast<std::size_t>(levels_ * ops_per_level_); }
  NodeId input_node() const { return {0, 0}; }
  NodeId output_node() const { return {levels_ + 1, 0}; }

  // Slot of an operation node in (level, index) order.
  std::size_t op_slot(NodeId op) const;
  NodeId op_at(std::size_t slot) const;
  OpKind op_kind(NodeId op) const;
  bool is_op(NodeId node) const;

  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t edge_count() const { return edges_.size(); }
  std::optional<std::size_t> find_edge(NodeId src, NodeId dst) const;
  const std::vector<std::size_t>& incoming(std::size_t slot) const { return incoming_[slot]; }
  std::size_t output_edge(std::size_t slot) const { return output_edges_[slot]; }

  // Edge scaling factors, a rank-1 leaf tensor indexed like edges().
  Tensor lambda;
  // false = deleted by hard pruning
  std::vector<bool> active;

  std::size_t active_edge_count() const;
  // Operations that still have an active incoming edge.
  std::vector<bool> live_ops() const;
  bool is_identity() const;

 private:
  int levels_ = 0;
  int ops_per_level_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> incoming_;
  std::vector<std::size_t> output_edges_;
};

// Completely connected block with every lambda set to 1 and every edge active.
BlockGraph build_block(int levels, int ops_per_level);

// Closed form: sum_{i=1..M} N((i-1)N + 1) + MN.
std::size_t edge_count_formula(int levels, int ops_per_level);

// Kind of operation `index` (1-based) on every level: the four block
// operations in a fixed cycle.
OpKind op_kind_for_index(int index);

// Deactivates edges whose lambda is exactly zero, then repeatedly removes
// operations that have no active incoming edge or no active path to the block
// output, until nothing changes. Inactive edges get lambda 0.
BlockGraph prune(const BlockGraph& graph);

// Same liveness rule applied to the active mask only (lambda ignored).
BlockGraph remove_dead_ops(const BlockGraph& graph);

// Operations that would survive prune(), without building the pruned copy.
std::vector<bool> surviving_ops(const BlockGraph& graph);

std::string node_label(NodeId node);

}  // namespace sparsearch
