#include "sparsearch/block_graph.hpp"

#include <stdexcept>

namespace sparsearch {

BlockGraph::BlockGraph(int levels, int ops_per_level)
    : levels_(levels), ops_per_level_(ops_per_level) {
  if (levels < 1 || ops_per_level < 1) {
    throw std::invalid_argument("block needs at least one level and one operation per level");
  }
  incoming_.resize(op_count());
  for (std::size_t slot = 0; slot < op_count(); ++slot) {
    const NodeId dst = op_at(slot);
    incoming_[slot].push_back(edges_.size());
    edges_.push_back({input_node(), dst});
    for (std::size_t src = 0; src < slot; ++src) {
      const NodeId s = op_at(src);
      if (s.level >= dst.level) break;
      incoming_[slot].push_back(edges_.size());
      edges_.push_back({s, dst});
    }
  }
  for (std::size_t slot = 0; slot < op_count(); ++slot) {
    output_edges_.push_back(edges_.size());
    edges_.push_back({op_at(slot), output_node()});
  }
  lambda = Tensor::ones({edges_.size()});
  lambda.set_requires_grad(true);
  active.assign(edges_.size(), true);
}

std::size_t BlockGraph::op_slot(NodeId op) const {
  if (!is_op(op)) throw std::out_of_range("not an operation node: " + node_label(op));
  return static_cast<std::size_t>((op.level - 1) * ops_per_level_ + (op.index - 1));
}

NodeId BlockGraph::op_at(std::size_t slot) const {
  const int s = static_cast<int>(slot);
  return {s / ops_per_level_ + 1, s % ops_per_level_ + 1};
}

bool BlockGraph::is_op(NodeId node) const {
  return node.level >= 1 && node.level <= levels_ && node.index >= 1 &&
         node.index <= ops_per_level_;
}

OpKind BlockGraph::op_kind(NodeId op) const {
  if (!is_op(op)) throw std::out_of_range("not an operation node: " + node_label(op));
  return op_kind_for_index(op.index);
}

std::optional<std::size_t> BlockGraph::find_edge(NodeId src, NodeId dst) const {
  if (dst == output_node() && is_op(src)) return output_edges_[op_slot(src)];
  if (!is_op(dst)) return std::nullopt;
  for (std::size_t e : incoming_[op_slot(dst)]) {
    if (edges_[e].src == src) return e;
  }
  return std::nullopt;
}

std::size_t BlockGraph::active_edge_count() const {
  std::size_t n = 0;
  for (bool a : active) n += a ? 1 : 0;
  return n;
}

std::vector<bool> BlockGraph::live_ops() const {
  std::vector<bool> live(op_count(), false);
  for (std::size_t slot = 0; slot < op_count(); ++slot) {
    for (std::size_t e : incoming_[slot]) {
      if (active[e]) {
        live[slot] = true;
        break;
      }
    }
  }
  return live;
}

bool BlockGraph::is_identity() const {
  for (std::size_t e : output_edges_) {
    if (active[e]) return false;
  }
  return true;
}

BlockGraph build_block(int levels, int ops_per_level) { return BlockGraph(levels, ops_per_level); }

std::size_t edge_count_formula(int levels, int ops_per_level) {
  const std::size_t m = static_cast<std::size_t>(levels), n = static_cast<std::size_t>(ops_per_level);
  std::size_t total = m * n;
  for (std::size_t i = 1; i <= m; ++i) total += n * ((i - 1) * n + 1);
  return total;
}

OpKind op_kind_for_index(int index) {
  static constexpr OpKind kCycle[] = {OpKind::SepConv3x3, OpKind::SepConv5x5, OpKind::AvgPool3x3,
                                      OpKind::MaxPool3x3};
  if (index < 1) throw std::out_of_range("operation index must be >= 1");
  return kCycle[(index - 1) % 4];
}

namespace {

// Ops with an active input chain from the block input and an active path to
// the block output, under the given mask.
std::vector<bool> alive_under(const BlockGraph& g, const std::vector<bool>& active) {
  const std::size_t ops = g.op_count();
  std::vector<bool> fed(ops, false), reaches(ops, false);
  for (std::size_t slot = 0; slot < ops; ++slot) {
    for (std::size_t e : g.incoming(slot)) {
      if (!active[e]) continue;
      const NodeId src = g.edges()[e].src;
      if (src == g.input_node() || fed[g.op_slot(src)]) {
        fed[slot] = true;
        break;
      }
    }
  }
  std::vector<std::vector<std::size_t>> outgoing(ops);
  for (std::size_t slot = 0; slot < ops; ++slot) {
    for (std::size_t e : g.incoming(slot)) {
      const NodeId src = g.edges()[e].src;
      if (g.is_op(src)) outgoing[g.op_slot(src)].push_back(e);
    }
  }
  for (std::size_t slot = ops; slot-- > 0;) {
    if (!fed[slot]) continue;
    if (active[g.output_edge(slot)]) {
      reaches[slot] = true;
      continue;
    }
    for (std::size_t e : outgoing[slot]) {
      const std::size_t dst = g.op_slot(g.edges()[e].dst);
      if (active[e] && fed[dst] && reaches[dst]) {
        reaches[slot] = true;
        break;
      }
    }
  }
  std::vector<bool> alive(ops);
  for (std::size_t slot = 0; slot < ops; ++slot) alive[slot] = fed[slot] && reaches[slot];
  return alive;
}

std::vector<bool> fixpoint_mask(const BlockGraph& g, std::vector<bool> active) {
  for (bool changed = true; changed;) {
    changed = false;
    const auto alive = alive_under(g, active);
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      if (!active[e]) continue;
      const Edge& edge = g.edges()[e];
      const bool src_ok = !g.is_op(edge.src) || alive[g.op_slot(edge.src)];
      const bool dst_ok = !g.is_op(edge.dst) || alive[g.op_slot(edge.dst)];
      if (!src_ok || !dst_ok) {
        active[e] = false;
        changed = true;
      }
    }
  }
  return active;
}

BlockGraph with_mask(const BlockGraph& graph, std::vector<bool> mask) {
  BlockGraph out = graph;
  out.lambda = graph.lambda.clone();
  out.active = std::move(mask);
  for (std::size_t e = 0; e < out.edge_count(); ++e) {
    if (!out.active[e]) out.lambda[e] = 0.0;
  }
  return out;
}

std::vector<bool> nonzero_mask(const BlockGraph& graph) {
  std::vector<bool> mask = graph.active;
  for (std::size_t e = 0; e < graph.edge_count(); ++e) {
    if (graph.lambda[e] == 0.0) mask[e] = false;
  }
  return mask;
}

}  // namespace

BlockGraph prune(const BlockGraph& graph) {
  return with_mask(graph, fixpoint_mask(graph, nonzero_mask(graph)));
}

BlockGraph remove_dead_ops(const BlockGraph& graph) {
  return with_mask(graph, fixpoint_mask(graph, graph.active));
}

std::vector<bool> surviving_ops(const BlockGraph& graph) {
  return alive_under(graph, fixpoint_mask(graph, nonzero_mask(graph)));
}

std::string node_label(NodeId node) {
  return "(" + std::to_string(node.level) + "," + std::to_string(node.index) + ")";
}

}  // namespace sparsearch
