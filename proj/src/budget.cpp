#include "sparsearch/budget.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <tuple>

namespace sparsearch {

namespace {

void require_positive_dims(std::int64_t c_in, std::int64_t c_out, std::int64_t h, std::int64_t w) {
  if (c_in < 1 || c_out < 1 || h < 1 || w < 1) {
    throw std::invalid_argument("cost model: dimensions must be positive");
  }
}

std::int64_t half_up(std::int64_t v) { return (v + 1) / 2; }

}  // namespace

std::int64_t flops_of_op(OpKind kind, std::int64_t c_in, std::int64_t c_out, std::int64_t h,
                         std::int64_t w) {
  require_positive_dims(c_in, c_out, h, w);
  const std::int64_t hw = h * w;
  switch (kind) {
    case OpKind::SepConv3x3: return hw * c_in * 9 + hw * c_in * c_out;
    case OpKind::SepConv5x5: return hw * c_in * 25 + hw * c_in * c_out;
    case OpKind::AvgPool3x3:
    case OpKind::MaxPool3x3:
    case OpKind::Identity: return 0;
    case OpKind::Conv1x1: return hw * c_in * c_out;
    case OpKind::Conv3x3: return hw * c_in * c_out * 9;
    case OpKind::ReductionConv: return half_up(h) * half_up(w) * c_in * c_out * 10;
    case OpKind::Linear: return c_in * c_out;
  }
  throw std::invalid_argument("flops_of_op: unknown operation kind");
}

std::int64_t mac_of_op(OpKind kind, std::int64_t c_in, std::int64_t c_out, std::int64_t h,
                       std::int64_t w) {
  require_positive_dims(c_in, c_out, h, w);
  const std::int64_t hw = h * w;
  switch (kind) {
    case OpKind::SepConv3x3: return hw * c_in + hw * c_out + 9 * c_in + c_in * c_out;
    case OpKind::SepConv5x5: return hw * c_in + hw * c_out + 25 * c_in + c_in * c_out;
    case OpKind::AvgPool3x3:
    case OpKind::MaxPool3x3: return hw * c_in + hw * c_out;
    case OpKind::Identity: return 0;
    case OpKind::Conv1x1: return hw * c_in + hw * c_out + c_in * c_out;
    case OpKind::Conv3x3: return hw * c_in + hw * c_out + 9 * c_in * c_out;
    case OpKind::ReductionConv:
      return 2 * hw * c_in + half_up(h) * half_up(w) * c_out + 10 * c_in * c_out;
    case OpKind::Linear: return c_in + c_out + c_in * c_out;
  }
  throw std::invalid_argument("mac_of_op: unknown operation kind");
}

std::int64_t flops_of_block(const BlockGraph& graph, std::int64_t channels, std::int64_t extent) {
  const BlockGraph cleaned = remove_dead_ops(graph);
  const auto live = cleaned.live_ops();
  std::int64_t total = 0;
  std::int64_t contributors = 0;
  for (std::size_t slot = 0; slot < graph.op_count(); ++slot) {
    if (!live[slot]) continue;
    total += flops_of_op(graph.op_kind(graph.op_at(slot)), channels, channels, extent, extent);
    if (cleaned.active[graph.output_edge(slot)]) ++contributors;
  }
  if (contributors == 0) return 0;
  return total + flops_of_op(OpKind::Conv1x1, contributors * channels, channels, extent, extent);
}

std::int64_t full_flops_of_block(const BlockGraph& graph, std::int64_t channels,
                                 std::int64_t extent) {
  BlockGraph full = build_block(graph.levels(), graph.ops_per_level());
  return flops_of_block(full, channels, extent);
}

std::int64_t flops_of_network(const NetworkConfig& config, const std::vector<BlockGraph>& graphs) {
  config.validate();
  const std::size_t expected = config.lambda_tables();
  if (graphs.size() != expected) {
    throw std::invalid_argument("flops_of_network: expected " + std::to_string(expected) +
                                " block graphs, got " + std::to_string(graphs.size()));
  }
  auto width = [&](std::size_t s) { return static_cast<std::int64_t>(config.stage_width(s)); };
  auto extent = [&](std::size_t s) { return static_cast<std::int64_t>(config.stage_extent(s)); };
  std::int64_t total =
      flops_of_op(OpKind::Conv3x3, config.in_channels, width(0), extent(0), extent(0));
  for (std::size_t b = 0; b < config.block_count(); ++b) {
    const std::size_t s = config.stage_of_block(b);
    const BlockGraph& g = graphs[config.lambda_mode == LambdaMode::Shared ? 0 : b];
    total += flops_of_block(g, width(s), extent(s));
  }
  for (std::size_t s = 0; s + 1 < static_cast<std::size_t>(config.stages); ++s) {
    total += flops_of_op(OpKind::ReductionConv, width(s), width(s + 1), extent(s), extent(s));
  }
  const std::size_t last = static_cast<std::size_t>(config.stages - 1);
  total += flops_of_op(OpKind::Linear, width(last), config.num_classes, 1, 1);
  return total;
}

std::string_view budget_kind_name(BudgetKind kind) {
  switch (kind) {
    case BudgetKind::None: return "none";
    case BudgetKind::AdaptiveFlops: return "adaptive_flops";
    case BudgetKind::AdaptiveMac: return "adaptive_mac";
  }
  return "none";
}

BudgetKind budget_kind_from_name(std::string_view name) {
  if (name == "none") return BudgetKind::None;
  if (name == "adaptive_flops") return BudgetKind::AdaptiveFlops;
  if (name == "adaptive_mac") return BudgetKind::AdaptiveMac;
  throw std::invalid_argument("budget policy must be none, adaptive_flops or adaptive_mac, got '" +
                              std::string(name) + "'");
}

double adaptive_flops_gamma(double gamma, std::int64_t flops_t, std::int64_t flops_block) {
  if (flops_block <= 0) throw std::invalid_argument("adaptive_flops_gamma: FLOPs_block must be > 0");
  if (flops_t < 0 || flops_t > flops_block) {
    throw std::invalid_argument("adaptive_flops_gamma: surviving FLOPs outside [0, FLOPs_block]");
  }
  return static_cast<double>(flops_t) / static_cast<double>(flops_block) * gamma;
}

double adaptive_mac_gamma(double gamma, std::int64_t mac_op, std::int64_t mac_max) {
  if (mac_max <= 0) throw std::invalid_argument("adaptive_mac_gamma: MAC_max must be > 0");
  return static_cast<double>(mac_op) / static_cast<double>(mac_max) * gamma;
}

std::vector<std::int64_t> surviving_block_flops(const Network& net) {
  const auto& cfg = net.config();
  std::vector<std::int64_t> out;
  for (std::size_t b = 0; b < net.block_count(); ++b) {
    const std::size_t s = cfg.stage_of_block(b);
    out.push_back(flops_of_block(prune(net.graph_of_block(b)),
                                 static_cast<std::int64_t>(cfg.stage_width(s)),
                                 static_cast<std::int64_t>(cfg.stage_extent(s))));
  }
  return out;
}

std::vector<std::vector<double>> edge_gammas(const Network& net, const BudgetPolicy& policy) {
  const auto& cfg = net.config();
  const auto& graphs = net.graphs();
  std::vector<std::vector<double>> out;
  for (const auto& g : graphs) out.emplace_back(g.edge_count(), policy.gamma);
  if (policy.kind == BudgetKind::None) return out;

  auto width = [&](std::size_t b) {
    return static_cast<std::int64_t>(cfg.stage_width(cfg.stage_of_block(b)));
  };
  auto extent = [&](std::size_t b) {
    return static_cast<std::int64_t>(cfg.stage_extent(cfg.stage_of_block(b)));
  };

  if (policy.kind == BudgetKind::AdaptiveFlops) {
    const auto surviving = surviving_block_flops(net);
    std::vector<std::int64_t> kept(graphs.size(), 0), full(graphs.size(), 0);
    for (std::size_t b = 0; b < net.block_count(); ++b) {
      const std::size_t gi = net.graph_index(b);
      kept[gi] += surviving[b];
      full[gi] += full_flops_of_block(graphs[gi], width(b), extent(b));
    }
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
      const double g = adaptive_flops_gamma(policy.gamma, kept[gi], full[gi]);
      std::fill(out[gi].begin(), out[gi].end(), g);
    }
    return out;
  }

  // AdaptiveMac: MAC of each op slot summed over the blocks using the table.
  const std::size_t ops = graphs.front().op_count();
  std::vector<std::vector<std::int64_t>> mac(graphs.size(), std::vector<std::int64_t>(ops, 0));
  for (std::size_t b = 0; b < net.block_count(); ++b) {
    const std::size_t gi = net.graph_index(b);
    for (std::size_t slot = 0; slot < ops; ++slot) {
      mac[gi][slot] += mac_of_op(graphs[gi].op_kind(graphs[gi].op_at(slot)), width(b), width(b),
                                 extent(b), extent(b));
    }
  }
  std::int64_t mac_max = 0;
  for (const auto& row : mac) mac_max = std::max(mac_max, *std::max_element(row.begin(), row.end()));
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const BlockGraph& g = graphs[gi];
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      const Edge& edge = g.edges()[e];
      const NodeId op = g.is_op(edge.dst) ? edge.dst : edge.src;
      out[gi][e] = adaptive_mac_gamma(policy.gamma, mac[gi][g.op_slot(op)], mac_max);
    }
  }
  return out;
}

std::vector<CostRow> cost_table(const NetworkConfig& config) {
  config.validate();
  std::vector<CostRow> rows;
  std::set<std::tuple<int, std::int64_t, std::int64_t, std::int64_t, std::int64_t>> seen;
  auto add = [&](OpKind k, std::int64_t ci, std::int64_t co, std::int64_t h, std::int64_t w) {
    if (!seen.insert({static_cast<int>(k), ci, co, h, w}).second) return;
    rows.push_back({k, ci, co, h, w, flops_of_op(k, ci, co, h, w), mac_of_op(k, ci, co, h, w)});
  };
  auto width = [&](std::size_t s) { return static_cast<std::int64_t>(config.stage_width(s)); };
  auto extent = [&](std::size_t s) { return static_cast<std::int64_t>(config.stage_extent(s)); };
  add(OpKind::Conv3x3, config.in_channels, width(0), extent(0), extent(0));
  const std::int64_t op_count = static_cast<std::int64_t>(config.levels) * config.ops_per_level;
  for (std::size_t s = 0; s < static_cast<std::size_t>(config.stages); ++s) {
    for (int n = 1; n <= config.ops_per_level; ++n) {
      add(op_kind_for_index(n), width(s), width(s), extent(s), extent(s));
    }
    add(OpKind::Conv1x1, op_count * width(s), width(s), extent(s), extent(s));
    if (s + 1 < static_cast<std::size_t>(config.stages)) {
      add(OpKind::ReductionConv, width(s), width(s + 1), extent(s), extent(s));
    }
  }
  const std::size_t last = static_cast<std::size_t>(config.stages - 1);
  add(OpKind::Linear, width(last), config.num_classes, 1, 1);
  return rows;
}

}  // namespace sparsearch
