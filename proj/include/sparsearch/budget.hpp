#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsearch/block_graph.hpp"
#include "sparsearch/network.hpp"

namespace sparsearch {

// Counting conventions
// --------------------
// FLOPs count multiply-adds; one multiply-add is one FLOP. MAC counts memory
// traffic in scalar words (not bytes). H and W are always the *input* extents.
//
//   kind             FLOPs                           MAC
//   sep_conv_kxk     HW*Cin*k^2 + HW*Cin*Cout        HW*Cin + HW*Cout + k^2*Cin + Cin*Cout
//   avg/max_pool     0                               HW*Cin + HW*Cout
//   conv_1x1         HW*Cin*Cout                     HW*Cin + HW*Cout + Cin*Cout
//   conv_3x3         HW*Cin*Cout*9                   HW*Cin + HW*Cout + 9*Cin*Cout
//   reduction_conv   H'W'*Cin*Cout*(1 + 9)           2*HW*Cin + H'W'*Cout + 10*Cin*Cout
//   linear           Cin*Cout                        Cin + Cout + Cin*Cout
//   identity         0                               0
//
// with H' = ceil(H/2), W' = ceil(W/2). Batch norm and ReLU add no FLOPs; their
// traffic is the output write already counted for the producing operation.
std::int64_t flops_of_op(OpKind kind, std::int64_t c_in, std::int64_t c_out, std::int64_t h,
                         std::int64_t w);
std::int64_t mac_of_op(OpKind kind, std::int64_t c_in, std::int64_t c_out, std::int64_t h,
                       std::int64_t w);

// FLOPs of the operations that survive under the active mask (an operation
// survives when it has an active input chain and an active path to the output)
// plus the output reduction over the surviving contributors. Zero for an
// identity block.
std::int64_t flops_of_block(const BlockGraph& graph, std::int64_t channels, std::int64_t extent);
// Same with every edge active.
std::int64_t full_flops_of_block(const BlockGraph& graph, std::int64_t channels,
                                 std::int64_t extent);

// Whole-network FLOPs: stem, blocks, reduction blocks and the classifier.
std::int64_t flops_of_network(const NetworkConfig& config, const std::vector<BlockGraph>& graphs);

enum class BudgetKind { None, AdaptiveFlops, AdaptiveMac };

std::string_view budget_kind_name(BudgetKind kind);
BudgetKind budget_kind_from_name(std::string_view name);

struct BudgetPolicy {
  BudgetKind kind = BudgetKind::None;
  double gamma = 0.0;
  bool operator==(const BudgetPolicy&) const = default;
};

// gamma * flops_t / flops_block
double adaptive_flops_gamma(double gamma, std::int64_t flops_t, std::int64_t flops_block);
// gamma * mac_op / mac_max
double adaptive_mac_gamma(double gamma, std::int64_t mac_op, std::int64_t mac_max);

// Per-edge sparsity weights for every lambda table of the network.
// AdaptiveFlops scales a block's edges by its surviving-FLOPs ratio (shared
// mode uses the network-wide ratio, since one table serves every block).
// AdaptiveMac scales the incoming edges and the output edge of operation
// (m, n) by its MAC relative to the largest block-operation MAC of the full
// network.
std::vector<std::vector<double>> edge_gammas(const Network& net, const BudgetPolicy& policy);

// Surviving FLOPs per block under the soft view (prune() of the current
// lambda values, nothing committed).
std::vector<std::int64_t> surviving_block_flops(const Network& net);

struct CostRow {
  OpKind kind;
  std::int64_t c_in, c_out, h, w, flops, mac;
};
// One row per distinct operation instance shape in the full network.
std::vector<CostRow> cost_table(const NetworkConfig& config);

}  // namespace sparsearch
