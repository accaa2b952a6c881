#include <gtest/gtest.h>

#include <random>

#include "harness.hpp"
#include "sparsearch/budget.hpp"

using namespace sparsearch;

namespace {

// Input reads + output writes + weight reads, from the tensor shapes.
std::int64_t words_moved(OpKind kind, std::int64_t cin, std::int64_t cout, std::int64_t h,
                         std::int64_t w) {
  const std::int64_t in = cin * h * w;
  switch (kind) {
    case OpKind::SepConv3x3: return in + cout * h * w + cin * 3 * 3 + cin * cout;
    case OpKind::SepConv5x5: return in + cout * h * w + cin * 5 * 5 + cin * cout;
    case OpKind::AvgPool3x3:
    case OpKind::MaxPool3x3: return in + cout * h * w;
    case OpKind::Conv1x1: return in + cout * h * w + cin * cout;
    case OpKind::Conv3x3: return in + cout * h * w + cin * cout * 3 * 3;
    case OpKind::ReductionConv: {
      const std::int64_t oh = (h + 1) / 2, ow = (w + 1) / 2;
      // both paths read the input; their outputs are summed into one tensor
      return 2 * in + cout * oh * ow + cin * cout + cin * cout * 9;
    }
    case OpKind::Linear: return cin + cout + cin * cout;
    case OpKind::Identity: return 0;
  }
  return -1;
}

std::int64_t counted_block_flops(const BlockGraph& g, std::size_t c, std::size_t extent) {
  const BlockGraph cleaned = remove_dead_ops(g);
  const auto live = cleaned.live_ops();
  std::int64_t total = 0;
  std::size_t contributors = 0;
  for (std::size_t slot = 0; slot < g.op_count(); ++slot) {
    if (!live[slot]) continue;
    total += harness::counted_flops(g.op_kind(g.op_at(slot)), c, c, extent, extent);
    if (cleaned.active[g.output_edge(slot)]) ++contributors;
  }
  if (contributors == 0) return 0;
  return total + harness::counted_flops(OpKind::Conv1x1, contributors * c, c, extent, extent);
}

}  // namespace

TEST(Flops, Examples) {
  EXPECT_EQ(flops_of_op(OpKind::Conv1x1, 8, 8, 4, 4), 1024);
  EXPECT_EQ(flops_of_op(OpKind::MaxPool3x3, 5, 5, 7, 3), 0);
  EXPECT_EQ(flops_of_op(OpKind::AvgPool3x3, 2, 2, 2, 2), 0);
  EXPECT_EQ(flops_of_op(OpKind::SepConv3x3, 4, 4, 2, 2), 208);
  EXPECT_EQ(harness::counted_flops(OpKind::SepConv3x3, 4, 4, 2, 2), 208);
  EXPECT_THROW(flops_of_op(OpKind::Conv1x1, 0, 1, 1, 1), std::invalid_argument);
}

TEST(Flops, MatchesMultiplyCounter) {
  const auto check = harness::flops_oracle_check(48, 17);
  EXPECT_EQ(check.cases, 48);
  EXPECT_EQ(check.mismatches, 0);
}

TEST(Mac, ExamplesAndShapeOracle) {
  EXPECT_EQ(mac_of_op(OpKind::Conv1x1, 1, 1, 1, 1), 3);
  EXPECT_EQ(mac_of_op(OpKind::AvgPool3x3, 2, 2, 2, 2), 16);
  EXPECT_GT(mac_of_op(OpKind::SepConv5x5, 6, 6, 5, 5), mac_of_op(OpKind::SepConv3x3, 6, 6, 5, 5));
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::int64_t> d(1, 9);
  for (OpKind k : {OpKind::SepConv3x3, OpKind::SepConv5x5, OpKind::AvgPool3x3, OpKind::MaxPool3x3,
                   OpKind::Conv1x1, OpKind::Conv3x3, OpKind::ReductionConv, OpKind::Linear}) {
    for (int i = 0; i < 5; ++i) {
      const auto cin = d(rng), cout = d(rng), h = d(rng), w = d(rng);
      EXPECT_EQ(mac_of_op(k, cin, cout, h, w), words_moved(k, cin, cout, h, w)) << op_kind_name(k);
    }
  }
}

TEST(BlockFlops, FullAndEmptyAndHalf) {
  BlockGraph g = build_block(2, 4);
  EXPECT_EQ(flops_of_block(g, 8, 16), counted_block_flops(g, 8, 16));
  EXPECT_EQ(full_flops_of_block(g, 8, 16), flops_of_block(g, 8, 16));
  BlockGraph half = g;
  for (std::size_t slot : {0u, 1u, 2u, 3u}) {
    for (std::size_t e : half.incoming(slot)) half.active[e] = false;
  }
  EXPECT_LT(flops_of_block(half, 8, 16), flops_of_block(g, 8, 16));
  BlockGraph none = g;
  std::fill(none.active.begin(), none.active.end(), false);
  EXPECT_EQ(flops_of_block(none, 8, 16), 0);
}

TEST(BlockFlops, MonotoneUnderPruning) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    BlockGraph g = build_block(1 + trial % 3, 1 + trial % 4);
    std::vector<std::size_t> order(g.edge_count());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::int64_t last = flops_of_block(g, 5, 6);
    EXPECT_EQ(last, full_flops_of_block(g, 5, 6));
    for (std::size_t e : order) {
      g.lambda[e] = 0.0;
      const BlockGraph p = prune(g);
      const std::int64_t now = flops_of_block(p, 5, 6);
      EXPECT_LE(now, last);
      EXPECT_EQ(now, counted_block_flops(p, 5, 6));
      last = now;
    }
    EXPECT_EQ(last, 0);
  }
}

TEST(NetworkFlops, SumsStemBlocksReductionsAndHead) {
  NetworkConfig c;
  c.stages = 2;
  c.blocks_per_stage = 2;
  c.levels = 2;
  c.ops_per_level = 4;
  c.init_channels = 8;
  c.image_size = 16;
  const std::vector<BlockGraph> graphs{build_block(2, 4)};
  std::int64_t expect = harness::counted_flops(OpKind::Conv3x3, 1, 8, 16, 16);
  expect += 2 * counted_block_flops(graphs[0], 8, 16) + 2 * counted_block_flops(graphs[0], 16, 8);
  expect += harness::counted_flops(OpKind::ReductionConv, 8, 16, 16, 16);
  expect += harness::counted_flops(OpKind::Linear, 16, 3, 1, 1);
  EXPECT_EQ(flops_of_network(c, graphs), expect);
  EXPECT_THROW(flops_of_network(c, {graphs[0], graphs[0]}), std::invalid_argument);
}

TEST(AdaptiveGamma, Formulas) {
  EXPECT_EQ(adaptive_flops_gamma(0.3, 1000, 1000), 0.3);
  EXPECT_DOUBLE_EQ(adaptive_flops_gamma(1e-4, 500, 1000), 5e-5);
  EXPECT_EQ(adaptive_flops_gamma(1e-4, 0, 1000), 0.0);
  EXPECT_THROW(adaptive_flops_gamma(1e-4, 0, 0), std::invalid_argument);
  EXPECT_THROW(adaptive_flops_gamma(1e-4, 1001, 1000), std::invalid_argument);
  EXPECT_EQ(adaptive_mac_gamma(0.2, 70, 70), 0.2);
  EXPECT_DOUBLE_EQ(adaptive_mac_gamma(0.2, 35, 70), 0.1);
  EXPECT_THROW(adaptive_mac_gamma(0.2, 1, 0), std::invalid_argument);
}

TEST(EdgeGammas, NoneIsUniform) {
  Network net(harness::two_block_config(), 1, true);
  for (const auto& row : edge_gammas(net, {BudgetKind::None, 0.01})) {
    for (double g : row) EXPECT_EQ(g, 0.01);
  }
}

TEST(EdgeGammas, AdaptiveFlopsTracksSurvivingCompute) {
  NetworkConfig c = harness::two_block_config();
  Network net(c, 1, true);
  const BudgetPolicy policy{BudgetKind::AdaptiveFlops, 0.01};
  auto gam = edge_gammas(net, policy);
  for (double g : gam[0]) EXPECT_EQ(g, 0.01);
  // shrink block 0 a little, then prune block 1 completely
  BlockGraph& b0 = net.graphs()[0];
  b0.lambda[*b0.find_edge({0, 0}, {1, 1})] = 0.0;
  for (auto& v : net.graphs()[1].lambda.data()) v = 0.0;
  gam = edge_gammas(net, policy);
  const auto surviving = surviving_block_flops(net);
  const double expect0 = 0.01 * static_cast<double>(surviving[0]) /
                         static_cast<double>(full_flops_of_block(b0, 3, 6));
  EXPECT_LT(gam[0][0], 0.01);
  EXPECT_DOUBLE_EQ(gam[0][5], expect0);
  EXPECT_EQ(gam[1][0], 0.0);
  // soft view only: masks untouched
  EXPECT_EQ(b0.active_edge_count(), b0.edge_count());
}

TEST(EdgeGammas, SharedModeUsesNetworkWideRatio) {
  NetworkConfig c = harness::two_block_config();
  c.lambda_mode = LambdaMode::Shared;
  Network net(c, 1, true);
  BlockGraph& g = net.graphs()[0];
  g.lambda[*g.find_edge({0, 0}, {1, 2})] = 0.0;
  const auto gam = edge_gammas(net, {BudgetKind::AdaptiveFlops, 1.0});
  const auto surviving = surviving_block_flops(net);
  const double full = static_cast<double>(full_flops_of_block(g, 3, 6) + full_flops_of_block(g, 6, 3));
  EXPECT_DOUBLE_EQ(gam[0][0], static_cast<double>(surviving[0] + surviving[1]) / full);
}

TEST(EdgeGammas, AdaptiveMacIgnoresLambdaAndPeaksAtOne) {
  NetworkConfig c = harness::two_block_config();
  c.ops_per_level = 4;
  Network net(c, 1, true);
  const BudgetPolicy policy{BudgetKind::AdaptiveMac, 0.5};
  const auto before = edge_gammas(net, policy);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& g : net.graphs()) {
    for (auto& v : g.lambda.data()) v = u(rng);
  }
  EXPECT_EQ(edge_gammas(net, policy), before);
  double peak = 0.0;
  for (const auto& row : before) peak = std::max(peak, *std::max_element(row.begin(), row.end()));
  EXPECT_EQ(peak, 0.5);
  const BlockGraph& g = net.graphs()[0];
  // same kind, same block: equal weights; 5x5 above 3x3 above pooling
  const auto in = [&](NodeId op) { return before[0][g.incoming(g.op_slot(op))[0]]; };
  EXPECT_EQ(in({1, 1}), in({2, 1}));
  EXPECT_GT(in({1, 2}), in({1, 1}));
  EXPECT_GT(in({1, 1}), in({1, 3}));
  EXPECT_EQ(in({1, 3}), in({1, 4}));
  EXPECT_EQ(before[0][g.output_edge(g.op_slot({1, 2}))], in({1, 2}));
}

TEST(CostTable, DistinctRowsConsistentWithFormulas) {
  NetworkConfig c;
  const auto rows = cost_table(c);
  EXPECT_FALSE(rows.empty());
  for (const auto& r : rows) {
    EXPECT_EQ(r.flops, flops_of_op(r.kind, r.c_in, r.c_out, r.h, r.w));
    EXPECT_EQ(r.mac, mac_of_op(r.kind, r.c_in, r.c_out, r.h, r.w));
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      EXPECT_FALSE(rows[i].kind == rows[j].kind && rows[i].c_in == rows[j].c_in &&
                   rows[i].c_out == rows[j].c_out && rows[i].h == rows[j].h);
    }
  }
  EXPECT_EQ(budget_kind_from_name("adaptive_mac"), BudgetKind::AdaptiveMac);
  EXPECT_THROW(budget_kind_from_name("latency"), std::invalid_argument);
}
