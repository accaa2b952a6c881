#pragma once

// Checks shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "sparsearch/block_graph.hpp"
#include "sparsearch/budget.hpp"
#include "sparsearch/config.hpp"
#include "sparsearch/descriptor.hpp"
#include "sparsearch/dataset.hpp"
#include "sparsearch/network.hpp"
#include "sparsearch/sparse_optim.hpp"

namespace harness {

using namespace sparsearch;

// Block output wired by hand for a 2x2 block: each node is spelled out
// instead of walking the edge list.
inline Tensor hand_wired_2x2(Tape& t, const Tensor& x, const Tensor& lam, const BlockParams& p,
                             bool training) {
  auto s = [&](const Tensor& h, std::size_t e) { return scale_by(t, h, lam, e); };
  Tensor h11 = apply_block_op(t, s(x, 0), *p.ops[0], training);
  Tensor h12 = apply_block_op(t, s(x, 1), *p.ops[1], training);
  Tensor h21 = apply_block_op(t, add_n(t, {s(x, 2), s(h11, 3), s(h12, 4)}), *p.ops[2], training);
  Tensor h22 = apply_block_op(t, add_n(t, {s(x, 5), s(h11, 6), s(h12, 7)}), *p.ops[3], training);
  Tensor cat = concat_channels(t, {s(h11, 8), s(h12, 9), s(h21, 10), s(h22, 11)});
  Tensor w = concat_channels(t, p.reduce_slices);
  return add(t, relu(t, batch_norm(t, conv2d(t, cat, w, 1, 0), p.reduce_bn, training)), x);
}

// Max |full - pruned| over `trials` random lambda draws with `zero_fraction`
// exact zeros on an MxN block. The pruned side uses prune() and drops the
// parameters of removed operations.
inline double prune_equivalence_error(int m, int n, int trials, double zero_fraction,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    BlockGraph g = build_block(m, n);
    std::vector<std::size_t> order(g.edge_count());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const auto zeros = static_cast<std::size_t>(std::llround(zero_fraction * order.size()));
    std::uniform_real_distribution<double> mag(0.3, 1.5);
    std::bernoulli_distribution neg(0.3);
    for (std::size_t i = 0; i < order.size(); ++i) {
      g.lambda[order[i]] = i < zeros ? 0.0 : (neg(rng) ? -1.0 : 1.0) * mag(rng);
    }
    const std::size_t channels = 3;
    BlockParams params = BlockParams::make(g, channels, rng, false);
    for (auto& op : params.ops) {
      if (op && op->pointwise.defined()) {
        std::normal_distribution<double> b(0.0, 0.5);
        for (auto& v : op->bn.bias.data()) v = b(rng);
      }
    }
    Tensor x = oracle::random_tensor({2, channels, 6, 6}, rng);

    BlockGraph pruned = prune(g);
    BlockParams kept = params;
    const auto live = pruned.live_ops();
    for (std::size_t slot = 0; slot < pruned.op_count(); ++slot) {
      if (!live[slot]) kept.ops[slot].reset();
      if (!pruned.active[pruned.output_edge(slot)]) kept.reduce_slices[slot] = Tensor();
    }
    for (bool training : {true, false}) {
      Tape a, b;
      Tensor full = block_forward(a, g, params, x, training);
      Tensor small = block_forward(b, pruned, kept, x, training);
      for (std::size_t i = 0; i < full.numel(); ++i) {
        worst = std::max(worst, std::abs(full[i] - small[i]));
      }
    }
  }
  return worst;
}

inline NetworkConfig two_block_config() {
  NetworkConfig c;
  c.stages = 2;
  c.blocks_per_stage = 1;
  c.levels = 2;
  c.ops_per_level = 2;
  c.init_channels = 3;
  c.lambda_mode = LambdaMode::Full;
  c.num_classes = 3;
  c.in_channels = 1;
  c.image_size = 6;
  return c;
}

// Denominator floor for whole-network checks. A central difference of the
// loss carries noise around ulp(loss) / (2 eps), about 2e-11 at eps = 1e-5, so
// gradients near 1e-8 (ReLU-starved paths, or the lambda of an edge that is
// the sole input of a BN-normalized node) cannot be resolved to 1e-4 relative.
inline constexpr double kNetworkGradFloor = 1e-6;

struct GradCheck {
  double error = 0.0;
  // Central differences at eps and eps/2 disagree: a ReLU or max-pool kink
  // lies within the step, so the point is not usable.
  bool near_kink = false;
};

// Projects y onto fixed random weights so every output coordinate matters.
inline Tensor project(Tape& tape, const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor r = oracle::random_tensor(y.shape(), rng);
  return sum(tape, mul(tape, y, r));
}

// Worst relative error over every nn-op (both operands where there are two,
// both BN modes) at `points` random points.
inline double nn_op_grad_suite(int points, std::uint64_t seed) {
  constexpr double eps = 1e-5;
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  auto check = [&](const ScalarFn& f, const Tensor& x) {
    worst = std::max(worst, finite_diff_check(f, x, eps));
  };
  for (int p = 0; p < points; ++p) {
    {
      Tensor x = oracle::random_tensor({2, 2, 5, 5}, rng);
      Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
      const std::size_t stride = 1 + p % 2;
      check([&](Tape& t, const Tensor& in) { return project(t, conv2d(t, in, w, stride, 1), p); }, x);
      check([&](Tape& t, const Tensor& in) { return project(t, conv2d(t, x, in, stride, 1), p); }, w);
    }
    {
      Tensor x = oracle::random_tensor({2, 3, 6, 6}, rng);
      Tensor w = oracle::random_tensor({3, 1, 5, 5}, rng);
      check([&](Tape& t, const Tensor& in) { return project(t, depthwise_conv2d(t, in, w, 1, 2), p); }, x);
      check([&](Tape& t, const Tensor& in) { return project(t, depthwise_conv2d(t, x, in, 1, 2), p); }, w);
    }
    {
      Tensor x = oracle::random_tensor({3, 2, 3, 3}, rng, 2.0);
      BatchNormParams bn = BatchNormParams::make(2, false);
      bn.scale = oracle::random_tensor({2}, rng);
      bn.bias = oracle::random_tensor({2}, rng);
      bn.running_var[0] = 0.7;
      for (bool training : {true, false}) {
        check([&](Tape& t, const Tensor& in) { return project(t, batch_norm(t, in, bn, training), p); }, x);
        check([&](Tape& t, const Tensor& in) {
          BatchNormParams b = bn;
          b.scale = in;
          return project(t, batch_norm(t, x, b, training), p);
        }, bn.scale);
        check([&](Tape& t, const Tensor& in) {
          BatchNormParams b = bn;
          b.bias = in;
          return project(t, batch_norm(t, x, b, training), p);
        }, bn.bias);
      }
    }
    {
      Tensor x = oracle::random_tensor({2, 2, 4, 5}, rng);
      for (auto mode : {PoolMode::Avg, PoolMode::Max}) {
        check([&](Tape& t, const Tensor& in) { return project(t, pool3x3(t, in, mode), p); }, x);
      }
      check([&](Tape& t, const Tensor& in) { return project(t, global_avg_pool(t, in), p); }, x);
      check([&](Tape& t, const Tensor& in) { return project(t, relu(t, in), p); }, x);
    }
    {
      Tensor x = oracle::random_tensor({4, 3}, rng);
      Tensor w = oracle::random_tensor({5, 3}, rng);
      Tensor b = oracle::random_tensor({5}, rng);
      const std::vector<int> labels{0, 4, 2, 2};
      check([&](Tape& t, const Tensor& in) { return softmax_cross_entropy(t, linear(t, in, w, b), labels); }, x);
      check([&](Tape& t, const Tensor& in) { return softmax_cross_entropy(t, linear(t, x, in, b), labels); }, w);
      check([&](Tape& t, const Tensor& in) { return softmax_cross_entropy(t, linear(t, x, w, in), labels); }, b);
    }
    {
      Tensor x = oracle::random_tensor({2, 3, 5, 5}, rng);
      for (auto kind : {OpKind::SepConv3x3, OpKind::SepConv5x5}) {
        OpParams op = OpParams::make(kind, 3, 3, rng, false);
        check([&](Tape& t, const Tensor& in) { return project(t, apply_block_op(t, in, op, true), p); }, x);
        check([&](Tape& t, const Tensor& in) {
          OpParams o = op;
          o.depthwise = in;
          return project(t, apply_block_op(t, x, o, true), p);
        }, op.depthwise);
      }
      ReductionParams red = ReductionParams::make(3, rng, false);
      check([&](Tape& t, const Tensor& in) { return project(t, reduction_block(t, in, red, true), p); }, x);
      LinearParams head = LinearParams::make(3, 4, rng);
      check([&](Tape& t, const Tensor& in) {
        return softmax_cross_entropy(t, classifier_head(t, in, head), {1, 3});
      }, x);
    }
  }
  return worst;
}

// Central-difference check of d(loss)/d(t) for one network tensor, in
// training mode.
inline GradCheck network_tensor_grad_check(Network& net, const Tensor& images,
                                           const std::vector<int>& labels, Tensor t, double eps) {
  auto loss = [&](bool record) {
    Tape tape;
    tape.set_enabled(record);
    Tensor y = softmax_cross_entropy(tape, net.forward(tape, images, true), labels);
    if (record) {
      net.zero_grad();
      backward(tape, y);
    }
    return y.item();
  };
  loss(true);
  std::vector<double> analytic(t.numel(), 0.0);
  if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
  auto central = [&](std::size_t i, double h) {
    const double keep = t[i];
    t[i] = keep + h;
    const double up = loss(false);
    t[i] = keep - h;
    const double down = loss(false);
    t[i] = keep;
    return (up - down) / (2 * h);
  };
  GradCheck out;
  std::vector<double> numeric(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    numeric[i] = central(i, eps);
    const double half = central(i, eps / 2);
    const double scale = std::max({std::abs(numeric[i]), std::abs(half), kNetworkGradFloor});
    if (std::abs(numeric[i] - half) > 1e-4 * scale) out.near_kink = true;
  }
  out.error = oracle::max_relative_error(analytic, numeric, kNetworkGradFloor);
  return out;
}

// Every parameter tensor and every lambda table of a freshly built 2-block
// network with randomized lambda and BN scale, at one random point.
inline GradCheck two_block_network_grad_check(std::uint64_t seed, double eps) {
  Network net(two_block_config(), seed, false);
  std::mt19937_64 rng(seed * 31 + 7);
  std::uniform_real_distribution<double> unit(0.5, 1.5);
  for (auto& g : net.graphs()) {
    for (auto& v : g.lambda.data()) v = unit(rng);
  }
  for (auto* bn : net.batch_norms()) {
    for (auto& v : bn->scale.data()) v = unit(rng);
  }
  net.set_lambda_trainable(true);
  net.set_weights_trainable(true);
  Tensor images = oracle::random_tensor({4, 1, 6, 6}, rng);
  const std::vector<int> labels{0, 1, 2, 1};
  GradCheck worst;
  auto fold = [&](const GradCheck& c) {
    worst.error = std::max(worst.error, c.error);
    worst.near_kink = worst.near_kink || c.near_kink;
  };
  for (const auto& p : net.parameters()) {
    fold(network_tensor_grad_check(net, images, labels, p.tensor, eps));
  }
  for (const auto& l : net.lambdas()) {
    fold(network_tensor_grad_check(net, images, labels, l, eps));
  }
  return worst;
}

struct GradSuite {
  double worst = 0.0;
  int accepted = 0;
  int redrawn = 0;
};

// Draws seeds from `first_seed` on until `points` of them are not near a kink.
inline GradSuite two_block_network_grad_suite(int points, std::uint64_t first_seed) {
  GradSuite out;
  for (std::uint64_t seed = first_seed; out.accepted < points && out.redrawn < 4 * points; ++seed) {
    const GradCheck c = two_block_network_grad_check(seed, 1e-5);
    if (c.near_kink) {
      ++out.redrawn;
      continue;
    }
    ++out.accepted;
    out.worst = std::max(out.worst, c.error);
  }
  return out;
}

struct LassoRun {
  double worst = 0.0;  // max |lambda_i - S_gamma(a_i)| after the last step
  int slowest = 0;     // most steps any instance needed to get within tol
};

// APG-NAG on sum_i 1/2 (lambda_i - a_i)^2 + gamma |lambda_i| from lambda = 0,
// compared with the closed-form minimizer.
inline LassoRun lasso_convergence(int instances, int steps, double tol, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(1, 64);
  std::uniform_real_distribution<double> target(-2.0, 2.0), weight(0.0, 1.0);
  LassoRun out;
  for (int k = 0; k < instances; ++k) {
    const int n = dim(rng);
    std::vector<double> a(n), lam(n, 0.0), grad(n), gamma(n, weight(rng)), want(n);
    for (int i = 0; i < n; ++i) {
      a[i] = target(rng);
      want[i] = oracle::prox_l1(a[i], gamma[i]);
    }
    ApgNagState state(n, 0.9);
    int reached = -1;
    double err = 0.0;
    for (int t = 1; t <= steps; ++t) {
      for (int i = 0; i < n; ++i) grad[i] = lam[i] - a[i];
      apg_nag_step(lam, grad, 0.1, gamma, state);
      err = 0.0;
      for (int i = 0; i < n; ++i) err = std::max(err, std::abs(lam[i] - want[i]));
      if (err < tol && reached < 0) reached = t;
      if (err >= tol) reached = -1;
    }
    out.worst = std::max(out.worst, err);
    out.slowest = std::max(out.slowest, reached < 0 ? steps + 1 : reached);
  }
  return out;
}

// Multiplies performed by the naive reference implementation of one
// operation on a single image.
inline std::int64_t counted_flops(OpKind kind, std::size_t cin, std::size_t cout, std::size_t h,
                                  std::size_t w) {
  std::int64_t count = 0;
  const std::vector<double> x(cin * h * w, 0.0);
  auto conv = [&](std::size_t k, std::size_t stride, std::size_t pad, bool depthwise,
                  std::size_t out_channels) {
    const std::vector<double> wt(out_channels * (depthwise ? 1 : cin) * k * k, 0.0);
    oracle::naive_conv(x, 1, cin, h, w, wt, out_channels, k, stride, pad, depthwise, &count);
  };
  switch (kind) {
    case OpKind::SepConv3x3:
    case OpKind::SepConv5x5: {
      const std::size_t k = kind == OpKind::SepConv3x3 ? 3 : 5;
      conv(k, 1, k / 2, true, cin);
      // pointwise stage sees the depthwise output, same shape as x
      conv(1, 1, 0, false, cout);
      break;
    }
    case OpKind::Conv1x1: conv(1, 1, 0, false, cout); break;
    case OpKind::Conv3x3: conv(3, 1, 1, false, cout); break;
    case OpKind::ReductionConv:
      conv(1, 2, 0, false, cout);
      conv(3, 2, 1, false, cout);
      break;
    case OpKind::AvgPool3x3:
    case OpKind::MaxPool3x3:
      oracle::window_pool(x, 1, cin, h, w, kind == OpKind::MaxPool3x3);
      break;
    case OpKind::Linear:
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t i = 0; i < cin; ++i) ++count;
      break;
    case OpKind::Identity: break;
  }
  return count;
}

struct FlopsMismatch {
  int cases = 0;
  int mismatches = 0;
};

// flops_of_op against the multiply counter on `cases` random shapes, cycling
// through every costed operation kind.
inline FlopsMismatch flops_oracle_check(int cases, std::uint64_t seed) {
  static constexpr OpKind kKinds[] = {OpKind::SepConv3x3, OpKind::SepConv5x5, OpKind::AvgPool3x3,
                                      OpKind::MaxPool3x3, OpKind::Conv1x1,    OpKind::Conv3x3,
                                      OpKind::ReductionConv, OpKind::Linear};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> ch(1, 9), ext(1, 9);
  FlopsMismatch out;
  for (int i = 0; i < cases; ++i) {
    const OpKind kind = kKinds[static_cast<std::size_t>(i) % std::size(kKinds)];
    const std::size_t cin = ch(rng), h = ext(rng), w = ext(rng);
    // separable ops and pools keep the channel count inside a block
    const bool same = kind == OpKind::AvgPool3x3 || kind == OpKind::MaxPool3x3;
    const std::size_t cout = same ? cin : ch(rng);
    const auto formula = flops_of_op(kind, static_cast<std::int64_t>(cin),
                                     static_cast<std::int64_t>(cout), static_cast<std::int64_t>(h),
                                     static_cast<std::int64_t>(w));
    ++out.cases;
    if (formula != counted_flops(kind, cin, cout, h, w)) ++out.mismatches;
  }
  return out;
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

// Two 2x2 images {1,2,3,4}, {250,0,128,7} with labels 3, 9, written byte by byte.
inline std::vector<std::uint8_t> idx_image_fixture() {
  std::vector<std::uint8_t> b{0x00, 0x00, 0x08, 0x03};
  put_be32(b, 2);
  put_be32(b, 2);
  put_be32(b, 2);
  for (int v : {1, 2, 3, 4, 250, 0, 128, 7}) b.push_back(static_cast<std::uint8_t>(v));
  return b;
}

inline std::vector<std::uint8_t> idx_label_fixture() {
  std::vector<std::uint8_t> b{0x00, 0x00, 0x08, 0x01};
  put_be32(b, 2);
  b.push_back(3);
  b.push_back(9);
  return b;
}

inline bool idx_fixture_parses_exactly() {
  const Dataset d = parse_idx(idx_image_fixture(), idx_label_fixture());
  return d.size() == 2 && d.channels == 1 && d.height == 2 && d.width == 2 &&
         d.pixels == std::vector<double>{1, 2, 3, 4, 250, 0, 128, 7} &&
         d.labels == std::vector<int>{3, 9};
}

// One record: label 6, pixel i holds (i * 7 + 3) mod 256.
inline std::vector<std::uint8_t> cifar_fixture() {
  std::vector<std::uint8_t> b{6};
  for (std::size_t i = 0; i < 3072; ++i) b.push_back(static_cast<std::uint8_t>((i * 7 + 3) % 256));
  return b;
}

inline bool cifar_fixture_parses_exactly() {
  const auto bytes = cifar_fixture();
  const Dataset d = parse_cifar_binary(bytes);
  if (d.size() != 1 || d.labels[0] != 6 || d.pixels.size() != 3072) return false;
  for (std::size_t i = 0; i < 3072; ++i) {
    if (d.pixels[i] != static_cast<double>(bytes[i + 1])) return false;
  }
  return true;
}

inline NetworkConfig random_network_config(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> small(1, 4), classes(2, 12), chans(1, 16);
  std::uniform_real_distribution<double> width(0.1, 3.0);
  NetworkConfig c;
  c.stages = small(rng);
  c.blocks_per_stage = small(rng);
  c.levels = small(rng);
  c.ops_per_level = small(rng);
  c.init_channels = chans(rng);
  c.width_multiplier = width(rng);
  c.lambda_mode = std::bernoulli_distribution(0.5)(rng) ? LambdaMode::Shared : LambdaMode::Full;
  c.num_classes = classes(rng);
  c.in_channels = small(rng);
  c.image_size = std::uniform_int_distribution<int>(8, 40)(rng);
  return c;
}

// A valid descriptor: random lambda with exact zeros, pruned per table.
inline ArchitectureDescriptor random_descriptor(std::mt19937_64& rng) {
  ArchitectureDescriptor d;
  d.network = random_network_config(rng);
  std::uniform_real_distribution<double> zero_fraction(0.0, 1.0);
  std::normal_distribution<double> value(0.0, 1.0);
  std::vector<BlockDescriptor> tables;
  for (std::size_t t = 0; t < d.network.lambda_tables(); ++t) {
    BlockGraph g = build_block(d.network.levels, d.network.ops_per_level);
    std::bernoulli_distribution zero(zero_fraction(rng));
    for (auto& v : g.lambda.data()) v = zero(rng) ? 0.0 : value(rng);
    tables.push_back(describe_block(prune(g)));
  }
  for (std::size_t b = 0; b < d.network.block_count(); ++b) {
    d.blocks.push_back(tables[d.network.lambda_mode == LambdaMode::Shared ? 0 : b]);
  }
  d.config_hash = std::to_string(rng());
  d.seed = rng();
  return d;
}

inline ExperimentConfig random_experiment_config(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> small(1, 6), epochs(0, 200);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  ExperimentConfig c;
  PipelineConfig& p = c.pipeline;
  p.network = random_network_config(rng);
  SearchSchedule& s = p.schedule;
  s.pretrain_epochs = epochs(rng);
  s.search_epochs = epochs(rng);
  s.prune_interval = small(rng);
  s.weight_steps = small(rng);
  s.lambda_steps = small(rng);
  s.batch_size = std::uniform_int_distribution<int>(1, 256)(rng);
  s.lr_schedule = coin(rng) ? LrSchedule::Constant : LrSchedule::LinearDecay;
  s.lr = 1e-3 + unit(rng);
  s.early_stop_checks = small(rng);
  const int kind = std::uniform_int_distribution<int>(0, 2)(rng);
  p.budget.kind = static_cast<BudgetKind>(kind);
  p.budget.gamma = kind == 0 && coin(rng) ? 0.0 : std::pow(10.0, -6 + 6 * unit(rng));
  p.weight_decay = coin(rng) ? 0.0 : 1e-4 * unit(rng);
  p.split_training = coin(rng);
  p.pretrain = coin(rng);
  p.split_ratio = 0.05 + 0.9 * unit(rng);
  p.retrain_epochs = epochs(rng);
  p.retrain_lr = 1e-3 + unit(rng);
  p.retrain_lr_schedule = coin(rng) ? LrSchedule::Constant : LrSchedule::LinearDecay;
  p.target_flops = coin(rng) ? 0 : static_cast<std::int64_t>(rng() % 100000000);
  p.augmentation = {coin(rng), small(rng), coin(rng)};
  p.precision = coin(rng) ? Precision::F64 : Precision::F32;
  DatasetSpec& d = c.dataset;
  d.kind = static_cast<DatasetKind>(std::uniform_int_distribution<int>(0, 2)(rng));
  if (d.kind == DatasetKind::Synthetic) {
    p.network.in_channels = 1;
    d.num_classes = p.network.num_classes;
    d.size = p.network.image_size;
    d.per_class = small(rng) * 10;
    d.test_per_class = small(rng) * 5;
    d.seed = rng();
  } else if (d.kind == DatasetKind::Idx) {
    p.network.in_channels = 1;
    d.train_images = "data/train \"images\".idx";
    d.train_labels = "data/train-labels.idx";
    d.test_images = "data/t10k-images.idx";
    d.test_labels = "data/t10k-labels.idx";
  } else {
    p.network.in_channels = 3;
    p.network.image_size = 32;
    p.network.num_classes = 10;
    for (int i = 1; i <= small(rng); ++i) d.train_batches.push_back("cifar/data_batch_" + std::to_string(i) + ".bin");
    d.test_batch = "cifar/test_batch.bin";
  }
  c.out_dir = "out/run " + std::to_string(rng() % 1000);
  c.seed = rng();
  s.seed = c.seed;
  c.deterministic = coin(rng);
  c.threads = small(rng);
  return c;
}

struct RoundTrips {
  int descriptors_ok = 0;
  int configs_ok = 0;
};

inline RoundTrips round_trip_suite(int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RoundTrips out;
  for (int i = 0; i < instances; ++i) {
    const ArchitectureDescriptor d = random_descriptor(rng);
    validate_descriptor(d);
    if (deserialize_descriptor(serialize_descriptor(d)) == d) ++out.descriptors_ok;
    const ExperimentConfig c = random_experiment_config(rng);
    c.validate();
    if (parse_config(serialize_config(c)) == c) ++out.configs_ok;
  }
  return out;
}

}  // namespace harness
