#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "sparsearch/nn_ops.hpp"

using namespace sparsearch;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Projects y onto fixed random weights so every output coordinate matters.
Tensor project(Tape& tape, const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor r = oracle::random_tensor(y.shape(), rng);
  return sum(tape, mul(tape, y, r));
}

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;
constexpr int kPoints = 10;

}  // namespace

TEST(Conv, MatchesNaiveLoops) {
  std::mt19937_64 rng(1);
  struct Case {
    std::size_t n, cin, cout, h, w, k, stride, pad;
  };
  const Case cases[] = {{1, 1, 1, 3, 3, 3, 1, 0}, {2, 3, 4, 5, 6, 3, 1, 1}, {2, 2, 3, 7, 7, 3, 2, 1},
                        {1, 4, 2, 6, 5, 1, 2, 0}, {2, 3, 3, 8, 8, 5, 1, 2}, {1, 2, 5, 9, 4, 5, 2, 2}};
  for (const auto& c : cases) {
    Tensor x = oracle::random_tensor({c.n, c.cin, c.h, c.w}, rng);
    Tensor wt = oracle::random_tensor({c.cout, c.cin, c.k, c.k}, rng);
    Tape tape;
    Tensor y = conv2d(tape, x, wt, c.stride, c.pad);
    const auto expect = oracle::naive_conv(values(x), c.n, c.cin, c.h, c.w, values(wt), c.cout, c.k,
                                           c.stride, c.pad, false);
    ASSERT_EQ(y.numel(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-12);
  }
}

TEST(Conv, DepthwiseMatchesNaiveLoops) {
  std::mt19937_64 rng(2);
  for (std::size_t k : {3u, 5u}) {
    for (std::size_t stride : {1u, 2u}) {
      Tensor x = oracle::random_tensor({2, 3, 7, 6}, rng);
      Tensor wt = oracle::random_tensor({3, 1, k, k}, rng);
      Tape tape;
      Tensor y = depthwise_conv2d(tape, x, wt, stride, k / 2);
      const auto expect =
          oracle::naive_conv(values(x), 2, 3, 7, 6, values(wt), 3, k, stride, k / 2, true);
      ASSERT_EQ(y.numel(), expect.size());
      for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-12);
    }
  }
}

TEST(Conv, RejectsBadShapes) {
  Tape tape;
  EXPECT_THROW(conv2d(tape, Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({3, 1, 3, 3}), 1, 1),
               TensorError);
  EXPECT_THROW(conv2d(tape, Tensor::zeros({2, 4, 4}), Tensor::zeros({3, 2, 3, 3}), 1, 1),
               TensorError);
  EXPECT_THROW(conv2d(tape, Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({3, 2, 5, 5}), 1, 0),
               TensorError);
}

TEST(Pool, MatchesWindowScan) {
  std::mt19937_64 rng(3);
  Tensor x = oracle::random_tensor({2, 3, 5, 4}, rng);
  for (bool max_mode : {false, true}) {
    Tape tape;
    Tensor y = pool3x3(tape, x, max_mode ? PoolMode::Max : PoolMode::Avg);
    const auto expect = oracle::window_pool(values(x), 2, 3, 5, 4, max_mode);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-14);
  }
}

TEST(Pool, AverageCountsOnlyValidCells) {
  Tensor x = Tensor::ones({1, 1, 3, 3});
  Tape tape;
  Tensor y = pool3x3(tape, x, PoolMode::Avg);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y[i], 1.0);
}

TEST(Loss, CrossEntropyMatchesLogSumExp) {
  std::mt19937_64 rng(4);
  Tensor logits = oracle::random_tensor({5, 4}, rng, 3.0);
  const std::vector<int> labels{0, 3, 1, 1, 2};
  Tape tape;
  Tensor loss = softmax_cross_entropy(tape, logits, labels);
  EXPECT_NEAR(loss.item(), oracle::cross_entropy(values(logits), 4, labels), 1e-13);
  EXPECT_THROW(softmax_cross_entropy(tape, logits, {0, 1, 2, 3, 4}), TensorError);
  EXPECT_THROW(softmax_cross_entropy(tape, logits, {0, 1}), TensorError);
}

TEST(Loss, CrossEntropyStableForHugeLogits) {
  Tensor logits = Tensor::from_values({1, 3}, {1000.0, 0.0, -1000.0});
  Tape tape;
  EXPECT_NEAR(softmax_cross_entropy(tape, logits, {0}).item(), 0.0, 1e-12);
  EXPECT_NEAR(softmax_cross_entropy(tape, logits, {1}).item(), 1000.0, 1e-9);
}

TEST(BatchNorm, TrainingMatchesFormulaAndUpdatesRunningStats) {
  std::mt19937_64 rng(5);
  Tensor x = oracle::random_tensor({3, 2, 2, 2}, rng, 2.0);
  BatchNormParams bn = BatchNormParams::make(2, false);
  bn.scale[0] = 1.5;
  bn.scale[1] = -0.5;
  bn.bias[0] = 0.25;
  Tape tape;
  Tensor y = batch_norm(tape, x, bn, true);
  const auto expect =
      oracle::batch_norm_train(values(x), 3, 2, 4, values(bn.scale), values(bn.bias), kBatchNormEps);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-12);

  // running = 0.9 * running + 0.1 * batch (biased variance)
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double mean = 0.0, var = 0.0;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t i = 0; i < 4; ++i) mean += x[(b * 2 + ch) * 4 + i];
    mean /= 12.0;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t i = 0; i < 4; ++i) var += std::pow(x[(b * 2 + ch) * 4 + i] - mean, 2);
    var /= 12.0;
    EXPECT_NEAR(bn.running_mean[ch], 0.1 * mean, 1e-14);
    EXPECT_NEAR(bn.running_var[ch], 0.9 + 0.1 * var, 1e-14);
  }
}

TEST(BatchNorm, EvalUsesRunningStats) {
  BatchNormParams bn = BatchNormParams::make(1, false);
  bn.running_mean[0] = 2.0;
  bn.running_var[0] = 4.0;
  bn.scale[0] = 3.0;
  bn.bias[0] = 1.0;
  Tensor x = Tensor::from_values({1, 1, 1, 2}, {2.0, 6.0});
  Tape tape;
  Tensor y = batch_norm(tape, x, bn, false);
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 1.0 + 3.0 * 4.0 / std::sqrt(4.0 + kBatchNormEps), 1e-12);
  EXPECT_EQ(bn.running_mean[0], 2.0);
}

TEST(BatchNorm, FrozenScaleStaysOneWithoutGradient) {
  BatchNormParams bn = BatchNormParams::make(2, true);
  std::mt19937_64 rng(6);
  Tensor x = oracle::random_tensor({2, 2, 2, 2}, rng);
  x.set_requires_grad(true);
  Tape tape;
  backward(tape, project(tape, batch_norm(tape, x, bn, true), 1));
  EXPECT_FALSE(bn.scale.has_grad());
  EXPECT_EQ(bn.scale[0], 1.0);
  EXPECT_TRUE(bn.bias.has_grad());
}

TEST(Linear, MatchesMatrixProduct) {
  Tensor x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor w = Tensor::from_values({2, 3}, {1, 0, -1, 2, 1, 0});
  Tensor b = Tensor::from_values({2}, {0.5, -0.5});
  Tape tape;
  Tensor y = linear(tape, x, w, b);
  const std::vector<double> expect{-1.5, 3.5, -1.5, 12.5};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[i], expect[i]);
}

TEST(OpKind, NamesRoundTrip) {
  for (auto k : {OpKind::SepConv3x3, OpKind::SepConv5x5, OpKind::AvgPool3x3, OpKind::MaxPool3x3,
                 OpKind::ReductionConv, OpKind::Identity, OpKind::Conv1x1, OpKind::Conv3x3,
                 OpKind::Linear}) {
    EXPECT_EQ(op_kind_from_name(op_kind_name(k)), k);
  }
  EXPECT_THROW(op_kind_from_name("dil_conv"), std::invalid_argument);
  EXPECT_TRUE(is_block_op(OpKind::MaxPool3x3));
  EXPECT_FALSE(is_block_op(OpKind::Conv1x1));
}

// ---- finite-difference checks ------------------------------------------------

class GradCheck : public ::testing::Test {
 protected:
  std::mt19937_64 rng{11};
};

TEST_F(GradCheck, Conv2dInputAndWeight) {
  for (int p = 0; p < kPoints; ++p) {
    Tensor x = oracle::random_tensor({2, 2, 5, 5}, rng);
    Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
    const std::size_t stride = 1 + p % 2;
    EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return project(t, conv2d(t, in, w, stride, 1), p); }, x, kEps), kTol);
    EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return project(t, conv2d(t, x, in, stride, 1), p); }, w, kEps), kTol);
  }
}

TEST_F(GradCheck, DepthwiseInputAndWeight) {
  for (int p = 0; p < kPoints; ++p) {
    Tensor x = oracle::random_tensor({2, 3, 6, 6}, rng);
    Tensor w = oracle::random_tensor({3, 1, 5, 5}, rng);
    EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return project(t, depthwise_conv2d(t, in, w, 1, 2), p); }, x, kEps), kTol);
    EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return project(t, depthwise_conv2d(t, x, in, 1, 2), p); }, w, kEps), kTol);
  }
}

TEST_F(GradCheck, BatchNormTrainAndEval) {
  for (int p = 0; p < kPoints; ++p) {
    Tensor x = oracle::random_tensor({3, 2, 3, 3}, rng, 2.0);
    BatchNormParams bn = BatchNormParams::make(2, false);
    bn.scale = oracle::random_tensor({2}, rng);
    bn.bias = oracle::random_tensor({2}, rng);
    bn.scale.set_requires_grad(true);
    bn.bias.set_requires_grad(true);
    bn.running_var[0] = 0.7;
    for (bool training : {true, false}) {
      EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return project(t, batch_norm(t, in, bn, training), p); }, x, kEps), kTol);
      EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) {
                  BatchNormParams b = bn;
                  b.scale = in;
                  return project(t, batch_norm(t, x, b, training), p);
                }, bn.scale, kEps), kTol);
      EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) {
                  BatchNormParams b = bn;
                  b.bias = in;
                  return project(t, batch_norm(t, x, b, training), p);
                }, bn.bias, kEps), kTol);
    }
  }
}

TEST_F(GradCheck, Pooling) {
  for (int p = 0; p < kPoints; ++p) {
    Tensor x = oracle::random_tensor({2, 2, 4, 5}, rng);
    for (auto mode : {PoolMode::Avg, PoolMode::Max}) {
      EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return project(t, pool3x3(t, in, mode), p); }, x, kEps), kTol);
    }
    EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return project(t, global_avg_pool(t, in), p); }, x, kEps), kTol);
  }
}

TEST_F(GradCheck, LinearAndCrossEntropy) {
  for (int p = 0; p < kPoints; ++p) {
    Tensor x = oracle::random_tensor({4, 3}, rng);
    Tensor w = oracle::random_tensor({5, 3}, rng);
    Tensor b = oracle::random_tensor({5}, rng);
    const std::vector<int> labels{0, 4, 2, 2};
    auto loss = [&](Tape& t, const Tensor& xx, const Tensor& ww, const Tensor& bb) {
      return softmax_cross_entropy(t, linear(t, xx, ww, bb), labels);
    };
    EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return loss(t, in, w, b); }, x, kEps), kTol);
    EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return loss(t, x, in, b); }, w, kEps), kTol);
    EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return loss(t, x, w, in); }, b, kEps), kTol);
  }
}

TEST_F(GradCheck, CompositeOperations) {
  for (int p = 0; p < kPoints; ++p) {
    Tensor x = oracle::random_tensor({2, 3, 5, 5}, rng);
    for (auto kind : {OpKind::SepConv3x3, OpKind::SepConv5x5}) {
      OpParams op = OpParams::make(kind, 3, 3, rng, false);
      EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return project(t, apply_block_op(t, in, op, true), p); }, x, kEps), kTol);
      EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) {
                  OpParams o = op;
                  o.depthwise = in;
                  return project(t, apply_block_op(t, x, o, true), p);
                }, op.depthwise, kEps), kTol);
    }
    ReductionParams red = ReductionParams::make(3, rng, false);
    EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return project(t, reduction_block(t, in, red, true), p); }, x, kEps), kTol);
    LinearParams head = LinearParams::make(3, 4, rng);
    EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& in) { return softmax_cross_entropy(t, classifier_head(t, in, head), {1, 3}); }, x, kEps), kTol);
  }
}
