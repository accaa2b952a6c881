#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sparsearch/tensor.hpp"

namespace sparsearch {

// The four block operations come first; the remaining kinds only appear in
// the fixed parts of the network (reduction blocks, block output reduction,
// stem, head) and in cost accounting.
enum class OpKind {
  SepConv3x3,
  SepConv5x5,
  AvgPool3x3,
  MaxPool3x3,
  ReductionConv,
  Identity,
  Conv1x1,
  Conv3x3,
  Linear,
};

bool is_block_op(OpKind kind);
std::string_view op_kind_name(OpKind kind);
// Throws std::invalid_argument for names that do not denote a kind.
OpKind op_kind_from_name(std::string_view name);
int sep_conv_kernel(OpKind kind);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

struct BatchNormParams {
  Tensor scale;         // [C]
  Tensor bias;          // [C]
  Tensor running_mean;  // [C], never trained
  Tensor running_var;   // [C], never trained
  bool freeze_scale = false;

  static BatchNormParams make(std::size_t channels, bool freeze_scale);
  std::size_t channels() const { return bias.numel(); }
  void set_freeze_scale(bool on);
};

// Learnable state of one block operation. Pooling kinds carry no tensors.
struct OpParams {
  OpKind kind = OpKind::Identity;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  Tensor depthwise;  // [C_in, 1, k, k]
  Tensor pointwise;  // [C_out, C_in, 1, 1]
  BatchNormParams bn;

  static OpParams make(OpKind kind, std::size_t c_in, std::size_t c_out, std::mt19937_64& rng,
                       bool freeze_bn_scale);
};

struct ConvBnParams {
  Tensor weight;  // [C_out, C_in, k, k]
  BatchNormParams bn;

  static ConvBnParams make(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                           std::mt19937_64& rng, bool freeze_bn_scale);
};

struct ReductionParams {
  ConvBnParams path1x1;
  ConvBnParams path3x3;

  static ReductionParams make(std::size_t c_in, std::mt19937_64& rng, bool freeze_bn_scale);
};

struct LinearParams {
  Tensor weight;  // [K, C]
  Tensor bias;    // [K]

  static LinearParams make(std::size_t c_in, std::size_t classes, std::mt19937_64& rng);
};

// Kaiming-style normal with std sqrt(2 / fan_in).
Tensor kaiming_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

// ---- primitives -------------------------------------------------------------

// Dense 2-D convolution, NCHW input, weight [C_out, C_in, k, k].
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, std::size_t stride,
              std::size_t padding);
// Per-channel convolution, weight [C, 1, k, k].
Tensor depthwise_conv2d(Tape& tape, const Tensor& x, const Tensor& weight, std::size_t stride,
                        std::size_t padding);
// Training mode normalizes with batch statistics over (N, H, W) and updates
// the running statistics; eval mode uses the running statistics only.
Tensor batch_norm(Tape& tape, const Tensor& x, const BatchNormParams& bn, bool training);

enum class PoolMode { Avg, Max };
// 3x3, stride 1, same padding; averages count valid elements only.
Tensor pool3x3(Tape& tape, const Tensor& x, PoolMode mode);
Tensor global_avg_pool(Tape& tape, const Tensor& x);
// x [N, C] times weight^T [C, K] plus bias.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels);

// ---- composite operations -------------------------------------------------

Tensor conv_bn_relu(Tape& tape, const Tensor& x, const ConvBnParams& p, std::size_t stride,
                    bool training);
// depthwise (same padding) -> pointwise -> BN -> ReLU.
Tensor sep_conv(Tape& tape, const Tensor& x, const OpParams& p, bool training);
// Sum of 1x1 and 3x3 stride-2 Conv-BN-ReLU paths; doubles the channel count.
Tensor reduction_block(Tape& tape, const Tensor& x, const ReductionParams& p, bool training);
Tensor classifier_head(Tape& tape, const Tensor& x, const LinearParams& p);
// Dispatches on p.kind for the four block operations.
Tensor apply_block_op(Tape& tape, const Tensor& x, const OpParams& p, bool training);

}  // namespace sparsearch
