#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sparsearch/block_graph.hpp"
#include "sparsearch/nn_ops.hpp"

namespace sparsearch {

enum class LambdaMode { Shared, Full };

std::string_view lambda_mode_name(LambdaMode mode);
LambdaMode lambda_mode_from_name(std::string_view name);

struct NetworkConfig {
  int stages = 2;
  int blocks_per_stage = 2;
  int levels = 2;
  int ops_per_level = 4;
  int init_channels = 8;
  double width_multiplier = 1.0;
  LambdaMode lambda_mode = LambdaMode::Shared;
  int num_classes = 3;
  int in_channels = 1;
  int image_size = 16;

  bool operator==(const NetworkConfig&) const = default;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  std::size_t block_count() const { return static_cast<std::size_t>(stages * blocks_per_stage); }
  std::size_t stage_of_block(std::size_t block) const;
  // First stage uses max(1, round(w * init_channels)); every later stage doubles it.
  std::size_t stage_width(std::size_t stage) const;
  std::size_t stage_extent(std::size_t stage) const;
  std::size_t lambda_tables() const { return lambda_mode == LambdaMode::Shared ? 1 : block_count(); }
};

// Learnable state of one block. Entries are indexed by operation slot and are
// empty once the operation has been deleted by hard pruning.
struct BlockParams {
  std::vector<std::optional<OpParams>> ops;
  std::vector<Tensor> reduce_slices;  // [C, C, 1, 1] slice of the output 1x1 conv
  BatchNormParams reduce_bn;

  static BlockParams make(const BlockGraph& graph, std::size_t channels, std::mt19937_64& rng,
                          bool freeze_bn_scale);
};

// One operation node: applies its kind to the lambda-weighted sum over active
// incoming edges from computed predecessors. Returns an undefined tensor when
// every such edge has lambda exactly zero (the node is isolated).
// `outputs` holds the computed activations by operation slot.
Tensor node_forward(Tape& tape, const BlockGraph& graph, NodeId op, const Tensor& block_input,
                    const std::vector<Tensor>& outputs, const OpParams& params, bool training);

// Evaluates the block in level order and reduces contributing nodes by
// concatenation + 1x1 Conv-BN-ReLU, adding the block input as a residual.
// Returns the block input unchanged when no node contributes with nonzero lambda.
Tensor block_forward(Tape& tape, const BlockGraph& graph, const BlockParams& params,
                     const Tensor& block_input, bool training);

enum class ParamRole { ConvWeight, LinearWeight, LinearBias, BnScale, BnBias };

struct ParamRef {
  std::string name;
  Tensor tensor;
  ParamRole role;
};

// Weight decay applies to conv and linear weights only.
bool decays(ParamRole role);

class Network {
 public:
  Network(NetworkConfig config, std::uint64_t seed, bool freeze_bn_scale);

  const NetworkConfig& config() const { return config_; }
  Tensor forward(Tape& tape, const Tensor& x, bool training) const;

  std::size_t block_count() const { return blocks_.size(); }
  std::size_t graph_index(std::size_t block) const;
  BlockGraph& graph_of_block(std::size_t block) { return graphs_[graph_index(block)]; }
  const BlockGraph& graph_of_block(std::size_t block) const { return graphs_[graph_index(block)]; }
  std::vector<BlockGraph>& graphs() { return graphs_; }
  const std::vector<BlockGraph>& graphs() const { return graphs_; }
  const BlockParams& block(std::size_t b) const { return blocks_[b]; }
  BlockParams& block(std::size_t b) { return blocks_[b]; }

  // Learnable tensors except lambda, including frozen BN scales.
  std::vector<ParamRef> parameters() const;
  // Non-learnable state (BN running statistics).
  std::vector<ParamRef> buffers() const;
  std::vector<BatchNormParams*> batch_norms();
  std::vector<Tensor> lambdas() const;

  void set_freeze_bn_scale(bool on);
  bool bn_scale_frozen() const { return freeze_bn_scale_; }
  void set_lambda_trainable(bool on);
  void set_weights_trainable(bool on);
  void zero_grad();

  // Deletes the parameters of operations and output slices whose edges are
  // all inactive in the owning graph. Dead operations are removed from the
  // masks first.
  void apply_masks();
  // Sets every inactive lambda and its gradient to exactly zero.
  void zero_inactive_lambdas();

 private:
  NetworkConfig config_;
  bool freeze_bn_scale_;
  ConvBnParams stem_;
  std::vector<BlockParams> blocks_;
  std::vector<ReductionParams> reductions_;
  LinearParams head_;
  std::vector<BlockGraph> graphs_;
  bool lambda_trainable_ = true;
};

}  // namespace sparsearch
