#include "sparsearch/network.hpp"

#include <cmath>
#include <stdexcept>

namespace sparsearch {

std::string_view lambda_mode_name(LambdaMode mode) {
  return mode == LambdaMode::Shared ? "shared" : "full";
}

LambdaMode lambda_mode_from_name(std::string_view name) {
  if (name == "shared") return LambdaMode::Shared;
  if (name == "full") return LambdaMode::Full;
  throw std::invalid_argument("lambda_mode must be 'shared' or 'full', got '" + std::string(name) +
                              "'");
}

void NetworkConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw std::invalid_argument(std::string(field) + " must be >= 1");
  };
  positive(stages, "stages");
  positive(blocks_per_stage, "blocks_per_stage");
  positive(levels, "levels");
  positive(ops_per_level, "ops_per_level");
  positive(init_channels, "init_channels");
  positive(num_classes, "num_classes");
  positive(in_channels, "in_channels");
  positive(image_size, "image_size");
  if (!(width_multiplier > 0.0) || !std::isfinite(width_multiplier)) {
    throw std::invalid_argument("width_multiplier must be a positive finite number");
  }
}

std::size_t NetworkConfig::stage_of_block(std::size_t block) const {
  return block / static_cast<std::size_t>(blocks_per_stage);
}

std::size_t NetworkConfig::stage_width(std::size_t stage) const {
  const double scaled = std::round(width_multiplier * init_channels);
  const std::size_t base = scaled < 1.0 ? 1 : static_cast<std::size_t>(scaled);
  return base << stage;
}

std::size_t NetworkConfig::stage_extent(std::size_t stage) const {
  std::size_t e = static_cast<std::size_t>(image_size);
  for (std::size_t s = 0; s < stage; ++s) e = (e + 1) / 2;
  return e;
}

BlockParams BlockParams::make(const BlockGraph& graph, std::size_t channels, std::mt19937_64& rng,
                              bool freeze_bn_scale) {
  BlockParams p;
  for (std::size_t slot = 0; slot < graph.op_count(); ++slot) {
    p.ops.emplace_back(
        OpParams::make(graph.op_kind(graph.op_at(slot)), channels, channels, rng, freeze_bn_scale));
  }
  // fan-in of the full concatenation
  const std::size_t fan_in = channels * graph.op_count();
  for (std::size_t slot = 0; slot < graph.op_count(); ++slot) {
    p.reduce_slices.push_back(kaiming_normal({channels, channels, 1, 1}, fan_in, rng));
  }
  p.reduce_bn = BatchNormParams::make(channels, freeze_bn_scale);
  return p;
}

Tensor node_forward(Tape& tape, const BlockGraph& graph, NodeId op, const Tensor& block_input,
                    const std::vector<Tensor>& outputs, const OpParams& params, bool training) {
  const std::size_t slot = graph.op_slot(op);
  std::vector<Tensor> terms;
  bool any_nonzero = false;
  for (std::size_t e : graph.incoming(slot)) {
    if (!graph.active[e]) continue;
    const NodeId src = graph.edges()[e].src;
    const Tensor& h = src == graph.input_node() ? block_input : outputs[graph.op_slot(src)];
    if (!h.defined()) continue;
    if (h.shape() != block_input.shape()) {
      throw TensorError("node_forward: predecessor " + node_label(src) + " has shape " +
                        shape_to_string(h.shape()) + ", expected " +
                        shape_to_string(block_input.shape()));
    }
    any_nonzero = any_nonzero || graph.lambda[e] != 0.0;
    terms.push_back(scale_by(tape, h, graph.lambda, e));
  }
  if (!any_nonzero) return {};
  Tensor merged = terms.size() == 1 ? terms.front() : add_n(tape, terms);
  return apply_block_op(tape, merged, params, training);
}

Tensor block_forward(Tape& tape, const BlockGraph& graph, const BlockParams& params,
                     const Tensor& block_input, bool training) {
  std::vector<Tensor> outputs(graph.op_count());
  for (std::size_t slot = 0; slot < graph.op_count(); ++slot) {
    const auto& op = params.ops[slot];
    if (!op) {
      for (std::size_t e : graph.incoming(slot)) {
        if (graph.active[e]) throw std::logic_error("active edge into a deleted operation");
      }
      continue;
    }
    outputs[slot] = node_forward(tape, graph, graph.op_at(slot), block_input, outputs, *op, training);
  }

  std::vector<Tensor> parts, slices;
  bool any_nonzero = false;
  for (std::size_t slot = 0; slot < graph.op_count(); ++slot) {
    const std::size_t e = graph.output_edge(slot);
    if (!graph.active[e] || !outputs[slot].defined()) continue;
    any_nonzero = any_nonzero || graph.lambda[e] != 0.0;
    parts.push_back(scale_by(tape, outputs[slot], graph.lambda, e));
    slices.push_back(params.reduce_slices[slot]);
  }
  if (!any_nonzero) return block_input;

  Tensor cat = parts.size() == 1 ? parts.front() : concat_channels(tape, parts);
  Tensor weight = slices.size() == 1 ? slices.front() : concat_channels(tape, slices);
  Tensor reduced = relu(tape, batch_norm(tape, conv2d(tape, cat, weight, 1, 0), params.reduce_bn,
                                         training));
  return add(tape, reduced, block_input);
}

bool decays(ParamRole role) {
  return role == ParamRole::ConvWeight || role == ParamRole::LinearWeight;
}

Network::Network(NetworkConfig config, std::uint64_t seed, bool freeze_bn_scale)
    : config_(std::move(config)), freeze_bn_scale_(freeze_bn_scale) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t c0 = config_.stage_width(0);
  stem_ = ConvBnParams::make(static_cast<std::size_t>(config_.in_channels), c0, 3, rng,
                             freeze_bn_scale);
  for (std::size_t g = 0; g < config_.lambda_tables(); ++g) {
    graphs_.push_back(build_block(config_.levels, config_.ops_per_level));
  }
  for (std::size_t b = 0; b < config_.block_count(); ++b) {
    const std::size_t stage = config_.stage_of_block(b);
    blocks_.push_back(
        BlockParams::make(graphs_[graph_index(b)], config_.stage_width(stage), rng, freeze_bn_scale));
    const bool stage_end = (b + 1) % static_cast<std::size_t>(config_.blocks_per_stage) == 0;
    if (stage_end && stage + 1 < static_cast<std::size_t>(config_.stages)) {
      reductions_.push_back(ReductionParams::make(config_.stage_width(stage), rng, freeze_bn_scale));
    }
  }
  head_ = LinearParams::make(config_.stage_width(config_.stages - 1),
                             static_cast<std::size_t>(config_.num_classes), rng);
}

std::size_t Network::graph_index(std::size_t block) const {
  return config_.lambda_mode == LambdaMode::Shared ? 0 : block;
}

Tensor Network::forward(Tape& tape, const Tensor& x, bool training) const {
  if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(config_.in_channels)) {
    throw TensorError("network input must be [N," + std::to_string(config_.in_channels) +
                      ",H,W], got " + shape_to_string(x.shape()));
  }
  Tensor h = conv_bn_relu(tape, x, stem_, 1, training);
  std::size_t reduction = 0;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    h = block_forward(tape, graphs_[graph_index(b)], blocks_[b], h, training);
    const bool stage_end = (b + 1) % static_cast<std::size_t>(config_.blocks_per_stage) == 0;
    if (stage_end && reduction < reductions_.size()) {
      h = reduction_block(tape, h, reductions_[reduction++], training);
    }
  }
  return classifier_head(tape, h, head_);
}

namespace {

void add_bn(std::vector<ParamRef>& out, const std::string& prefix, const BatchNormParams& bn) {
  out.push_back({prefix + ".scale", bn.scale, ParamRole::BnScale});
  out.push_back({prefix + ".bias", bn.bias, ParamRole::BnBias});
}

void add_bn_buffers(std::vector<ParamRef>& out, const std::string& prefix,
                    const BatchNormParams& bn) {
  out.push_back({prefix + ".running_mean", bn.running_mean, ParamRole::BnBias});
  out.push_back({prefix + ".running_var", bn.running_var, ParamRole::BnBias});
}

// Works for const and mutable parameter sets alike.
template <typename Stem, typename Blocks, typename Reductions, typename Fn>
void for_each_bn(Stem& stem, Blocks& blocks, Reductions& reductions, Fn&& fn) {
  fn("stem.bn", stem.bn);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string pre = "block" + std::to_string(b);
    for (std::size_t s = 0; s < blocks[b].ops.size(); ++s) {
      auto& op = blocks[b].ops[s];
      if (op && op->pointwise.defined()) fn(pre + ".op" + std::to_string(s) + ".bn", op->bn);
    }
    if (blocks[b].reduce_bn.scale.defined()) fn(pre + ".reduce_bn", blocks[b].reduce_bn);
  }
  for (std::size_t r = 0; r < reductions.size(); ++r) {
    const std::string pre = "reduction" + std::to_string(r);
    fn(pre + ".path1x1.bn", reductions[r].path1x1.bn);
    fn(pre + ".path3x3.bn", reductions[r].path3x3.bn);
  }
}

}  // namespace

std::vector<ParamRef> Network::parameters() const {
  std::vector<ParamRef> out;
  out.push_back({"stem.weight", stem_.weight, ParamRole::ConvWeight});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string pre = "block" + std::to_string(b);
    for (std::size_t s = 0; s < blocks_[b].ops.size(); ++s) {
      const auto& op = blocks_[b].ops[s];
      if (!op || !op->depthwise.defined()) continue;
      const std::string name = pre + ".op" + std::to_string(s);
      out.push_back({name + ".depthwise", op->depthwise, ParamRole::ConvWeight});
      out.push_back({name + ".pointwise", op->pointwise, ParamRole::ConvWeight});
    }
    for (std::size_t s = 0; s < blocks_[b].reduce_slices.size(); ++s) {
      if (blocks_[b].reduce_slices[s].defined()) {
        out.push_back({pre + ".reduce" + std::to_string(s), blocks_[b].reduce_slices[s],
                       ParamRole::ConvWeight});
      }
    }
  }
  for (std::size_t r = 0; r < reductions_.size(); ++r) {
    const std::string pre = "reduction" + std::to_string(r);
    out.push_back({pre + ".path1x1.weight", reductions_[r].path1x1.weight, ParamRole::ConvWeight});
    out.push_back({pre + ".path3x3.weight", reductions_[r].path3x3.weight, ParamRole::ConvWeight});
  }
  out.push_back({"head.weight", head_.weight, ParamRole::LinearWeight});
  out.push_back({"head.bias", head_.bias, ParamRole::LinearBias});
  for_each_bn(stem_, blocks_, reductions_,
              [&](const std::string& name, const BatchNormParams& bn) { add_bn(out, name, bn); });
  return out;
}

std::vector<ParamRef> Network::buffers() const {
  std::vector<ParamRef> out;
  for_each_bn(stem_, blocks_, reductions_, [&](const std::string& name, const BatchNormParams& bn) {
    add_bn_buffers(out, name, bn);
  });
  return out;
}

std::vector<BatchNormParams*> Network::batch_norms() {
  std::vector<BatchNormParams*> out;
  for_each_bn(stem_, blocks_, reductions_,
              [&](const std::string&, BatchNormParams& bn) { out.push_back(&bn); });
  return out;
}

std::vector<Tensor> Network::lambdas() const {
  std::vector<Tensor> out;
  for (const auto& g : graphs_) out.push_back(g.lambda);
  return out;
}

void Network::set_freeze_bn_scale(bool on) {
  freeze_bn_scale_ = on;
  for (auto* bn : batch_norms()) bn->set_freeze_scale(on);
}

void Network::set_lambda_trainable(bool on) {
  lambda_trainable_ = on;
  for (auto& g : graphs_) g.lambda.set_requires_grad(on);
}

void Network::set_weights_trainable(bool on) {
  for (auto& p : parameters()) {
    Tensor t = p.tensor;
    if (p.role == ParamRole::BnScale) {
      t.set_requires_grad(on && !freeze_bn_scale_);
    } else {
      t.set_requires_grad(on);
    }
  }
}

void Network::zero_grad() {
  for (auto& p : parameters()) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  for (auto& g : graphs_) g.lambda.zero_grad();
}

void Network::apply_masks() {
  for (auto& g : graphs_) {
    BlockGraph cleaned = remove_dead_ops(g);
    g.active = cleaned.active;
  }
  zero_inactive_lambdas();
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const BlockGraph& g = graphs_[graph_index(b)];
    const auto live = g.live_ops();
    auto& params = blocks_[b];
    for (std::size_t slot = 0; slot < g.op_count(); ++slot) {
      if (!live[slot]) params.ops[slot].reset();
      if (!g.active[g.output_edge(slot)]) params.reduce_slices[slot] = Tensor();
    }
    if (g.is_identity()) params.reduce_bn = BatchNormParams{};
  }
}

void Network::zero_inactive_lambdas() {
  for (auto& g : graphs_) {
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      if (g.active[e]) continue;
      g.lambda[e] = 0.0;
      if (g.lambda.has_grad()) g.lambda.mutable_grad()[e] = 0.0;
    }
  }
}

}  // namespace sparsearch
