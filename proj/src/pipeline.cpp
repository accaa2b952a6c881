#include "sparsearch/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace sparsearch {

std::string_view lr_schedule_name(LrSchedule s) {
  return s == LrSchedule::Constant ? "constant" : "linear_decay";
}

LrSchedule lr_schedule_from_name(std::string_view name) {
  if (name == "constant") return LrSchedule::Constant;
  if (name == "linear_decay") return LrSchedule::LinearDecay;
  throw std::invalid_argument("learning-rate schedule must be constant or linear_decay, got '" +
                              std::string(name) + "'");
}

void SearchSchedule::validate() const {
  auto at_least = [](int v, int lo, const char* field) {
    if (v < lo) throw std::invalid_argument(std::string(field) + " must be >= " + std::to_string(lo));
  };
  at_least(pretrain_epochs, 0, "pretrain_epochs");
  at_least(search_epochs, 0, "search_epochs");
  at_least(prune_interval, 1, "prune_interval");
  at_least(weight_steps, 1, "weight_steps");
  at_least(lambda_steps, 1, "lambda_steps");
  at_least(batch_size, 1, "batch_size");
  at_least(early_stop_checks, 1, "early_stop_checks");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
}

void PipelineConfig::validate() const {
  network.validate();
  schedule.validate();
  if (!(budget.gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
  if (budget.kind != BudgetKind::None && !(budget.gamma > 0.0)) {
    throw std::invalid_argument("gamma must be > 0 when a budget policy is active");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) {
    throw std::invalid_argument("split_ratio must lie in (0, 1)");
  }
  if (retrain_epochs < 0) throw std::invalid_argument("retrain_epochs must be >= 0");
  if (!(retrain_lr > 0.0)) throw std::invalid_argument("retrain_lr must be > 0");
  if (target_flops < 0) throw std::invalid_argument("target_flops must be >= 0");
}

DataSplit split_dataset(const std::vector<int>& labels, int num_classes, double ratio,
                        std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0, 1)");
  if (labels.empty()) throw std::invalid_argument("cannot split an empty dataset");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw std::invalid_argument("label out of range");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::mt19937_64 rng(seed);
  DataSplit split;
  split.ratio = ratio;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& idx = by_class[k];
    if (idx.empty()) continue;
    const auto take = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
    if (take == 0 || take == idx.size()) {
      throw std::invalid_argument("class " + std::to_string(k) + " has " + std::to_string(idx.size()) +
                                  " samples, too few to populate both sides of the split");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    split.weight_set.insert(split.weight_set.end(), idx.begin(), idx.begin() + static_cast<long>(take));
    split.structure_set.insert(split.structure_set.end(), idx.begin() + static_cast<long>(take), idx.end());
  }
  std::sort(split.weight_set.begin(), split.weight_set.end());
  std::sort(split.structure_set.begin(), split.structure_set.end());
  return split;
}

SearchState::SearchState(const PipelineConfig& config, std::uint64_t seed)
    : network(config.network, seed, /*freeze_bn_scale=*/true),
      weight_opt(NagConfig{config.schedule.lr, 0.9, config.weight_decay}),
      rng(seed ^ 0x9e3779b97f4a7c15ULL) {
  for (const auto& g : network.graphs()) lambda_opt.emplace_back(g.edge_count(), 0.9);
}

double learning_rate(LrSchedule schedule, double base, std::size_t step, std::size_t total_steps) {
  if (schedule == LrSchedule::Constant || total_steps == 0) return base;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base * std::max(0.0, 1.0 - frac);
}

namespace {

class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> indices, std::mt19937_64& rng)
      : indices_(std::move(indices)), rng_(rng) {
    if (indices_.empty()) throw PipelineError("cannot draw batches from an empty index set");
    std::shuffle(indices_.begin(), indices_.end(), rng_);
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (pos_ == indices_.size()) {
        if (!out.empty()) break;
        std::shuffle(indices_.begin(), indices_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(indices_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> indices_;
  std::mt19937_64& rng_;
  std::size_t pos_ = 0;
};

struct StepStats {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

std::size_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const double* row = logits.data().data() + b * k;
    const auto best = static_cast<int>(std::max_element(row, row + k) - row);
    correct += best == labels[b] ? 1 : 0;
  }
  return correct;
}

// Forward + backward in training mode; gradients land on whatever currently
// requires grad.
StepStats forward_backward(Network& net, const Batch& batch, Precision precision) {
  Tape tape(precision);
  Tensor logits = net.forward(tape, batch.images, true);
  Tensor loss = softmax_cross_entropy(tape, logits, batch.labels);
  if (!std::isfinite(loss.item())) {
    throw PipelineError("training diverged: non-finite loss");
  }
  net.zero_grad();
  // nothing trainable reaches the loss once every edge is pruned
  if (loss.requires_grad()) backward(tape, loss);
  return {loss.item(), count_correct(logits, batch.labels), batch.labels.size()};
}

Batch draw(const Dataset& data, const std::vector<std::size_t>& idx, const Augmentation& aug,
           std::mt19937_64& rng) {
  return make_augmented_batch(data, idx, aug, rng);
}

std::size_t total_active(const Network& net) {
  std::size_t n = 0;
  for (const auto& g : net.graphs()) n += g.active_edge_count();
  return n;
}

void fill_gamma_summary(EpochMetrics& m, const std::vector<std::vector<double>>& gammas,
                        const Network& net) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0, s = 0.0;
  std::size_t n = 0;
  for (std::size_t g = 0; g < gammas.size(); ++g) {
    for (std::size_t e = 0; e < gammas[g].size(); ++e) {
      if (!net.graphs()[g].active[e]) continue;
      lo = std::min(lo, gammas[g][e]);
      hi = std::max(hi, gammas[g][e]);
      s += gammas[g][e];
      ++n;
    }
  }
  m.gamma_min = n ? lo : 0.0;
  m.gamma_max = hi;
  m.gamma_mean = n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace

EvalResult evaluate(const Network& net, const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size, Precision precision) {
  EvalResult r;
  if (indices.empty()) return r;
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    Batch b = make_batch(data, chunk);
    Tape tape(precision);
    tape.set_enabled(false);
    Tensor logits = net.forward(tape, b.images, false);
    loss += softmax_cross_entropy(tape, logits, b.labels).item() * static_cast<double>(chunk.size());
    correct += count_correct(logits, b.labels);
  }
  r.loss = loss / static_cast<double>(indices.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
  return r;
}

EvalResult evaluate(const Network& net, const Dataset& data, std::size_t batch_size,
                    Precision precision) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return evaluate(net, data, all, batch_size, precision);
}

void pretrain(SearchState& state, const Dataset& train, std::span<const std::size_t> weight_set,
              int epochs, const PipelineConfig& config, const MetricsSink& sink) {
  Network& net = state.network;
  net.set_freeze_bn_scale(true);
  net.set_lambda_trainable(false);
  net.set_weights_trainable(true);
  const auto bs = static_cast<std::size_t>(config.schedule.batch_size);
  const std::size_t steps_per_epoch = (weight_set.size() + bs - 1) / bs;
  const std::size_t total = steps_per_epoch * static_cast<std::size_t>(std::max(epochs, 0));
  std::size_t step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(weight_set.begin(), weight_set.end());
    std::shuffle(order.begin(), order.end(), state.rng);
    StepStats acc;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                   order.begin() + static_cast<long>(std::min(order.size(), start + bs)));
      const StepStats s = forward_backward(net, draw(train, idx, config.augmentation, state.rng), config.precision);
      const double lr = learning_rate(config.schedule.lr_schedule, config.schedule.lr, step++, total);
      state.weight_opt.step(net.parameters(), lr);
      acc.loss += s.loss * static_cast<double>(s.count);
      acc.correct += s.correct;
      acc.count += s.count;
    }
    ++state.pretrain_epochs_done;
    if (sink) {
      EpochMetrics m;
      m.epoch = state.pretrain_epochs_done;
      m.stage = "pretrain";
      m.loss = acc.count ? acc.loss / static_cast<double>(acc.count) : 0.0;
      m.accuracy = acc.count ? static_cast<double>(acc.correct) / static_cast<double>(acc.count) : 0.0;
      m.active_edges = total_active(net);
      m.block_flops = surviving_block_flops(net);
      sink(m);
    }
  }
}

std::size_t hard_prune(SearchState& state) {
  Network& net = state.network;
  for (auto& g : net.graphs()) g.active = prune(g).active;
  net.apply_masks();
  for (std::size_t t = 0; t < net.graphs().size(); ++t) {
    const auto& g = net.graphs()[t];
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      if (!g.active[e]) state.lambda_opt[t].v[e] = 0.0;
    }
  }
  state.weight_opt.retain(net.parameters());
  return total_active(net);
}

SearchResult search(SearchState& state, const Dataset& train, const DataSplit& split,
                    const PipelineConfig& config, const MetricsSink& sink) {
  Network& net = state.network;
  net.set_freeze_bn_scale(true);

  std::vector<std::size_t> weight_set = split.weight_set;
  std::vector<std::size_t> structure_set = split.structure_set;
  if (!config.split_training) {
    weight_set.insert(weight_set.end(), structure_set.begin(), structure_set.end());
    std::sort(weight_set.begin(), weight_set.end());
    weight_set.erase(std::unique(weight_set.begin(), weight_set.end()), weight_set.end());
    structure_set = weight_set;
  }
  BatchStream weight_stream(weight_set, state.rng);
  BatchStream structure_stream(structure_set, state.rng);

  const auto& sched = config.schedule;
  const auto bs = static_cast<std::size_t>(sched.batch_size);
  const auto x = static_cast<std::size_t>(sched.weight_steps);
  const auto y = static_cast<std::size_t>(sched.lambda_steps);
  const std::size_t cycles = std::max<std::size_t>(1, (weight_set.size() + bs * x - 1) / (bs * x));
  const std::size_t total_steps = cycles * static_cast<std::size_t>(sched.search_epochs);

  SearchResult result;
  std::vector<std::vector<bool>> last_masks;
  for (const auto& g : net.graphs()) last_masks.push_back(g.active);
  int unchanged = 0;
  std::size_t cycle_index = 0;

  for (int epoch = 0; epoch < sched.search_epochs; ++epoch) {
    const auto gammas = edge_gammas(net, config.budget);
    StepStats acc;
    for (std::size_t c = 0; c < cycles; ++c) {
      const double lr = learning_rate(sched.lr_schedule, sched.lr, cycle_index++, total_steps);
      net.set_lambda_trainable(false);
      net.set_weights_trainable(true);
      for (std::size_t i = 0; i < x; ++i) {
        const StepStats s =
            forward_backward(net, draw(train, weight_stream.next(bs), config.augmentation, state.rng), config.precision);
        state.weight_opt.step(net.parameters(), lr);
        acc.loss += s.loss * static_cast<double>(s.count);
        acc.correct += s.correct;
        acc.count += s.count;
      }
      net.set_weights_trainable(false);
      net.set_lambda_trainable(true);
      for (std::size_t i = 0; i < y; ++i) {
        forward_backward(net, draw(train, structure_stream.next(bs), config.augmentation, state.rng), config.precision);
        for (std::size_t t = 0; t < net.graphs().size(); ++t) {
          BlockGraph& g = net.graphs()[t];
          std::vector<double> grad(g.edge_count(), 0.0);
          if (g.lambda.has_grad()) std::copy(g.lambda.grad().begin(), g.lambda.grad().end(), grad.begin());
          apg_nag_step(g.lambda.data(), grad, lr, gammas[t], state.lambda_opt[t], &g.active);
        }
      }
    }
    net.set_weights_trainable(true);
    net.set_lambda_trainable(false);
    ++state.search_epochs_done;
    ++result.epochs;

    const bool prune_now = (epoch + 1) % sched.prune_interval == 0;
    if (prune_now) hard_prune(state);

    if (sink) {
      EpochMetrics m;
      m.epoch = state.search_epochs_done;
      m.stage = "search";
      m.loss = acc.count ? acc.loss / static_cast<double>(acc.count) : 0.0;
      m.accuracy = acc.count ? static_cast<double>(acc.correct) / static_cast<double>(acc.count) : 0.0;
      m.active_edges = total_active(net);
      m.block_flops = surviving_block_flops(net);
      fill_gamma_summary(m, gammas, net);
      sink(m);
    }

    if (prune_now) {
      bool all_identity = true;
      for (const auto& g : net.graphs()) all_identity = all_identity && g.is_identity();
      if (all_identity) {
        result.degenerate = true;
        break;
      }
      std::vector<std::vector<bool>> masks;
      for (const auto& g : net.graphs()) masks.push_back(g.active);
      unchanged = masks == last_masks ? unchanged + 1 : 0;
      last_masks = std::move(masks);
      if (unchanged >= sched.early_stop_checks) {
        result.early_stopped = true;
        break;
      }
    }
  }
  result.active_edges = hard_prune(state);
  bool all_identity = true;
  for (const auto& g : net.graphs()) all_identity = all_identity && g.is_identity();
  result.degenerate = all_identity;
  return result;
}

FinalizeResult finalize(const NetworkConfig& network, const std::vector<BlockGraph>& graphs,
                        std::int64_t target_flops, std::string config_hash, std::uint64_t seed) {
  if (target_flops <= 0) throw PipelineError("finalize: FLOPs target must be positive");
  auto at = [&](double w) {
    NetworkConfig c = network;
    c.width_multiplier = w;
    return c;
  };
  auto flops = [&](double w) { return flops_of_network(at(w), graphs); };
  constexpr double kMax = 8.0;
  // w small enough that every stage collapses to its minimum width
  const double w_min = 0.25 / static_cast<double>(network.init_channels);
  const std::int64_t smallest = flops(w_min);
  if (smallest > target_flops) {
    throw PipelineError("finalize: budget infeasible, the narrowest network needs " +
                        std::to_string(smallest) + " FLOPs > target " + std::to_string(target_flops));
  }
  double lo = w_min, hi = kMax;
  if (flops(hi) <= target_flops) {
    lo = hi;
  } else {
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      (flops(mid) <= target_flops ? lo : hi) = mid;
    }
  }
  const std::size_t c0 = at(lo).stage_width(0);
  FinalizeResult r;
  r.width_multiplier = static_cast<double>(c0) / static_cast<double>(network.init_channels);
  NetworkConfig chosen = at(r.width_multiplier);
  if (chosen.stage_width(0) != c0) chosen.width_multiplier = lo;
  r.flops = flops_of_network(chosen, graphs);
  r.width_multiplier = chosen.width_multiplier;

  Network shell(chosen, 0, true);  // topology holder only
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    shell.graphs()[g].active = graphs[g].active;
    std::copy(graphs[g].lambda.data().begin(), graphs[g].lambda.data().end(),
              shell.graphs()[g].lambda.data().begin());
  }
  r.descriptor = describe_network(shell, std::move(config_hash), seed);
  return r;
}

Network build_retrain_network(const ArchitectureDescriptor& descriptor, std::uint64_t seed) {
  const auto graphs = graphs_from_descriptor(descriptor);
  Network net(descriptor.network, seed, /*freeze_bn_scale=*/false);
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    BlockGraph& target = net.graphs()[g];
    target.active = graphs[g].active;
    for (std::size_t e = 0; e < target.edge_count(); ++e) target.lambda[e] = target.active[e] ? 1.0 : 0.0;
  }
  net.set_lambda_trainable(false);
  net.apply_masks();
  return net;
}

RetrainResult retrain(const ArchitectureDescriptor& descriptor, const Dataset& train,
                      const AuditedDataset& test, int epochs, const PipelineConfig& config,
                      std::uint64_t seed, const MetricsSink& sink) {
  Network net = build_retrain_network(descriptor, seed);
  net.set_weights_trainable(true);
  NagOptimizer opt(NagConfig{config.retrain_lr, 0.9, config.weight_decay});
  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
  const auto bs = static_cast<std::size_t>(config.schedule.batch_size);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t steps_per_epoch = (order.size() + bs - 1) / bs;
  const std::size_t total = steps_per_epoch * static_cast<std::size_t>(std::max(epochs, 0));
  std::size_t step = 0;
  double last_loss = 0.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    StepStats acc;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                   order.begin() + static_cast<long>(std::min(order.size(), start + bs)));
      const StepStats s = forward_backward(net, draw(train, idx, config.augmentation, rng), config.precision);
      opt.step(net.parameters(),
               learning_rate(config.retrain_lr_schedule, config.retrain_lr, step++, total));
      acc.loss += s.loss * static_cast<double>(s.count);
      acc.correct += s.correct;
      acc.count += s.count;
    }
    last_loss = acc.count ? acc.loss / static_cast<double>(acc.count) : 0.0;
    if (sink) {
      EpochMetrics m;
      m.epoch = epoch + 1;
      m.stage = "retrain";
      m.loss = last_loss;
      m.accuracy = acc.count ? static_cast<double>(acc.correct) / static_cast<double>(acc.count) : 0.0;
      m.active_edges = total_active(net);
      m.block_flops = surviving_block_flops(net);
      sink(m);
    }
  }
  const EvalResult eval = evaluate(net, test.read(), bs, config.precision);
  return {eval.accuracy, last_loss, std::move(net)};
}

BlockGraph random_block(int levels, int ops_per_level, std::size_t edge_count, std::uint64_t seed) {
  BlockGraph full = build_block(levels, ops_per_level);
  if (edge_count > full.edge_count()) {
    throw std::invalid_argument("random_block: edge count exceeds the complete block");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> ids(full.edge_count());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  BlockGraph best = full;
  std::fill(best.active.begin(), best.active.end(), false);
  std::size_t best_count = 0;
  constexpr int kAttempts = 20000;
  for (int attempt = 0; attempt < kAttempts && best_count < edge_count; ++attempt) {
    std::shuffle(ids.begin(), ids.end(), rng);
    BlockGraph candidate = full;
    std::fill(candidate.active.begin(), candidate.active.end(), false);
    for (std::size_t i = 0; i < edge_count; ++i) candidate.active[ids[i]] = true;
    candidate = remove_dead_ops(candidate);
    const std::size_t n = candidate.active_edge_count();
    if (n > best_count) {
      best_count = n;
      best = candidate;
    }
  }
  best.lambda = Tensor::zeros({best.edge_count()});
  for (std::size_t e = 0; e < best.edge_count(); ++e) best.lambda[e] = best.active[e] ? 1.0 : 0.0;
  best.lambda.set_requires_grad(true);
  return best;
}

ArchitectureDescriptor random_architecture(const NetworkConfig& network,
                                           const std::vector<std::size_t>& edge_counts,
                                           std::uint64_t seed) {
  network.validate();
  const std::size_t tables = network.lambda_tables();
  if (edge_counts.size() != tables) {
    throw std::invalid_argument("random_architecture: expected " + std::to_string(tables) +
                                " edge counts");
  }
  ArchitectureDescriptor d;
  d.network = network;
  std::vector<BlockDescriptor> per_table;
  for (std::size_t t = 0; t < tables; ++t) {
    per_table.push_back(describe_block(
        random_block(network.levels, network.ops_per_level, edge_counts[t], seed * 1000003ULL + t)));
  }
  for (std::size_t b = 0; b < network.block_count(); ++b) {
    d.blocks.push_back(per_table[network.lambda_mode == LambdaMode::Shared ? 0 : b]);
  }
  d.config_hash = "random";
  d.seed = seed;
  return d;
}

std::string config_fingerprint(const std::string& canonical_text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canonical_text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace sparsearch
