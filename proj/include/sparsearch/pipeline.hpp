#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sparsearch/budget.hpp"
#include "sparsearch/dataset.hpp"
#include "sparsearch/descriptor.hpp"
#include "sparsearch/network.hpp"
#include "sparsearch/sparse_optim.hpp"

namespace sparsearch {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LrSchedule { Constant, LinearDecay };

std::string_view lr_schedule_name(LrSchedule s);
LrSchedule lr_schedule_from_name(std::string_view name);

struct SearchSchedule {
  int pretrain_epochs = 5;
  int search_epochs = 40;   // cap; the search may stop earlier
  int prune_interval = 5;   // epochs between hard prunes
  int weight_steps = 1;     // x weight updates ...
  int lambda_steps = 1;     // ... then y structure updates per cycle
  int batch_size = 32;
  LrSchedule lr_schedule = LrSchedule::Constant;
  double lr = 0.1;
  int early_stop_checks = 3;  // stop after this many unchanged prune checks
  std::uint64_t seed = 0;

  bool operator==(const SearchSchedule&) const = default;
  void validate() const;
};

struct PipelineConfig {
  NetworkConfig network;
  SearchSchedule schedule;
  BudgetPolicy budget;  // carries the base sparsity weight gamma
  double weight_decay = 1e-4;
  bool split_training = true;
  bool pretrain = true;
  double split_ratio = 0.5;
  int retrain_epochs = 20;
  double retrain_lr = 0.1;
  LrSchedule retrain_lr_schedule = LrSchedule::LinearDecay;
  // FLOPs budget for the width multiplier; 0 keeps the searched FLOPs at w = 1.
  std::int64_t target_flops = 0;
  Augmentation augmentation;
  Precision precision = Precision::F64;

  bool operator==(const PipelineConfig&) const = default;
  void validate() const;
};

struct DataSplit {
  std::vector<std::size_t> weight_set;
  std::vector<std::size_t> structure_set;
  double ratio = 0.5;
};

// Stratified by label: every class contributes round(ratio * count) samples
// to the weight set and the rest to the structure set. Deterministic per seed.
DataSplit split_dataset(const std::vector<int>& labels, int num_classes, double ratio,
                        std::uint64_t seed);

struct EpochMetrics {
  int epoch = 0;
  std::string stage;
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t active_edges = 0;
  std::vector<std::int64_t> block_flops;
  double gamma_min = 0.0;
  double gamma_mean = 0.0;
  double gamma_max = 0.0;
};

using MetricsSink = std::function<void(const EpochMetrics&)>;

// Everything that evolves during stages 1 and 2.
struct SearchState {
  Network network;
  NagOptimizer weight_opt;
  std::vector<ApgNagState> lambda_opt;
  std::mt19937_64 rng;
  int pretrain_epochs_done = 0;
  int search_epochs_done = 0;

  SearchState(const PipelineConfig& config, std::uint64_t seed);
};

double learning_rate(LrSchedule schedule, double base, std::size_t step, std::size_t total_steps);

// Mean loss and accuracy in eval mode.
struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};
EvalResult evaluate(const Network& net, const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size, Precision precision = Precision::F64);
EvalResult evaluate(const Network& net, const Dataset& data, std::size_t batch_size,
                    Precision precision = Precision::F64);

// Stage 1: weights only, lambda frozen, BN scales fixed at one.
void pretrain(SearchState& state, const Dataset& train, std::span<const std::size_t> weight_set,
              int epochs, const PipelineConfig& config, const MetricsSink& sink = {});

struct SearchResult {
  int epochs = 0;
  bool early_stopped = false;
  bool degenerate = false;  // every block reduced to identity
  std::size_t active_edges = 0;
};

// Stage 2: alternating weight (NAG, weight set) and structure (APG-NAG,
// structure set) updates with periodic hard pruning. Ends with a final
// hard prune so the state holds the pruned graph.
SearchResult search(SearchState& state, const Dataset& train, const DataSplit& split,
                    const PipelineConfig& config, const MetricsSink& sink = {});

// Commits prune() to every lambda table and deletes the parameters and
// optimizer buffers of removed operations. Returns the active edge count.
std::size_t hard_prune(SearchState& state);

struct FinalizeResult {
  ArchitectureDescriptor descriptor;
  double width_multiplier = 1.0;
  std::int64_t flops = 0;
};

// Largest width multiplier in (0, 8] whose network fits the FLOPs target.
// Widths depend only on the rounded first-stage width, so the reported
// multiplier is that width divided by the base width.
FinalizeResult finalize(const NetworkConfig& network, const std::vector<BlockGraph>& graphs,
                        std::int64_t target_flops, std::string config_hash, std::uint64_t seed);

struct RetrainResult {
  double test_accuracy = 0.0;
  double train_loss = 0.0;
  Network network;
};

// Stage 3: fresh weights, learnable BN scales, lambda replaced by plain sums.
// `test` is read once, for the final evaluation.
Network build_retrain_network(const ArchitectureDescriptor& descriptor, std::uint64_t seed);
RetrainResult retrain(const ArchitectureDescriptor& descriptor, const Dataset& train,
                      const AuditedDataset& test, int epochs, const PipelineConfig& config,
                      std::uint64_t seed, const MetricsSink& sink = {});

// Uniformly sampled block with exactly `edge_count` surviving edges when such
// a sample is found, otherwise the largest valid one found below it.
BlockGraph random_block(int levels, int ops_per_level, std::size_t edge_count, std::uint64_t seed);
// One random block per descriptor block (one per table in shared mode),
// matching the given per-block edge counts.
ArchitectureDescriptor random_architecture(const NetworkConfig& network,
                                           const std::vector<std::size_t>& edge_counts,
                                           std::uint64_t seed);

std::string config_fingerprint(const std::string& canonical_text);

}  // namespace sparsearch
