#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sparsearch/dataset.hpp"
#include "sparsearch/pipeline.hpp"

namespace sparsearch {

// A value that parsed but is not allowed; `field` is the dotted JSON path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class DatasetKind { Synthetic, Idx, Cifar };

std::string_view dataset_kind_name(DatasetKind kind);
DatasetKind dataset_kind_from_name(std::string_view name);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Synthetic;
  // synthetic
  int num_classes = 3;
  int per_class = 60;
  int test_per_class = 30;
  int size = 16;
  std::uint64_t seed = 1;
  // idx
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  // cifar
  std::vector<std::string> train_batches;
  std::string test_batch;

  bool operator==(const DatasetSpec&) const = default;
};

struct ExperimentConfig {
  PipelineConfig pipeline;
  DatasetSpec dataset;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool deterministic = false;
  int threads = 1;

  bool operator==(const ExperimentConfig&) const = default;
  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Throws ParseError on malformed JSON and ConfigError on unknown keys, wrong
// types or invalid values.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);

struct LoadedData {
  Dataset train;
  AuditedDataset test;
  Normalization normalization;
};

// Reads both splits and normalizes them with statistics of the training
// split, or with `normalization` when one is given.
LoadedData load_data(const DatasetSpec& spec, const Normalization* normalization = nullptr);

}  // namespace sparsearch
