#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sparsearch/config.hpp"
#include "sparsearch/descriptor.hpp"
#include "sparsearch/pipeline.hpp"

namespace sparsearch {

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_text_file(const std::filesystem::path& path);

// Stage-1/2 state: weights, BN statistics, lambda values and masks, both
// optimizers' buffers, the RNG and the normalization used for the data.
struct SearchCheckpoint {
  ExperimentConfig config;
  std::string stage;
  Normalization normalization;
  SearchState state;
};

std::string serialize_search_checkpoint(const ExperimentConfig& config, std::string_view stage,
                                        const Normalization& normalization,
                                        const SearchState& state);
SearchCheckpoint parse_search_checkpoint(std::string_view text);

// Stage-3 result: the descriptor plus the retrained weights.
struct ModelCheckpoint {
  ExperimentConfig config;
  ArchitectureDescriptor descriptor;
  Normalization normalization;
  std::uint64_t seed = 0;
  Network network;
};

std::string serialize_model_checkpoint(const ExperimentConfig& config,
                                       const ArchitectureDescriptor& descriptor,
                                       const Normalization& normalization, std::uint64_t seed,
                                       const Network& network);
ModelCheckpoint parse_model_checkpoint(std::string_view text);

// Per-epoch metrics as CSV with a header row. Rows are kept in memory and the
// whole file is rewritten atomically after every append.
class MetricsCsv {
 public:
  MetricsCsv(std::filesystem::path path, std::size_t blocks);
  // Keeps rows already present in the file (from earlier stages).
  void load_existing();
  void append(const EpochMetrics& m);
  const std::vector<std::string>& lines() const { return lines_; }

  std::string header() const;
  static std::string format_row(const EpochMetrics& m);

 private:
  std::filesystem::path path_;
  std::size_t blocks_;
  std::vector<std::string> lines_;
};

// RFC 4180 field quoting.
std::string csv_field(std::string_view value);
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace sparsearch
