#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparsearch/tensor.hpp"

namespace sparsearch {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;
  bool operator==(const Normalization&) const = default;
};

// Images stored as [count, channels, height, width], row-major.
struct Dataset {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  int num_classes = 0;
  std::vector<double> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }
  // Throws DataError on inconsistent extents or out-of-range labels.
  void validate() const;
};

// Per-channel mean / std over the listed samples (all samples when empty).
Normalization compute_normalization(const Dataset& data, std::span<const std::size_t> indices = {});
void apply_normalization(Dataset& data, const Normalization& norm);

// Big-endian IDX files: images magic 0x00000803, labels magic 0x00000801.
// Pixels are returned as raw byte values; normalization is a separate step.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes (R, G, B
// planes of 32x32).
Dataset load_cifar_binary(const std::filesystem::path& path);
Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes);

// Grayscale oriented stripes: class k has orientation k*pi/K, random phase
// and frequency jitter per sample, plus N(0, 0.1) pixel noise.
Dataset synth_dataset(int num_classes, int per_class, int size, std::uint64_t seed);

// Read-counting wrapper for held-out data.
class AuditedDataset {
 public:
  explicit AuditedDataset(Dataset data) : data_(std::move(data)) {}
  const Dataset& read() const {
    ++reads_;
    return data_;
  }
  Dataset& mutable_data() { return data_; }
  std::size_t reads() const { return reads_; }

 private:
  Dataset data_;
  mutable std::size_t reads_ = 0;
};

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

struct Augmentation {
  bool enabled = false;
  int pad = 4;
  bool flip = true;
  bool operator==(const Augmentation&) const = default;
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);
// Random padded crop and horizontal flip per sample.
Batch make_augmented_batch(const Dataset& data, std::span<const std::size_t> indices,
                           const Augmentation& aug, std::mt19937_64& rng);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace sparsearch
