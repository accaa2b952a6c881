#include "sparsearch/dataset.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

namespace sparsearch {

void Dataset::validate() const {
  if (pixels.size() != labels.size() * image_size()) {
    throw DataError("dataset holds " + std::to_string(pixels.size()) + " pixels for " +
                    std::to_string(labels.size()) + " images of " + std::to_string(image_size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                      " outside [0," + std::to_string(num_classes) + ")");
    }
  }
}

Normalization compute_normalization(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    indices = all;
  }
  if (indices.empty()) throw DataError("cannot compute normalization of an empty dataset");
  const std::size_t plane = data.height * data.width;
  Normalization norm{std::vector<double>(data.channels, 0.0), std::vector<double>(data.channels, 0.0)};
  const double count = static_cast<double>(indices.size() * plane);
  for (std::size_t c = 0; c < data.channels; ++c) {
    double s = 0.0;
    for (std::size_t i : indices) {
      const double* p = data.pixels.data() + (i * data.channels + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) s += p[k];
    }
    const double mu = s / count;
    double v = 0.0;
    for (std::size_t i : indices) {
      const double* p = data.pixels.data() + (i * data.channels + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) v += (p[k] - mu) * (p[k] - mu);
    }
    norm.mean[c] = mu;
    norm.std[c] = std::sqrt(v / count);
    if (norm.std[c] == 0.0) norm.std[c] = 1.0;
  }
  return norm;
}

void apply_normalization(Dataset& data, const Normalization& norm) {
  if (norm.mean.size() != data.channels || norm.std.size() != data.channels) {
    throw DataError("normalization has the wrong channel count");
  }
  const std::size_t plane = data.height * data.width;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t c = 0; c < data.channels; ++c) {
      double* p = data.pixels.data() + (i * data.channels + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - norm.mean[c]) / norm.std[c];
    }
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, const char* what) : bytes_(bytes), what_(what) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_++];
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      std::ostringstream os;
      os << what_ << ": truncated at byte " << pos_ << " (needed " << n << ", have "
         << remaining() << ")";
      throw DataError(os.str());
    }
  }
  std::span<const std::uint8_t> bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::string hex(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  ByteReader img(images, "IDX images");
  ByteReader lab(labels, "IDX labels");
  const std::uint32_t img_magic = img.u32();
  if (img_magic != kIdxImagesMagic) {
    throw DataError("IDX images: bad magic " + hex(img_magic) + ", expected " + hex(kIdxImagesMagic));
  }
  const std::uint32_t lab_magic = lab.u32();
  if (lab_magic != kIdxLabelsMagic) {
    throw DataError("IDX labels: bad magic " + hex(lab_magic) + ", expected " + hex(kIdxLabelsMagic));
  }
  const std::uint32_t count = img.u32();
  const std::uint32_t rows = img.u32();
  const std::uint32_t cols = img.u32();
  const std::uint32_t label_count = lab.u32();
  if (count != label_count) {
    throw DataError("IDX: " + std::to_string(count) + " images but " + std::to_string(label_count) +
                    " labels");
  }
  Dataset d;
  d.channels = 1;
  d.height = rows;
  d.width = cols;
  const auto px = img.take(static_cast<std::size_t>(count) * rows * cols);
  const auto lb = lab.take(count);
  d.pixels.assign(px.begin(), px.end());
  int max_label = -1;
  for (auto v : lb) {
    d.labels.push_back(v);
    max_label = std::max<int>(max_label, v);
  }
  d.num_classes = std::max(10, max_label + 1);
  d.validate();
  return d;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  return parse_idx(img, lab);
}

Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  constexpr std::size_t kRecord = kPixels + 1;
  if (bytes.size() % kRecord != 0) {
    throw DataError("CIFAR-10 binary: length " + std::to_string(bytes.size()) +
                    " is not a multiple of " + std::to_string(kRecord));
  }
  Dataset d;
  d.channels = 3;
  d.height = 32;
  d.width = 32;
  d.num_classes = 10;
  const std::size_t count = bytes.size() / kRecord;
  d.pixels.reserve(count * kPixels);
  for (std::size_t r = 0; r < count; ++r) {
    const auto rec = bytes.subspan(r * kRecord, kRecord);
    d.labels.push_back(rec[0]);
    d.pixels.insert(d.pixels.end(), rec.begin() + 1, rec.end());
  }
  d.validate();
  return d;
}

Dataset load_cifar_binary(const std::filesystem::path& path) {
  return parse_cifar_binary(read_file(path));
}

Dataset synth_dataset(int num_classes, int per_class, int size, std::uint64_t seed) {
  if (size < 8) throw DataError("synthetic images must be at least 8x8");
  if (num_classes < 1 || per_class < 0) throw DataError("bad synthetic dataset dimensions");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> freq_jitter(0.8, 1.2);
  std::normal_distribution<double> noise(0.0, 0.1);
  Dataset d;
  d.channels = 1;
  d.height = d.width = static_cast<std::size_t>(size);
  d.num_classes = num_classes;
  const double base_freq = 2.0 * std::numbers::pi / 4.0;  // period of 4 pixels
  for (int i = 0; i < per_class; ++i) {
    for (int k = 0; k < num_classes; ++k) {
      const double angle = k * std::numbers::pi / num_classes;
      const double f = base_freq * freq_jitter(rng);
      const double phi = phase(rng);
      const double cu = std::cos(angle), su = std::sin(angle);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          d.pixels.push_back(std::sin(f * (x * cu + y * su) + phi) + noise(rng));
        }
      }
      d.labels.push_back(k);
    }
  }
  return d;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  const std::size_t img = data.image_size();
  std::vector<double> px;
  px.reserve(indices.size() * img);
  Batch b;
  for (std::size_t i : indices) {
    if (i >= data.size()) throw DataError("batch index out of range");
    px.insert(px.end(), data.pixels.begin() + i * img, data.pixels.begin() + (i + 1) * img);
    b.labels.push_back(data.labels[i]);
  }
  b.images = Tensor::from_values({indices.size(), data.channels, data.height, data.width},
                                 std::move(px));
  return b;
}

Batch make_augmented_batch(const Dataset& data, std::span<const std::size_t> indices,
                           const Augmentation& aug, std::mt19937_64& rng) {
  Batch b = make_batch(data, indices);
  if (!aug.enabled) return b;
  const std::size_t h = data.height, w = data.width, plane = h * w;
  std::uniform_int_distribution<int> shift(-aug.pad, aug.pad);
  std::bernoulli_distribution coin(0.5);
  auto px = b.images.data();
  std::vector<double> tmp(plane);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const int dy = shift(rng), dx = shift(rng);
    const bool flip = aug.flip && coin(rng);
    for (std::size_t c = 0; c < data.channels; ++c) {
      double* p = px.data() + (n * data.channels + c) * plane;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const long sy = static_cast<long>(y) + dy;
          const long sx0 = static_cast<long>(flip ? w - 1 - x : x) + dx;
          const bool inside = sy >= 0 && sy < static_cast<long>(h) && sx0 >= 0 &&
                              sx0 < static_cast<long>(w);
          tmp[y * w + x] = inside ? p[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx0)] : 0.0;
        }
      }
      std::copy(tmp.begin(), tmp.end(), p);
    }
  }
  return b;
}

}  // namespace sparsearch
