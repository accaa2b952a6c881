#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparsearch {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
};

// Shared handle to a dense row-major array. Copies alias the same storage;
// use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_values(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double& operator[](std::size_t i) { return impl_->data[i]; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->is_leaf; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const { return impl_->grad; }
  // Allocates a zero-filled gradient slot on first use.
  std::span<double> mutable_grad() const;
  void zero_grad();

  Tensor clone() const;
  bool same(const Tensor& other) const { return impl_ == other.impl_; }
  TensorImpl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

enum class Precision { F64, F32 };

// Define-by-run record of primitive applications. Entries are appended in
// execution order, so the list is topologically sorted by construction.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  explicit Tape(Precision precision = Precision::F64) : precision_(precision) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // True when an op over these inputs must be recorded.
  bool needs_grad(std::initializer_list<const Tensor*> inputs) const;
  void record(Tensor& output, BackwardFn backward);

  // Applies the precision policy to a freshly computed output.
  void finish(Tensor& output) const;

  std::size_t size() const { return entries_.size(); }
  Precision precision() const { return precision_; }
  void set_enabled(bool on) { enabled_ = on; }
  bool enabled() const { return enabled_; }
  void clear() { entries_.clear(); }

  friend void backward(Tape& tape, const Tensor& loss);

 private:
  struct Entry {
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  Precision precision_;
  bool enabled_ = true;
};

// Seeds dLoss/dLoss = 1 and runs every recorded backward rule up to the entry
// producing `loss`, in reverse. Leaf gradients accumulate across calls;
// intermediate gradients are reset at the start of each call.
void backward(Tape& tape, const Tensor& loss);

// Accumulates `values` into t's gradient slot if t participates in autodiff.
void accumulate_grad(const Tensor& t, std::span<const double> values);

void set_num_threads(int n);
int num_threads();
// Splits [0, count) across worker threads; fn must write disjoint outputs.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

// ---- primitives with backward rules ----------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add_n(Tape& tape, const std::vector<Tensor>& terms);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
// y = coeffs[index] * x, with gradient flowing into both x and coeffs.
Tensor scale_by(Tape& tape, const Tensor& x, const Tensor& coeffs, std::size_t index);
Tensor sum(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
// Concatenates rank-4 tensors along axis 1.
Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts);

// Max over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-8).
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;
double finite_diff_check(const ScalarFn& f, const Tensor& x, double eps);

}  // namespace sparsearch
