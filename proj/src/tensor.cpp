#include "sparsearch/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

namespace sparsearch {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw TensorError("tensor extents must be >= 1, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor Tensor::full(Shape shape, double value) {
  check_extents(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }
Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
  check_extents(shape);
  if (values.size() != shape_numel(shape)) {
    throw TensorError("from_values: " + std::to_string(values.size()) + " values for shape " +
                      shape_to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

double Tensor::item() const {
  if (numel() != 1) throw TensorError("item() on tensor of shape " + shape_to_string(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::span<double> Tensor::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

// ---- tape -------------------------------------------------------------------

bool Tape::needs_grad(std::initializer_list<const Tensor*> inputs) const {
  if (!enabled_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

void Tape::record(Tensor& output, BackwardFn fn) {
  output.impl()->requires_grad = true;
  output.impl()->is_leaf = false;
  entries_.push_back({output, std::move(fn)});
}

void Tape::finish(Tensor& output) const {
  auto d = output.data();
  if (precision_ == Precision::F32) {
    for (auto& v : d) v = static_cast<double>(static_cast<float>(v));
  }
#ifndef NDEBUG
  for (double v : d) assert(std::isfinite(v) && "non-finite value produced by forward");
#endif
}

void backward(Tape& tape, const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw TensorError("backward: loss must be scalar-shaped");
  }
  auto& entries = tape.entries_;
  std::size_t end = entries.size();
  for (std::size_t k = entries.size(); k-- > 0;) {
    if (entries[k].output.same(loss)) {
      end = k;
      break;
    }
  }
  if (end == entries.size()) throw TensorError("backward: loss was not produced on this tape");

  for (std::size_t k = 0; k <= end; ++k) entries[k].output.zero_grad();
  Tensor seed = loss;
  seed.mutable_grad()[0] = 1.0;
  for (std::size_t k = end + 1; k-- > 0;) {
    if (entries[k].output.has_grad()) entries[k].backward();
  }
}

void accumulate_grad(const Tensor& t, std::span<const double> values) {
  if (!t.defined() || !t.requires_grad()) return;
  auto g = t.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += values[i];
}

// ---- threading ----------------------------------------------------------------

namespace {
int g_threads = 1;
}

void set_num_threads(int n) { g_threads = std::max(1, n); }
int num_threads() { return g_threads; }

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(g_threads), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

// ---- primitives -----------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw TensorError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                      shape_to_string(b.shape()));
  }
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) { return add_n(tape, {a, b}); }

Tensor add_n(Tape& tape, const std::vector<Tensor>& terms) {
  if (terms.empty()) throw TensorError("add_n: no terms");
  for (const auto& t : terms) require_same_shape(terms.front(), t, "add_n");
  Tensor out = terms.front().clone();
  out.set_requires_grad(false);
  auto od = out.data();
  for (std::size_t k = 1; k < terms.size(); ++k) {
    auto td = terms[k].data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += td[i];
  }
  tape.finish(out);
  bool any = false;
  for (const auto& t : terms) any = any || tape.needs_grad({&t});
  if (any) {
    tape.record(out, [terms, out]() mutable {
      for (auto& t : terms) accumulate_grad(t, out.grad());
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data(), bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  tape.finish(out);
  if (tape.needs_grad({&a, &b})) {
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad();
      std::vector<double> ga(g.size()), gb(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] = g[i] * b[i];
        gb[i] = g[i] * a[i];
      }
      accumulate_grad(a, ga);
      accumulate_grad(b, gb);
    });
  }
  return out;
}

Tensor scale_by(Tape& tape, const Tensor& x, const Tensor& coeffs, std::size_t index) {
  if (index >= coeffs.numel()) throw TensorError("scale_by: coefficient index out of range");
  const double c = coeffs[index];
  Tensor out = Tensor::zeros(x.shape());
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = c * xd[i];
  tape.finish(out);
  if (tape.needs_grad({&x, &coeffs})) {
    tape.record(out, [x, coeffs, out, index]() mutable {
      auto g = out.grad();
      const double c = coeffs[index];
      if (x.requires_grad()) {
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = c * g[i];
        accumulate_grad(x, gx);
      }
      if (coeffs.requires_grad()) {
        double dc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dc += g[i] * x[i];
        coeffs.mutable_grad()[index] += dc;
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  tape.finish(out);
  if (tape.needs_grad({&x})) {
    tape.record(out, [x, out]() mutable {
      std::vector<double> gx(x.numel(), out.grad()[0]);
      accumulate_grad(x, gx);
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  tape.finish(out);
  if (tape.needs_grad({&x})) {
    tape.record(out, [x, out]() mutable {
      auto g = out.grad();
      std::vector<double> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = x[i] > 0.0 ? g[i] : 0.0;
      accumulate_grad(x, gx);
    });
  }
  return out;
}

Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw TensorError("concat_channels: no inputs");
  const auto& s0 = parts.front().shape();
  if (s0.size() != 4) throw TensorError("concat_channels: rank-4 inputs required");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw TensorError("concat_channels: incompatible shape " + shape_to_string(s));
    }
    channels += s[1];
  }
  const std::size_t n = s0[0], plane = s0[2] * s0[3];
  Tensor out = Tensor::zeros({n, channels, s0[2], s0[3]});
  auto od = out.data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.dim(1);
    auto pd = p.data();
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(pd.begin() + b * c * plane, c * plane,
                  od.begin() + (b * channels + offset) * plane);
    }
    offset += c;
  }
  tape.finish(out);
  bool any = false;
  for (const auto& p : parts) any = any || tape.needs_grad({&p});
  if (any) {
    tape.record(out, [parts, out, n, channels, plane]() mutable {
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        const std::size_t c = p.dim(1);
        if (p.requires_grad()) {
          std::vector<double> gp(p.numel());
          for (std::size_t b = 0; b < n; ++b) {
            std::copy_n(g.begin() + (b * channels + offset) * plane, c * plane,
                        gp.begin() + b * c * plane);
          }
          accumulate_grad(p, gp);
        }
        offset += c;
      }
    });
  }
  return out;
}

// ---- gradient oracle --------------------------------------------------------------

double finite_diff_check(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw TensorError("finite_diff_check: eps must be positive");
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  probe.zero_grad();
  {
    Tape tape;
    Tensor y = f(tape, probe);
    if (y.numel() != 1 || !std::isfinite(y.item())) {
      throw TensorError("finite_diff_check: f(x) is not a finite scalar");
    }
    backward(tape, y);
  }
  std::vector<double> analytic(probe.numel(), 0.0);
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  auto eval = [&](std::size_t i, double delta) {
    Tensor shifted = x.clone();
    shifted.set_requires_grad(false);
    shifted[i] += delta;
    Tape tape;
    tape.set_enabled(false);
    return f(tape, shifted).item();
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < probe.numel(); ++i) {
    const double central = (eval(i, eps) - eval(i, -eps)) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - central) / denom);
  }
  return worst;
}

}  // namespace sparsearch
