#include "sparsearch/sparse_optim.hpp"

#include <cmath>

namespace sparsearch {

namespace {

void require_finite(std::span<const double> grad, const char* who) {
  for (double g : grad) {
    if (!std::isfinite(g)) throw OptimError(std::string(who) + ": non-finite gradient");
  }
}

}  // namespace

double soft_threshold(double z, double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("soft_threshold: alpha must be >= 0");
  const double mag = std::abs(z) - alpha;
  if (mag <= 0.0) return 0.0;
  return z > 0.0 ? mag : -mag;
}

std::vector<double> soft_threshold(std::span<const double> z, double alpha) {
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = soft_threshold(z[i], alpha);
  return out;
}

double lasso_reference(double a, double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("lasso_reference: gamma must be >= 0");
  if (a > gamma) return a - gamma;
  if (a < -gamma) return a + gamma;
  return 0.0;
}

void apg_nag_step(std::span<double> lambda, std::span<const double> grad, double lr,
                  std::span<const double> gamma, ApgNagState& state,
                  const std::vector<bool>* active) {
  if (grad.size() != lambda.size() || gamma.size() != lambda.size() ||
      state.v.size() != lambda.size()) {
    throw std::invalid_argument("apg_nag_step: size mismatch");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("apg_nag_step: step size must be positive");
  require_finite(grad, "apg_nag_step");
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    if (active && !(*active)[i]) {
      lambda[i] = 0.0;
      state.v[i] = 0.0;
      continue;
    }
    if (gamma[i] < 0.0) throw std::invalid_argument("apg_nag_step: negative sparsity weight");
    const double z = lambda[i] - lr * grad[i];
    const double shrunk = soft_threshold(z, lr * gamma[i]);
    state.v[i] = shrunk - lambda[i] + state.momentum * state.v[i];
    lambda[i] = shrunk + state.momentum * state.v[i];
  }
}

void nag_step(std::span<double> w, std::span<const double> grad, double lr, double momentum,
              double weight_decay, std::vector<double>& velocity) {
  if (grad.size() != w.size()) throw std::invalid_argument("nag_step: size mismatch");
  require_finite(grad, "nag_step");
  if (velocity.size() != w.size()) velocity.assign(w.size(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double g = grad[i] + 2.0 * weight_decay * w[i];
    velocity[i] = momentum * velocity[i] + g;
    w[i] -= lr * (g + momentum * velocity[i]);
  }
}

void NagOptimizer::step(const std::vector<ParamRef>& params, double lr) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    if (!t.requires_grad() || !t.has_grad()) continue;
    const double decay = decays(p.role) ? config_.weight_decay : 0.0;
    nag_step(t.data(), t.grad(), lr, config_.momentum, decay, buffers_[p.name]);
  }
}

void NagOptimizer::retain(const std::vector<ParamRef>& params) {
  std::map<std::string, std::vector<double>> kept;
  for (const auto& p : params) {
    auto it = buffers_.find(p.name);
    if (it != buffers_.end()) kept.emplace(p.name, std::move(it->second));
  }
  buffers_ = std::move(kept);
}

}  // namespace sparsearch
