#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "sparsearch/network.hpp"

namespace sparsearch {

class OptimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// sign(z) * max(|z| - alpha, 0). Exactly zero inside the threshold.
double soft_threshold(double z, double alpha);
std::vector<double> soft_threshold(std::span<const double> z, double alpha);

// argmin_x 1/2 (x - a)^2 + gamma |x|, written out case by case.
double lasso_reference(double a, double gamma);

// Structure optimizer for one lambda vector:
//   z      = lambda - lr * grad
//   v_new  = S(z) - lambda + momentum * v
//   lambda = S(z) + momentum * v_new
// with S the soft threshold at lr * gamma[i] per coordinate.
struct ApgNagState {
  std::vector<double> v;
  double momentum = 0.9;

  explicit ApgNagState(std::size_t n = 0, double momentum = 0.9) : v(n, 0.0), momentum(momentum) {}
};

// `gamma` holds one sparsity weight per coordinate; `active` (optional) marks
// coordinates that take part, the rest are pinned to zero with zero momentum.
void apg_nag_step(std::span<double> lambda, std::span<const double> grad, double lr,
                  std::span<const double> gamma, ApgNagState& state,
                  const std::vector<bool>* active = nullptr);

// Nesterov momentum in the lookahead form used by most frameworks:
//   g = grad + 2 * decay * w      (decay only for conv/linear weights)
//   v = momentum * v + g
//   w = w - lr * (g + momentum * v)
struct NagConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

void nag_step(std::span<double> w, std::span<const double> grad, double lr, double momentum,
              double weight_decay, std::vector<double>& velocity);

// Momentum buffers keyed by parameter name so they survive checkpoints and
// parameter deletion.
class NagOptimizer {
 public:
  explicit NagOptimizer(NagConfig config = {}) : config_(config) {}

  // Steps every parameter that requires grad; frozen BN scales and tensors
  // without a gradient are skipped.
  void step(const std::vector<ParamRef>& params, double lr);
  // Drops buffers of parameters that no longer exist.
  void retain(const std::vector<ParamRef>& params);

  const NagConfig& config() const { return config_; }
  std::map<std::string, std::vector<double>>& buffers() { return buffers_; }
  const std::map<std::string, std::vector<double>>& buffers() const { return buffers_; }

 private:
  NagConfig config_;
  std::map<std::string, std::vector<double>> buffers_;
};

}  // namespace sparsearch
