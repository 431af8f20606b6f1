#pragma once

#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "clta/autodiff/tensor.hpp"

namespace clta::cil {

// Euclidean norm over the gradients of every listed tensor.
double global_grad_norm(std::span<ad::Tensor* const> params);

// Plain SGD: if grad_clip is set and the global gradient norm g exceeds it,
// gradients are scaled by clip / g first; then p <- p - lr * grad.
// Every listed tensor must carry a gradient.
void sgd_step(std::span<ad::Tensor* const> params, double lr, std::optional<double> grad_clip);

struct SgdOptions {
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::optional<double> grad_clip;
};

/// SGD with optional heavy-ball momentum and L2 weight decay. Velocity
/// buffers are keyed by tensor address, so parameters must not move.
class Sgd {
 public:
  explicit Sgd(SgdOptions options = {});

  void step(std::span<ad::Tensor* const> params, double lr);
  const SgdOptions& options() const noexcept { return options_; }

 private:
  SgdOptions options_;
  std::unordered_map<const ad::Tensor*, std::vector<double>> velocity_;
};

// Tensors that received a gradient in the last backward pass.
std::vector<ad::Tensor*> with_grad(std::span<ad::Tensor* const> params);

}  // namespace clta::cil
