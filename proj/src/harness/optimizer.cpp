#include "clta/harness/optimizer.hpp"

#include <cmath>

#include "clta/errors.hpp"

namespace clta::cil {

namespace {

void require_grads(std::span<ad::Tensor* const> params) {
  for (const auto* p : params) {
    if (p == nullptr || !p->has_grad()) throw ContractError("sgd_step: parameter without gradient");
  }
}

double clip_scale(std::span<ad::Tensor* const> params, std::optional<double> grad_clip) {
  if (!grad_clip) return 1.0;
  if (!(*grad_clip > 0.0)) throw ParameterError("gradient clip must be positive");
  const double norm = global_grad_norm(params);
  return norm > *grad_clip ? *grad_clip / norm : 1.0;
}

}  // namespace

double global_grad_norm(std::span<ad::Tensor* const> params) {
  double sq = 0.0;
  for (const auto* p : params) {
    if (!p->has_grad()) continue;
    for (double g : p->grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

void sgd_step(std::span<ad::Tensor* const> params, double lr, std::optional<double> grad_clip) {
  Sgd(SgdOptions{0.0, 0.0, grad_clip}).step(params, lr);
}

Sgd::Sgd(SgdOptions options) : options_(options) {
  if (options_.momentum < 0.0 || options_.momentum >= 1.0) throw ParameterError("momentum must lie in [0, 1)");
  if (options_.weight_decay < 0.0) throw ParameterError("weight decay must be non-negative");
}

void Sgd::step(std::span<ad::Tensor* const> params, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParameterError("learning rate must be finite and non-negative");
  require_grads(params);
  const double scale = clip_scale(params, options_.grad_clip);
  for (auto* p : params) {
    auto values = p->data();
    auto grad = p->grad();
    std::vector<double>* vel = nullptr;
    if (options_.momentum > 0.0) {
      vel = &velocity_[p];
      if (vel->size() != values.size()) vel->assign(values.size(), 0.0);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      double g = grad[i] * scale;
      if (options_.weight_decay > 0.0) g += options_.weight_decay * values[i];
      if (vel) {
        (*vel)[i] = options_.momentum * (*vel)[i] + g;
        g = (*vel)[i];
      }
      values[i] -= lr * g;
    }
    p->check_finite("sgd_step");
  }
}

std::vector<ad::Tensor*> with_grad(std::span<ad::Tensor* const> params) {
  std::vector<ad::Tensor*> out;
  for (auto* p : params) {
    if (p->has_grad()) out.push_back(p);
  }
  return out;
}

}  // namespace clta::cil
