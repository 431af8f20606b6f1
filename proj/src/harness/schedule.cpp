#include "clta/harness/schedule.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "clta/errors.hpp"

namespace clta::cil {

TrainConfig TrainConfig::full_length() {
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.lr_decay_epochs = {60, 120, 160};
  return cfg;
}

std::vector<std::size_t> TrainConfig::decay_epochs() const {
  if (!lr_decay_epochs.empty()) return lr_decay_epochs;
  std::vector<std::size_t> out;
  for (std::size_t pct : {30u, 60u, 80u}) {
    const std::size_t e = epochs * pct / 100;
    if (e > 0 && e < epochs && (out.empty() || e > out.back())) out.push_back(e);
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ValidationError("train.epochs", "must be >= 1");
  if (batch_size < 2) throw ValidationError("train.batch_size", "must be >= 2");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ValidationError("train.base_lr", "must be > 0");
  if (!(lr_decay_factor > 0.0) || !std::isfinite(lr_decay_factor)) {
    throw ValidationError("train.lr_decay_factor", "must be > 0");
  }
  for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
    if (lr_decay_epochs[i] >= epochs) throw ValidationError("train.lr_decay_epochs", "must be < epochs");
    if (i > 0 && lr_decay_epochs[i] <= lr_decay_epochs[i - 1]) {
      throw ValidationError("train.lr_decay_epochs", "must be strictly increasing");
    }
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("train.momentum", "must lie in [0, 1)");
  if (weight_decay < 0.0) throw ValidationError("train.weight_decay", "must be >= 0");
  if (grad_clip && !(*grad_clip > 0.0)) throw ValidationError("train.grad_clip", "must be > 0");
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.epochs) {
    throw ParameterError("epoch " + std::to_string(epoch) + " outside a " + std::to_string(cfg.epochs) +
                         "-epoch schedule");
  }
  double lr = cfg.base_lr;
  for (auto d : cfg.decay_epochs()) {
    if (epoch >= d) lr /= cfg.lr_decay_factor;
  }
  return lr;
}

void WarmupConfig::validate() const {
  if (!(max_lr > 0.0) || !std::isfinite(max_lr)) throw ValidationError("warmup.max_lr", "must be > 0");
  if (max_epochs == 0) throw ValidationError("warmup.max_epochs", "must be >= 1");
  if (ramp_epochs >= max_epochs) throw ValidationError("warmup.ramp_epochs", "must be < warmup.max_epochs");
  if (early_stop_patience == 0) throw ValidationError("warmup.patience", "must be >= 1");
}

double one_cycle_lr(std::size_t epoch, const WarmupConfig& cfg) {
  if (epoch >= cfg.max_epochs) {
    throw ParameterError("epoch " + std::to_string(epoch) + " outside a " + std::to_string(cfg.max_epochs) +
                         "-epoch warmup");
  }
  const double initial = cfg.max_lr / 25.0;
  const double final_lr = initial / 1e4;
  auto cosine = [](double from, double to, double frac) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  };
  if (epoch <= cfg.ramp_epochs) {
    if (cfg.ramp_epochs == 0) return cfg.max_lr;
    if (epoch == cfg.ramp_epochs) return cfg.max_lr;
    return cosine(initial, cfg.max_lr, static_cast<double>(epoch) / static_cast<double>(cfg.ramp_epochs));
  }
  const std::size_t tail = cfg.max_epochs - 1 - cfg.ramp_epochs;
  if (tail == 0) return cfg.max_lr;
  return cosine(cfg.max_lr, final_lr, static_cast<double>(epoch - cfg.ramp_epochs) / static_cast<double>(tail));
}

}  // namespace clta::cil
