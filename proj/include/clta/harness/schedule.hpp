#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace clta::cil {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double base_lr = 0.1;
  // Empty means decay at 30%, 60% and 80% of `epochs`.
  std::vector<std::size_t> lr_decay_epochs;
  double lr_decay_factor = 10.0;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::optional<double> grad_clip;

  // 200 epochs, decay 10x after epochs 60, 120 and 160.
  static TrainConfig full_length();

  std::vector<std::size_t> decay_epochs() const;
  void validate() const;
};

// Step schedule: base_lr / factor^(number of decay points <= epoch).
double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

struct WarmupConfig {
  bool enabled = false;
  double max_lr = 0.1;
  std::size_t ramp_epochs = 40;
  std::size_t max_epochs = 200;
  std::size_t early_stop_patience = 20;

  void validate() const;
};

// One-cycle schedule with cosine annealing on both legs: starts at
// max_lr / 25, peaks at exactly max_lr on epoch ramp_epochs, and falls to
// max_lr / 25 / 1e4 on the last epoch.
double one_cycle_lr(std::size_t epoch, const WarmupConfig& cfg);

}  // namespace clta::cil
