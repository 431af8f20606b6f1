#pragma once

#include <cstddef>
#include <string_view>

#include "clta/autodiff/tape.hpp"

namespace clta::nn {

/// How a normalization layer behaves on one forward call.
enum class NormMode {
  Train,       // batch statistics, running statistics updated
  Eval,        // running statistics, no side effects
  AdaptStats,  // teacher adaptation: running statistics track the batch,
               // affine parameters never receive gradients
  Frozen,      // like Eval; used where statistics must never move again
};

std::string_view to_string(NormMode mode);

/// Which statistics an AdaptStats forward normalizes with.
enum class AdaptForward {
  BatchStats,    // normalize by the current batch, then fold it into the running stats
  RunningStats,  // fold the batch into the running stats, then normalize by them
};

struct BatchNormLayer {
  std::size_t num_features = 0;
  ad::Tensor gamma;
  ad::Tensor beta;
  ad::Tensor running_mean;
  ad::Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  AdaptForward adapt_forward = AdaptForward::BatchStats;

  static BatchNormLayer make(std::size_t num_features, double momentum = 0.1, double eps = 1e-5);
};

// x has shape (batch, C, ...). Batch-statistics modes normalize with the
// biased batch variance and store the unbiased one into running_var:
//   running <- (1 - momentum) * running + momentum * batch
ad::Var batchnorm_forward(ad::Var x, BatchNormLayer& layer, NormMode mode);

enum class AltNormKind { LayerNorm, GroupNorm };

/// Per-sample normalization without running state. LayerNorm normalizes
/// over every non-batch axis; GroupNorm over each group of channels (and
/// their spatial extent). Both carry a per-channel affine transform.
struct AltNormLayer {
  AltNormKind kind = AltNormKind::LayerNorm;
  std::size_t num_channels = 0;
  std::size_t groups = 1;
  ad::Tensor gamma;
  ad::Tensor beta;
  double eps = 1e-5;

  static AltNormLayer layer_norm(std::size_t num_channels, double eps = 1e-5);
  static AltNormLayer group_norm(std::size_t num_channels, std::size_t groups, double eps = 1e-5);
};

ad::Var altnorm_forward(ad::Var x, AltNormLayer& layer);

}  // namespace clta::nn
