#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "clta/autodiff/tape.hpp"
#include "clta/nn/normalization.hpp"

namespace clta::nn {

// y = x W + b with W stored (in, out).
struct DenseLayer {
  ad::Tensor weight;
  ad::Tensor bias;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct ConvLayer {
  ad::Tensor weight;  // (out, in, k, k)
  ad::Tensor bias;    // (out)
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct ReluLayer {};
struct GlobalPoolLayer {};
struct FlattenLayer {};

using Layer = std::variant<DenseLayer, ConvLayer, BatchNormLayer, AltNormLayer, ReluLayer, GlobalPoolLayer, FlattenLayer>;

enum class NormKind { Batch, None, Layer, Group };

std::string_view to_string(NormKind kind);

/// Shared backbone plus one linear head per task. Concatenating the head
/// outputs in task order enumerates every class seen so far.
struct IncrementalModel {
  ad::Shape input_shape;  // per-sample shape, e.g. {32} or {1, 28, 28}
  std::vector<Layer> backbone;
  std::vector<DenseLayer> heads;
  std::size_t feature_dim = 0;

  std::size_t num_heads() const noexcept { return heads.size(); }
  std::size_t total_classes() const;
  std::vector<std::size_t> head_sizes() const;
  std::size_t batchnorm_count() const;
};

enum class HeadInit { KaimingUniform, Zeros };

struct MlpSpec {
  std::size_t input_dim = 32;
  std::size_t hidden = 64;
  NormKind norm = NormKind::Batch;
  std::size_t groups = 4;
  double bn_momentum = 0.1;
  double eps = 1e-5;
};

struct CnnSpec {
  ad::Shape input_shape{1, 28, 28};
  std::vector<std::size_t> channels{8, 16, 32};
  NormKind norm = NormKind::Batch;
  std::size_t groups = 4;
  double bn_momentum = 0.1;
  double eps = 1e-5;
};

// dense(hidden) -> norm -> relu -> dense(hidden) -> norm -> relu
IncrementalModel build_micro_mlp(const MlpSpec& spec, std::uint64_t seed);
// Three 3x3 conv blocks (conv -> norm -> relu); the first keeps resolution,
// the others downsample with stride 2; global average pool at the end.
IncrementalModel build_micro_cnn(const CnnSpec& spec, std::uint64_t seed);

// Appends a head with `num_classes` outputs; existing layers are untouched.
void add_task_head(IncrementalModel& model, std::size_t num_classes, HeadInit init, std::uint64_t seed);

struct ForwardOutput {
  std::vector<ad::Var> head_logits;
  std::optional<ad::Var> features;

  // Logits of all heads side by side, in task order.
  ad::Var all_logits() const;
  // Heads [first, last) side by side.
  ad::Var head_range(std::size_t first, std::size_t last) const;
};

ad::Var backbone_forward(ad::Var x, IncrementalModel& model, NormMode mode);
std::vector<ad::Var> heads_forward(ad::Var features, IncrementalModel& model);
ForwardOutput model_forward(ad::Tape& tape, IncrementalModel& model, ad::Var x, NormMode mode,
                            bool capture_features = false);

/// Deep copy of a model taken after a task. Parameters are detached
/// (requires_grad off) so nothing trains it unless a strategy opts in.
struct TeacherSnapshot {
  IncrementalModel model;
};

TeacherSnapshot snapshot_model(const IncrementalModel& model);
TeacherSnapshot snapshot_model(const TeacherSnapshot& snapshot);

}  // namespace clta::nn
