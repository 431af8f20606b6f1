#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "clta/nn/model.hpp"

namespace clta::nn {

enum class ParamRole { BackboneWeight, BackboneBias, NormGamma, NormBeta, HeadWeight, HeadBias };

struct ParamRef {
  ad::Tensor* tensor;
  ParamRole role;
  std::size_t index;  // backbone layer index, or head index for head roles
};

bool is_norm_role(ParamRole role);
bool is_head_role(ParamRole role);

std::vector<ParamRef> parameters(IncrementalModel& model);

// Sets requires_grad on every parameter according to `keep`.
void set_trainable(IncrementalModel& model, const std::function<bool(const ParamRef&)>& keep);
void zero_grads(IncrementalModel& model);

/// Subsets of model state a checksum can cover.
enum class StateScope {
  All,                 // parameters + running statistics + structure
  Parameters,          // every trainable tensor
  BackboneParameters,  // backbone tensors, including normalization affine
  Heads,
  NormAffine,          // gamma/beta of every normalization layer
  NonNormParameters,   // every parameter that is not gamma/beta
  RunningStats,        // BN running mean/var
};

std::uint64_t checksum(const IncrementalModel& model, StateScope scope);
std::uint64_t head_checksum(const IncrementalModel& model, std::size_t head);

/// Flat binary snapshot format: "CLTA", u32 version, then layer records.
/// All integers and doubles little-endian; round trip is bit-exact.
inline constexpr std::uint32_t kSnapshotVersion = 1;

std::vector<std::uint8_t> serialize(const IncrementalModel& model);
IncrementalModel deserialize(std::span<const std::uint8_t> bytes);

void save_model(const IncrementalModel& model, const std::filesystem::path& path);
IncrementalModel load_model(const std::filesystem::path& path);

}  // namespace clta::nn
