#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "clta/autodiff/tensor.hpp"

namespace clta::data {

/// Samples stored back to back, values in [0, 1].
struct Dataset {
  ad::Shape sample_shape;
  std::vector<double> inputs;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::size_t sample_size() const { return ad::element_count(sample_shape); }
  std::span<const double> sample(std::size_t i) const;

  // Stacks the selected samples into a (n, sample_shape...) tensor.
  ad::Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> labels_at(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  // The first min(n, size()) samples as one tensor.
  ad::Tensor head(std::size_t n) const;

  void validate() const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// Per-class split: floor(n_c * train_fraction) samples of each class go to
// train (after a seeded shuffle within the class), the rest to test.
DatasetSplit stratified_split(const Dataset& data, double train_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// File formats

// MNIST-style IDX pair: images magic 0x00000803 (count, rows, cols),
// labels magic 0x00000801 (count). Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes (3x32x32).
Dataset load_cifar_binary(const std::filesystem::path& path);
Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Corruption

/// Additive Gaussian noise at a severity level; 0 leaves data unchanged.
struct CorruptionSpec {
  int severity = 0;
  std::array<double, 5> sigmas{0.04, 0.08, 0.12, 0.18, 0.26};

  double sigma() const;
  void validate() const;
};

// x' = clip(x + N(0, sigma^2), 0, 1)
Dataset corrupt_gaussian(const Dataset& data, const CorruptionSpec& spec, std::uint64_t seed);

}  // namespace clta::data
