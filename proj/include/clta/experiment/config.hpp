#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "clta/data/stream.hpp"
#include "clta/harness/trainer.hpp"
#include "clta/nn/model.hpp"

namespace clta::exp {

struct DatasetConfig {
  enum class Kind { Synthetic, Idx, Cifar };
  Kind kind = Kind::Synthetic;
  data::SyntheticSpec synthetic;
  // Fixed data seed; by default each run seed also seeds its data.
  std::optional<std::uint64_t> seed;
  std::filesystem::path train_images, train_labels, test_images, test_labels;  // idx
  std::filesystem::path train_file, test_file;                                 // cifar
};

struct SplitConfig {
  data::SplitScheme scheme;
  std::optional<std::uint64_t> order_seed;
};

struct CorruptionConfig {
  enum class Pattern { None, EveryOther };
  Pattern pattern = Pattern::None;
  data::CorruptionSpec spec;
};

struct ModelConfig {
  enum class Arch { Mlp, Cnn };
  Arch arch = Arch::Mlp;
  nn::NormKind norm = nn::NormKind::Batch;
  std::size_t groups = 4;
  std::size_t hidden = 64;
  std::vector<std::size_t> channels{8, 16, 32};
  double bn_momentum = 0.1;
};

struct SweepConfig {
  std::vector<distill::StrategyKind> strategies;
  std::vector<int> severities;

  bool active() const { return !strategies.empty() || !severities.empty(); }
};

struct ExperimentConfig {
  std::string id = "experiment";
  std::filesystem::path output_dir = "results";
  std::vector<std::uint64_t> seeds;
  std::size_t threads = 1;
  // Wall time is the only nondeterministic output; off writes zeros.
  bool record_timing = true;

  DatasetConfig dataset;
  SplitConfig split;
  CorruptionConfig corruption;
  ModelConfig model;
  cil::RunConfig run;
  SweepConfig sweep;

  void validate() const;
};

// `key = value` lines; `[section]` headers prefix following keys with
// "section."; `#` starts a comment. Unknown keys are rejected.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Every key with its effective value, in a fixed order. Parsing the dump
// gives back the same config.
std::string dump_config(const ExperimentConfig& cfg);

// Names of every accepted key.
std::vector<std::string> config_keys();

/// One concrete (strategy, severity) combination of a sweep.
struct Variant {
  std::string config_id;
  distill::StrategyKind strategy;
  int severity = 0;
  std::string strategy_label;
};

std::vector<Variant> expand_variants(const ExperimentConfig& cfg);

// Builds the task stream for a run seed, corruption included.
data::TaskStream build_task_stream(const ExperimentConfig& cfg, int severity, std::uint64_t seed);
// Headless model matching the configured architecture and the stream's inputs.
nn::IncrementalModel build_model(const ModelConfig& cfg, const ad::Shape& sample_shape, std::uint64_t seed);

}  // namespace clta::exp
