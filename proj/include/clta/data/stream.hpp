#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "clta/data/dataset.hpp"

namespace clta::data {

/// One task of a class-incremental stream. Labels inside train/test are
/// stream columns: task t's classes occupy [column_offset, column_offset + |C^t|)
/// in the order of `classes`, matching the concatenated head outputs.
struct TaskRecord {
  std::vector<std::size_t> classes;  // original class ids
  std::size_t column_offset = 0;
  Dataset train;
  Dataset test;

  std::size_t num_classes() const noexcept { return classes.size(); }
  // Maps a stream column inside this task to its index within the head.
  std::size_t local_label(std::size_t column) const;
};

struct TaskStream {
  std::vector<TaskRecord> tasks;

  std::size_t size() const noexcept { return tasks.size(); }
  std::size_t total_classes() const;
  // Index of the task owning a stream column.
  std::size_t task_of_column(std::size_t column) const;

  // Rejects overlapping class sets (every pair checked), empty tasks and
  // labels outside their task's column range.
  void validate() const;
};

using ClassPartition = std::vector<std::vector<std::size_t>>;

struct SplitScheme {
  enum class Kind { Equal, HalfFirst };
  Kind kind = Kind::Equal;
  // Equal: number of tasks. HalfFirst: number of incremental tasks after
  // the first half.
  std::size_t count = 2;
};

// Without order_seed classes keep their natural order.
ClassPartition split_classes(std::size_t num_classes, const SplitScheme& scheme,
                             std::optional<std::uint64_t> order_seed);

TaskStream build_stream(const Dataset& train, const Dataset& test, const ClassPartition& partition);

/// Gaussian-blob tasks with a per-task additive input offset.
///
/// Rank-1 sample shapes give vectors: each class is a Gaussian around a
/// random center. Rank-3 shapes (c, h, w) give images: each class renders a
/// blob at its own location. Task t (0-based) adds t * shift to every value
/// before clipping to [0, 1].
struct SyntheticSpec {
  std::size_t n_tasks = 2;
  std::size_t classes_per_task = 2;
  ad::Shape sample_shape{32};
  std::size_t samples_per_class = 100;
  double shift = 0.0;
  double noise_std = 0.1;
  double center_low = 0.1;
  double center_high = 0.5;
  double train_fraction = 0.8;

  void validate() const;
};

TaskStream synthetic_stream(const SyntheticSpec& spec, std::uint64_t seed);

// Corrupts every other task (tasks 1, 3, ... counting from 0), train and test.
TaskStream corrupt_every_other(const TaskStream& stream, const CorruptionSpec& spec, std::uint64_t seed);

}  // namespace clta::data
