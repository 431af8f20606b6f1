#include "clta/data/stream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "clta/errors.hpp"
#include "clta/random.hpp"

namespace clta::data {

std::size_t TaskRecord::local_label(std::size_t column) const {
  if (column < column_offset || column >= column_offset + classes.size()) {
    throw IndexError("column " + std::to_string(column) + " is not part of this task");
  }
  return column - column_offset;
}

std::size_t TaskStream::total_classes() const {
  std::size_t n = 0;
  for (const auto& t : tasks) n += t.classes.size();
  return n;
}

std::size_t TaskStream::task_of_column(std::size_t column) const {
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (column >= tasks[t].column_offset && column < tasks[t].column_offset + tasks[t].classes.size()) return t;
  }
  throw IndexError("column " + std::to_string(column) + " belongs to no task");
}

void TaskStream::validate() const {
  if (tasks.empty()) throw DataError("stream has no tasks");
  std::size_t offset = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& task = tasks[t];
    const std::string name = "task " + std::to_string(t + 1);
    if (task.classes.empty()) throw DataError(name + " has no classes");
    if (task.train.empty()) throw DataError(name + " has no training samples");
    if (task.test.empty()) throw DataError(name + " has no test samples");
    if (task.column_offset != offset) throw ConsistencyError(name + " has a wrong column offset");
    for (const auto* part : {&task.train, &task.test}) {
      part->validate();
      for (auto l : part->labels) task.local_label(l);
    }
    offset += task.classes.size();
  }
  for (std::size_t a = 0; a < tasks.size(); ++a) {
    for (std::size_t b = a + 1; b < tasks.size(); ++b) {
      for (auto ca : tasks[a].classes) {
        if (std::find(tasks[b].classes.begin(), tasks[b].classes.end(), ca) != tasks[b].classes.end()) {
          throw ConsistencyError("class " + std::to_string(ca) + " appears in tasks " + std::to_string(a + 1) +
                                 " and " + std::to_string(b + 1));
        }
      }
    }
  }
}

ClassPartition split_classes(std::size_t num_classes, const SplitScheme& scheme,
                             std::optional<std::uint64_t> order_seed) {
  if (num_classes == 0) throw ParameterError("no classes to split");
  if (scheme.count == 0) throw ParameterError("task count must be positive");
  std::vector<std::size_t> order(num_classes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (order_seed) {
    auto rng = derive_rng({*order_seed, tag(RngTag::ClassOrder)});
    std::shuffle(order.begin(), order.end(), rng);
  }

  std::vector<std::size_t> sizes;
  if (scheme.kind == SplitScheme::Kind::Equal) {
    if (num_classes % scheme.count != 0) {
      throw ParameterError(std::to_string(num_classes) + " classes cannot be split into " +
                           std::to_string(scheme.count) + " equal tasks");
    }
    sizes.assign(scheme.count, num_classes / scheme.count);
  } else {
    if (num_classes % 2 != 0) throw ParameterError("half-first split needs an even class count");
    const std::size_t half = num_classes / 2;
    if (half % scheme.count != 0) {
      throw ParameterError(std::to_string(half) + " remaining classes cannot be split into " +
                           std::to_string(scheme.count) + " equal tasks");
    }
    sizes.push_back(half);
    sizes.insert(sizes.end(), scheme.count, half / scheme.count);
  }

  ClassPartition out;
  std::size_t pos = 0;
  for (auto s : sizes) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                     order.begin() + static_cast<std::ptrdiff_t>(pos + s));
    pos += s;
  }
  return out;
}

namespace {

Dataset select_task(const Dataset& data, const std::vector<std::size_t>& classes, std::size_t offset,
                    std::size_t total_columns) {
  std::vector<std::size_t> column_of(data.num_classes, SIZE_MAX);
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (classes[k] >= data.num_classes) throw IndexError("class " + std::to_string(classes[k]) + " not in dataset");
    column_of[classes[k]] = offset + k;
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (column_of[data.labels[i]] != SIZE_MAX) idx.push_back(i);
  }
  Dataset out = data.subset(idx);
  for (auto& l : out.labels) l = column_of[l];
  out.num_classes = total_columns;
  return out;
}

}  // namespace

TaskStream build_stream(const Dataset& train, const Dataset& test, const ClassPartition& partition) {
  if (train.sample_shape != test.sample_shape) throw ConsistencyError("train and test sample shapes differ");
  std::size_t total = 0;
  for (const auto& p : partition) total += p.size();
  TaskStream stream;
  std::size_t offset = 0;
  for (const auto& classes : partition) {
    TaskRecord task;
    task.classes = classes;
    task.column_offset = offset;
    task.train = select_task(train, classes, offset, total);
    task.test = select_task(test, classes, offset, total);
    offset += classes.size();
    stream.tasks.push_back(std::move(task));
  }
  stream.validate();
  return stream;
}

void SyntheticSpec::validate() const {
  if (n_tasks == 0 || classes_per_task == 0) throw ParameterError("synthetic stream needs tasks and classes");
  if (sample_shape.size() != 1 && sample_shape.size() != 3) {
    throw ParameterError("synthetic samples must be vectors (d) or images (c, h, w)");
  }
  if (ad::element_count(sample_shape) == 0) throw ParameterError("synthetic sample shape has a zero dimension");
  if (samples_per_class < 2) throw ParameterError("need at least two samples per class");
  if (!(noise_std >= 0.0) || !(center_low <= center_high) || !std::isfinite(shift)) {
    throw ParameterError("invalid synthetic distribution parameters");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ParameterError("train fraction must lie in (0, 1)");
}

namespace {

void fill_vector_class(std::vector<double>& out, std::size_t dim, std::size_t count, const SyntheticSpec& spec,
                       Rng& rng) {
  std::uniform_real_distribution<double> center_dist(spec.center_low, spec.center_high);
  std::vector<double> center(dim);
  for (auto& c : center) c = center_dist(rng);
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t j = 0; j < dim; ++j) out.push_back(center[j] + noise(rng));
  }
}

void fill_image_class(std::vector<double>& out, const ad::Shape& shape, std::size_t count, const SyntheticSpec& spec,
                      Rng& rng) {
  const std::size_t channels = shape[0], h = shape[1], w = shape[2];
  const double extent = static_cast<double>(std::min(h, w));
  std::uniform_real_distribution<double> pos_y(0.2 * h, 0.8 * h), pos_x(0.2 * w, 0.8 * w);
  std::uniform_real_distribution<double> radius_dist(0.12 * extent, 0.25 * extent);
  std::uniform_real_distribution<double> level(spec.center_low, spec.center_high);
  std::uniform_real_distribution<double> amplitude(0.3, 0.5);
  const double cy = pos_y(rng), cx = pos_x(rng), radius = radius_dist(rng);
  std::vector<double> background(channels), amp(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    background[c] = level(rng);
    amp[c] = amplitude(rng);
  }
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  for (std::size_t s = 0; s < count; ++s) {
    const double sy = cy + jitter(rng), sx = cx + jitter(rng);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double d2 = (y - sy) * (y - sy) + (x - sx) * (x - sx);
          out.push_back(background[c] + amp[c] * std::exp(-d2 / (2.0 * radius * radius)) + noise(rng));
        }
      }
    }
  }
}

}  // namespace

TaskStream synthetic_stream(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t num_classes = spec.n_tasks * spec.classes_per_task;
  const std::size_t dim = ad::element_count(spec.sample_shape);
  auto rng = derive_rng({seed, tag(RngTag::Data)});

  Dataset all;
  all.sample_shape = spec.sample_shape;
  all.num_classes = num_classes;
  all.inputs.reserve(num_classes * spec.samples_per_class * dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t begin = all.inputs.size();
    if (spec.sample_shape.size() == 1) {
      fill_vector_class(all.inputs, dim, spec.samples_per_class, spec, rng);
    } else {
      fill_image_class(all.inputs, spec.sample_shape, spec.samples_per_class, spec, rng);
    }
    const double offset = static_cast<double>(c / spec.classes_per_task) * spec.shift;
    for (std::size_t i = begin; i < all.inputs.size(); ++i) all.inputs[i] = std::clamp(all.inputs[i] + offset, 0.0, 1.0);
    all.labels.insert(all.labels.end(), spec.samples_per_class, c);
  }

  auto split = stratified_split(all, spec.train_fraction, seed);
  auto partition = split_classes(num_classes, {SplitScheme::Kind::Equal, spec.n_tasks}, std::nullopt);
  return build_stream(split.train, split.test, partition);
}

TaskStream corrupt_every_other(const TaskStream& stream, const CorruptionSpec& spec, std::uint64_t seed) {
  TaskStream out = stream;
  for (std::size_t t = 1; t < out.tasks.size(); t += 2) {
    out.tasks[t].train = corrupt_gaussian(stream.tasks[t].train, spec, seed ^ (0x9e3779b97f4a7c15ull * (2 * t + 1)));
    out.tasks[t].test = corrupt_gaussian(stream.tasks[t].test, spec, seed ^ (0x9e3779b97f4a7c15ull * (2 * t + 2)));
  }
  return out;
}

}  // namespace clta::data
