#include "clta/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "clta/errors.hpp"
#include "clta/random.hpp"

namespace clta::data {

std::span<const double> Dataset::sample(std::size_t i) const {
  if (i >= size()) throw IndexError("sample " + std::to_string(i) + " out of range");
  const std::size_t n = sample_size();
  return std::span<const double>(inputs).subspan(i * n, n);
}

ad::Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DataError("empty batch");
  const std::size_t n = sample_size();
  std::vector<double> values;
  values.reserve(indices.size() * n);
  for (auto i : indices) {
    auto s = sample(i);
    values.insert(values.end(), s.begin(), s.end());
  }
  ad::Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return ad::Tensor(std::move(shape), std::move(values), ad::Tensor::Unchecked{});
}

std::vector<std::size_t> Dataset::labels_at(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= size()) throw IndexError("sample " + std::to_string(i) + " out of range");
    out.push_back(labels[i]);
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.sample_shape = sample_shape;
  out.num_classes = num_classes;
  const std::size_t n = sample_size();
  out.inputs.reserve(indices.size() * n);
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    auto s = sample(i);
    out.inputs.insert(out.inputs.end(), s.begin(), s.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

ad::Tensor Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return batch(idx);
}

void Dataset::validate() const {
  if (sample_shape.empty() || sample_size() == 0) throw DataError("dataset has no sample shape");
  if (inputs.size() != labels.size() * sample_size()) {
    throw ConsistencyError("dataset holds " + std::to_string(inputs.size()) + " values for " +
                           std::to_string(labels.size()) + " labels of size " + std::to_string(sample_size()));
  }
  for (auto l : labels) {
    if (l >= num_classes) throw IndexError("label " + std::to_string(l) + " outside " + std::to_string(num_classes) + " classes");
  }
  if (!ad::all_finite(inputs)) throw NumericError("dataset contains non-finite values");
}

DatasetSplit stratified_split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ParameterError("train fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(data.labels[i]).push_back(i);
  auto rng = derive_rng({seed, tag(RngTag::Split)});
  std::vector<std::size_t> train_idx, test_idx;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(members.size()) * train_fraction));
    train_idx.insert(train_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {data.subset(train_idx), data.subset(test_idx)};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (offset + 4 > bytes.size()) throw IoError(std::string(what) + ": truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  if (read_be32(images, 0, "idx images") != 0x00000803u) throw FormatError("idx images: bad magic number");
  if (read_be32(labels, 0, "idx labels") != 0x00000801u) throw FormatError("idx labels: bad magic number");
  const std::size_t count = read_be32(images, 4, "idx images");
  const std::size_t rows = read_be32(images, 8, "idx images");
  const std::size_t cols = read_be32(images, 12, "idx images");
  const std::size_t label_count = read_be32(labels, 4, "idx labels");
  if (count != label_count) {
    throw ConsistencyError("idx: " + std::to_string(count) + " images but " + std::to_string(label_count) + " labels");
  }
  if (rows == 0 || cols == 0) throw FormatError("idx images: zero-sized image");
  const std::size_t pixels = rows * cols;
  if (images.size() < 16 + count * pixels) throw IoError("idx images: truncated payload");
  if (labels.size() < 8 + count) throw IoError("idx labels: truncated payload");

  Dataset out;
  out.sample_shape = {1, rows, cols};
  out.inputs.resize(count * pixels);
  for (std::size_t i = 0; i < count * pixels; ++i) out.inputs[i] = images[16 + i] / 255.0;
  out.labels.resize(count);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    out.labels[i] = labels[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = count ? max_label + 1 : 0;
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  return parse_idx(images, labels);
}

Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t pixels = 3 * 32 * 32;
  constexpr std::size_t record = 1 + pixels;
  if (bytes.empty()) throw IoError("cifar: empty file");
  if (bytes.size() % record != 0) throw IoError("cifar: truncated record");
  const std::size_t count = bytes.size() / record;
  Dataset out;
  out.sample_shape = {3, 32, 32};
  out.inputs.resize(count * pixels);
  out.labels.resize(count);
  out.num_classes = 10;
  for (std::size_t i = 0; i < count; ++i) {
    const auto* rec = bytes.data() + i * record;
    if (rec[0] >= 10) throw FormatError("cifar: label " + std::to_string(rec[0]) + " out of range");
    out.labels[i] = rec[0];
    for (std::size_t p = 0; p < pixels; ++p) out.inputs[i * pixels + p] = rec[1 + p] / 255.0;
  }
  return out;
}

Dataset load_cifar_binary(const std::filesystem::path& path) { return parse_cifar_binary(read_file(path)); }

double CorruptionSpec::sigma() const {
  validate();
  return severity == 0 ? 0.0 : sigmas[static_cast<std::size_t>(severity - 1)];
}

void CorruptionSpec::validate() const {
  if (severity < 0 || severity > 5) throw ParameterError("corruption severity must be in 0..5");
  for (double s : sigmas) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("corruption sigmas must be finite and positive");
  }
  for (std::size_t i = 1; i < sigmas.size(); ++i) {
    if (!(sigmas[i] > sigmas[i - 1])) throw ParameterError("corruption sigmas must increase with severity");
  }
}

Dataset corrupt_gaussian(const Dataset& data, const CorruptionSpec& spec, std::uint64_t seed) {
  const double sigma = spec.sigma();
  Dataset out = data;
  if (sigma == 0.0) return out;
  auto rng = derive_rng({seed, tag(RngTag::Corruption)});
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : out.inputs) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return out;
}

}  // namespace clta::data
