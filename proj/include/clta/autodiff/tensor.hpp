#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace clta::ad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// A rank-0 tensor (empty shape) holds exactly one value and is what the
/// losses return. Values must be finite; construction rejects NaN/Inf.
class Tensor {
 public:
  struct Unchecked {};

  Tensor();
  Tensor(Shape shape, std::vector<double> values);
  // Skips the finiteness scan; callers have already validated the values.
  Tensor(Shape shape, std::vector<double> values, Unchecked);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> data() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool flag);

  bool has_grad() const noexcept { return grad_.has_value(); }
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  // Adds into the gradient buffer, allocating it on first use.
  void accumulate_grad(std::span<const double> delta);
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  Tensor reshaped(Shape shape) const;

  // Throws NumericError mentioning `context` if any value is NaN/Inf.
  void check_finite(std::string_view context) const;

 private:
  Shape shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> grad_;
  bool requires_grad_ = false;
};

bool all_finite(std::span<const double> values);

}  // namespace clta::ad
