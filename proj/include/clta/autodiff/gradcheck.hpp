#pragma once

#include <functional>
#include <span>
#include <vector>

#include "clta/autodiff/tensor.hpp"

namespace clta::ad {

using ScalarFunction = std::function<double(const Tensor&)>;

/// Central-difference gradient estimate: component i is
/// (f(x + h e_i) - f(x - h e_i)) / 2h. Uses only forward evaluations of `f`,
/// so it is independent of the tape's backward rules.
std::vector<double> finite_difference_oracle(const ScalarFunction& f, const Tensor& x, double h = 1e-5);

/// |a - b| / max(|a|, |b|, floor). The floor keeps components that are
/// essentially zero from dominating.
double relative_error(double analytic, double numeric, double floor = 1e-3);
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-3);

}  // namespace clta::ad
