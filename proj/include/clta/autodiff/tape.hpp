#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "clta/autodiff/tensor.hpp"

namespace clta::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid until
/// the owning tape is cleared (backward() clears it).
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const;
  std::size_t index() const noexcept { return index_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// What a primitive's backward function sees: the upstream gradient, the
/// forward values, and zero-initialized gradient buffers for the inputs that
/// need one.
class BackwardContext {
 public:
  std::span<const double> grad_output() const { return grad_output_; }
  const Tensor& output() const;
  const Tensor& input(std::size_t i) const;
  bool needs_grad(std::size_t i) const;
  std::span<double> input_grad(std::size_t i);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::size_t node, std::span<const double> grad_output)
      : tape_(tape), node_(node), grad_output_(grad_output) {}

  Tape& tape_;
  std::size_t node_;
  std::span<const double> grad_output_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// The computation record: nodes appended in execution order, so the vector
/// order is already a topological order and backward is a reverse sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Tracks an externally owned tensor (a parameter). If it requires grad,
  // backward() accumulates into tensor.grad. The tensor must outlive the tape
  // contents and must not move while recorded.
  Var leaf(Tensor& tensor);
  // Appends a primitive. The value is checked for NaN/Inf and the error
  // names `op`. The backward function is kept only if some input requires
  // grad.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  // Populates gradients of every requires-grad leaf reachable from `loss`,
  // then clears the record.
  void backward(Var loss);

  void clear();
  std::size_t size() const noexcept { return nodes_.size(); }
  // With gradients disabled, leaves are recorded as constants and no
  // backward closures are kept. Used for evaluation passes.
  void set_grad_enabled(bool enabled) noexcept { grad_enabled_ = enabled; }
  bool grad_enabled() const noexcept { return grad_enabled_; }
  bool empty() const noexcept { return nodes_.empty(); }

 private:
  friend class Var;
  friend class BackwardContext;

  struct Node {
    std::string_view op;
    Tensor owned;
    Tensor* external = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::vector<double> grad;

    const Tensor& value() const { return external ? *external : owned; }
  };

  const Node& node(const Var& v) const;

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace clta::ad
