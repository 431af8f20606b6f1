#include "clta/autodiff/tape.hpp"

#include <string>

#include "clta/errors.hpp"

namespace clta::ad {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an empty Var");
  return tape_->node(*this).value();
}

bool Var::requires_grad() const {
  if (!tape_) throw ContractError("use of an empty Var");
  return tape_->node(*this).requires_grad;
}

Tape& Var::tape() const {
  if (!tape_) throw ContractError("use of an empty Var");
  return *tape_;
}

const Tensor& BackwardContext::output() const { return tape_.nodes_[node_].value(); }

const Tensor& BackwardContext::input(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].value();
}

bool BackwardContext::needs_grad(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].requires_grad;
}

std::span<double> BackwardContext::input_grad(std::size_t i) {
  auto& in = tape_.nodes_[tape_.nodes_[node_].inputs.at(i)];
  if (!in.requires_grad) throw ContractError("gradient requested for a constant input");
  if (in.grad.empty()) in.grad.assign(in.value().size(), 0.0);
  return in.grad;
}

const Tape::Node& Tape::node(const Var& v) const {
  if (v.tape_ != this || v.index_ >= nodes_.size()) {
    throw ContractError("Var does not belong to this tape (was it cleared?)");
  }
  return nodes_[v.index_];
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor& tensor) {
  Node n;
  n.op = "leaf";
  n.external = &tensor;
  n.requires_grad = grad_enabled_ && tensor.requires_grad();
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  value.check_finite(op);
  Node n;
  n.op = op;
  n.owned = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    node(in);
    n.inputs.push_back(in.index_);
    n.requires_grad = n.requires_grad || nodes_[in.index_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  const auto& root = node(loss);
  if (root.value().size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(root.value().shape()));
  }
  if (!root.requires_grad) {
    throw ContractError("backward() on a loss with an empty computation record");
  }
  nodes_[loss.index_].grad.assign(1, 1.0);
  for (std::size_t i = loss.index_ + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) {
      BackwardContext ctx(*this, i, n.grad);
      n.backward(ctx);
    } else if (n.external) {
      n.external->accumulate_grad(n.grad);
    }
  }
  clear();
}

void Tape::clear() { nodes_.clear(); }

}  // namespace clta::ad
