#include "clta/nn/model.hpp"

#include <cmath>
#include <string>

#include "clta/autodiff/ops.hpp"
#include "clta/errors.hpp"
#include "clta/random.hpp"

namespace clta::nn {

std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::Batch: return "bn";
    case NormKind::None: return "none";
    case NormKind::Layer: return "ln";
    case NormKind::Group: return "gn";
  }
  return "unknown";
}

std::size_t IncrementalModel::total_classes() const {
  std::size_t total = 0;
  for (const auto& h : heads) total += h.out_features();
  return total;
}

std::vector<std::size_t> IncrementalModel::head_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.reserve(heads.size());
  for (const auto& h : heads) sizes.push_back(h.out_features());
  return sizes;
}

std::size_t IncrementalModel::batchnorm_count() const {
  std::size_t n = 0;
  for (const auto& layer : backbone) n += std::holds_alternative<BatchNormLayer>(layer) ? 1 : 0;
  return n;
}

namespace {

ad::Tensor kaiming_uniform(ad::Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  ad::Tensor t = ad::Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  t.set_requires_grad(true);
  return t;
}

ad::Tensor zero_param(ad::Shape shape) {
  ad::Tensor t = ad::Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

DenseLayer make_dense(std::size_t in, std::size_t out, Rng& rng) {
  return DenseLayer{kaiming_uniform({in, out}, in, rng), zero_param({out})};
}

void push_norm(std::vector<Layer>& layers, NormKind norm, std::size_t channels, std::size_t groups,
               double momentum, double eps) {
  switch (norm) {
    case NormKind::Batch: layers.emplace_back(BatchNormLayer::make(channels, momentum, eps)); break;
    case NormKind::Layer: layers.emplace_back(AltNormLayer::layer_norm(channels, eps)); break;
    case NormKind::Group: layers.emplace_back(AltNormLayer::group_norm(channels, groups, eps)); break;
    case NormKind::None: break;
  }
}

}  // namespace

IncrementalModel build_micro_mlp(const MlpSpec& spec, std::uint64_t seed) {
  if (spec.input_dim == 0 || spec.hidden == 0) throw ParameterError("MicroMLP dimensions must be positive");
  auto rng = derive_rng({seed, tag(RngTag::Init)});
  IncrementalModel model;
  model.input_shape = {spec.input_dim};
  model.backbone.emplace_back(make_dense(spec.input_dim, spec.hidden, rng));
  push_norm(model.backbone, spec.norm, spec.hidden, spec.groups, spec.bn_momentum, spec.eps);
  model.backbone.emplace_back(ReluLayer{});
  model.backbone.emplace_back(make_dense(spec.hidden, spec.hidden, rng));
  push_norm(model.backbone, spec.norm, spec.hidden, spec.groups, spec.bn_momentum, spec.eps);
  model.backbone.emplace_back(ReluLayer{});
  model.feature_dim = spec.hidden;
  return model;
}

IncrementalModel build_micro_cnn(const CnnSpec& spec, std::uint64_t seed) {
  if (spec.input_shape.size() != 3) throw ParameterError("MicroCNN input shape must be (channels, height, width)");
  if (spec.channels.empty()) throw ParameterError("MicroCNN needs at least one block");
  auto rng = derive_rng({seed, tag(RngTag::Init)});
  IncrementalModel model;
  model.input_shape = spec.input_shape;
  std::size_t in = spec.input_shape[0];
  for (std::size_t i = 0; i < spec.channels.size(); ++i) {
    const std::size_t out = spec.channels[i];
    ConvLayer conv{kaiming_uniform({out, in, 3, 3}, in * 9, rng), zero_param({out}), i == 0 ? 1u : 2u, 1};
    model.backbone.emplace_back(std::move(conv));
    push_norm(model.backbone, spec.norm, out, spec.groups, spec.bn_momentum, spec.eps);
    model.backbone.emplace_back(ReluLayer{});
    in = out;
  }
  model.backbone.emplace_back(GlobalPoolLayer{});
  model.feature_dim = in;
  return model;
}

void add_task_head(IncrementalModel& model, std::size_t num_classes, HeadInit init, std::uint64_t seed) {
  if (num_classes < 1) throw ParameterError("a task head needs at least one class");
  if (model.feature_dim == 0) throw ContractError("model has no feature dimension");
  DenseLayer head;
  if (init == HeadInit::Zeros) {
    head = DenseLayer{zero_param({model.feature_dim, num_classes}), zero_param({num_classes})};
  } else {
    auto rng = derive_rng({seed, tag(RngTag::Head), model.heads.size()});
    head = make_dense(model.feature_dim, num_classes, rng);
  }
  model.heads.push_back(std::move(head));
}

ad::Var ForwardOutput::all_logits() const { return head_range(0, head_logits.size()); }

ad::Var ForwardOutput::head_range(std::size_t first, std::size_t last) const {
  if (first >= last || last > head_logits.size()) throw IndexError("head range out of bounds");
  if (last - first == 1) return head_logits[first];
  return ad::concat_columns(std::span<const ad::Var>(head_logits.data() + first, last - first));
}

namespace {

ad::Var dense_forward(ad::Var x, DenseLayer& layer) {
  auto& tape = x.tape();
  return ad::add_bias(ad::matmul(x, tape.leaf(layer.weight)), tape.leaf(layer.bias));
}

}  // namespace

ad::Var backbone_forward(ad::Var x, IncrementalModel& model, NormMode mode) {
  const auto& shape = x.shape();
  if (shape.size() != model.input_shape.size() + 1 ||
      !std::equal(model.input_shape.begin(), model.input_shape.end(), shape.begin() + 1)) {
    throw DimensionError("model expects samples of shape " + ad::shape_string(model.input_shape) + ", got batch " +
                         ad::shape_string(shape));
  }
  auto& tape = x.tape();
  ad::Var h = x;
  for (auto& layer : model.backbone) {
    h = std::visit(
        [&](auto& l) -> ad::Var {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            return dense_forward(h, l);
          } else if constexpr (std::is_same_v<T, ConvLayer>) {
            auto y = ad::conv2d(h, tape.leaf(l.weight), {l.stride, l.padding});
            return ad::add_bias(y, tape.leaf(l.bias));
          } else if constexpr (std::is_same_v<T, BatchNormLayer>) {
            return batchnorm_forward(h, l, mode);
          } else if constexpr (std::is_same_v<T, AltNormLayer>) {
            return altnorm_forward(h, l);
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            return ad::relu(h);
          } else if constexpr (std::is_same_v<T, GlobalPoolLayer>) {
            return ad::global_avg_pool(h);
          } else {
            return ad::flatten(h);
          }
        },
        layer);
  }
  if (h.shape().size() != 2 || h.shape()[1] != model.feature_dim) {
    throw DimensionError("backbone produced " + ad::shape_string(h.shape()) + ", expected feature width " +
                         std::to_string(model.feature_dim));
  }
  return h;
}

std::vector<ad::Var> heads_forward(ad::Var features, IncrementalModel& model) {
  std::vector<ad::Var> out;
  out.reserve(model.heads.size());
  for (auto& head : model.heads) out.push_back(dense_forward(features, head));
  return out;
}

ForwardOutput model_forward(ad::Tape& tape, IncrementalModel& model, ad::Var x, NormMode mode,
                            bool capture_features) {
  if (&x.tape() != &tape) throw ContractError("input lives on a different tape");
  ForwardOutput out;
  ad::Var features = backbone_forward(x, model, mode);
  out.head_logits = heads_forward(features, model);
  if (capture_features) out.features = features;
  return out;
}

namespace {

void detach_all(IncrementalModel& model) {
  auto detach = [](ad::Tensor& t) { t.set_requires_grad(false); };
  for (auto& layer : model.backbone) {
    std::visit(
        [&](auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer> || std::is_same_v<T, ConvLayer>) {
            detach(l.weight);
            detach(l.bias);
          } else if constexpr (std::is_same_v<T, BatchNormLayer> || std::is_same_v<T, AltNormLayer>) {
            detach(l.gamma);
            detach(l.beta);
          }
        },
        layer);
  }
  for (auto& h : model.heads) {
    detach(h.weight);
    detach(h.bias);
  }
}

}  // namespace

TeacherSnapshot snapshot_model(const IncrementalModel& model) {
  TeacherSnapshot snap{model};
  detach_all(snap.model);
  return snap;
}

TeacherSnapshot snapshot_model(const TeacherSnapshot& snapshot) { return snapshot_model(snapshot.model); }

}  // namespace clta::nn
