#include "clta/distill/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clta/autodiff/ops.hpp"
#include "clta/errors.hpp"
#include "clta/harness/optimizer.hpp"
#include "clta/nn/state.hpp"
#include "clta/random.hpp"

namespace clta::distill {

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::FrozenTeacher: return "frozen";
    case StrategyKind::TA: return "ta";
    case StrategyKind::CT_FM: return "ct_fm";
    case StrategyKind::CT_BN: return "ct_bn";
    case StrategyKind::P_FM: return "p_fm";
    case StrategyKind::P_BN: return "p_bn";
    case StrategyKind::FixBN: return "fixbn";
  }
  return "unknown";
}

std::optional<StrategyKind> parse_strategy_kind(std::string_view name) {
  for (auto k : {StrategyKind::FrozenTeacher, StrategyKind::TA, StrategyKind::CT_FM, StrategyKind::CT_BN,
                 StrategyKind::P_FM, StrategyKind::P_BN, StrategyKind::FixBN}) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

void TeacherStrategy::validate() const {
  if (trains_teacher() && (!(teacher_lr > 0.0) || !std::isfinite(teacher_lr))) {
    throw ValidationError("teacher.lr", "must be > 0");
  }
  if (pretrains() && pretrain_epochs < 1) throw ValidationError("teacher.pretrain_epochs", "must be >= 1");
}

TeacherOutput teacher_forward(nn::TeacherSnapshot* snapshot, const ad::Tensor& x, const TeacherStrategy& strategy,
                              std::size_t num_heads, bool capture_features) {
  if (snapshot == nullptr) throw ContractError("teacher_forward: no teacher snapshot");
  if (num_heads > snapshot->model.num_heads()) throw ContractError("teacher_forward: teacher lacks requested heads");
  const auto mode = strategy.kind == StrategyKind::TA ? nn::NormMode::AdaptStats : nn::NormMode::Eval;
  ad::Tape tape;
  tape.set_grad_enabled(false);
  auto out = nn::model_forward(tape, snapshot->model, tape.constant(x), mode, capture_features);
  TeacherOutput result;
  result.heads.reserve(num_heads);
  for (std::size_t j = 0; j < num_heads; ++j) result.heads.push_back(out.head_logits[j].value());
  if (out.features) result.features = out.features->value();
  return result;
}

void attach_scratch_head(nn::TeacherSnapshot& snapshot, const nn::DenseLayer& head) {
  nn::DenseLayer copy = head;
  copy.weight.set_requires_grad(false);
  copy.bias.set_requires_grad(false);
  snapshot.model.heads.push_back(std::move(copy));
}

void configure_adaptation(nn::TeacherSnapshot& snapshot, nn::AdaptForward rule) {
  for (auto& layer : snapshot.model.backbone) {
    if (auto* bn = std::get_if<nn::BatchNormLayer>(&layer)) bn->adapt_forward = rule;
  }
}

namespace {

// Opens the strategy's parameter scope for one update and closes it again
// so the snapshot stays detached everywhere else.
class TrainableScope {
 public:
  TrainableScope(nn::IncrementalModel& model, bool norm_only) : model_(model) {
    nn::set_trainable(model_, [norm_only](const nn::ParamRef& p) { return !norm_only || nn::is_norm_role(p.role); });
    for (const auto& p : nn::parameters(model_)) {
      if (p.tensor->requires_grad()) params_.push_back(p.tensor);
    }
  }
  ~TrainableScope() {
    nn::set_trainable(model_, [](const nn::ParamRef&) { return false; });
  }
  TrainableScope(const TrainableScope&) = delete;
  TrainableScope& operator=(const TrainableScope&) = delete;

  const std::vector<ad::Tensor*>& params() const { return params_; }

 private:
  nn::IncrementalModel& model_;
  std::vector<ad::Tensor*> params_;
};

void teacher_sgd_step(nn::IncrementalModel& model, const std::vector<ad::Tensor*>& params, const ad::Tensor& x,
                      std::span<const std::size_t> local_labels, double lr, std::optional<double> grad_clip) {
  if (model.num_heads() == 0) throw ContractError("teacher update: teacher has no head for the new task");
  ad::Tape tape;
  auto out = nn::model_forward(tape, model, tape.constant(x), nn::NormMode::Train);
  ad::Var ce = ad::cross_entropy(out.head_logits.back(), local_labels);
  if (!ce.requires_grad()) return;  // nothing trainable; the Train-mode forward still moved BN statistics
  for (auto* p : params) p->clear_grad();
  tape.backward(ce);
  auto stepped = cil::with_grad(params);
  cil::sgd_step(stepped, lr, grad_clip);
  for (auto* p : params) p->clear_grad();
}

std::vector<std::size_t> local_labels_of(const data::Dataset& data, std::span<const std::size_t> idx,
                                         std::size_t offset) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (auto i : idx) {
    if (data.labels[i] < offset) throw IndexError("teacher update: label precedes the task's columns");
    out.push_back(data.labels[i] - offset);
  }
  return out;
}

}  // namespace

void teacher_continuous_step(nn::TeacherSnapshot& snapshot, const ad::Tensor& x,
                             std::span<const std::size_t> local_labels, const TeacherStrategy& strategy,
                             std::optional<double> grad_clip) {
  if (!strategy.continuous()) throw ContractError("teacher_continuous_step: strategy is not a CT kind");
  TrainableScope scope(snapshot.model, strategy.norm_only());
  teacher_sgd_step(snapshot.model, scope.params(), x, local_labels, strategy.teacher_lr, grad_clip);
}

void teacher_pretrain(nn::TeacherSnapshot& snapshot, const data::Dataset& task_train, std::size_t column_offset,
                      const TeacherStrategy& strategy, const PretrainOptions& options) {
  if (!strategy.pretrains()) throw ContractError("teacher_pretrain: strategy is not a P kind");
  if (task_train.empty()) throw DataError("teacher_pretrain: no training data");
  if (options.batch_size == 0) throw ParameterError("batch size must be positive");
  TrainableScope scope(snapshot.model, strategy.norm_only());
  std::vector<std::size_t> order(task_train.size());
  for (std::size_t epoch = 0; epoch < strategy.pretrain_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = derive_rng({options.seed, tag(RngTag::Auxiliary), options.task_index, epoch});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      if (end - start < 2) continue;  // a single sample has no batch statistics
      std::span<const std::size_t> idx(order.data() + start, end - start);
      teacher_sgd_step(snapshot.model, scope.params(), task_train.batch(idx),
                       local_labels_of(task_train, idx, column_offset), strategy.teacher_lr, options.grad_clip);
    }
  }
}

double teacher_head_loss(nn::TeacherSnapshot& snapshot, const data::Dataset& task_train, std::size_t column_offset) {
  if (task_train.empty()) throw DataError("teacher_head_loss: no data");
  if (snapshot.model.num_heads() == 0) throw ContractError("teacher_head_loss: teacher has no head");
  std::vector<std::size_t> idx(task_train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  ad::Tape tape;
  tape.set_grad_enabled(false);
  auto out = nn::model_forward(tape, snapshot.model, tape.constant(task_train.batch(idx)), nn::NormMode::Eval);
  const auto labels = local_labels_of(task_train, idx, column_offset);
  return ad::cross_entropy(out.head_logits.back(), labels).value().item();
}

}  // namespace clta::distill
