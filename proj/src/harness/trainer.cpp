#include "clta/harness/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "clta/autodiff/ops.hpp"
#include "clta/errors.hpp"
#include "clta/harness/optimizer.hpp"
#include "clta/nn/state.hpp"
#include "clta/random.hpp"

namespace clta::cil {

void RunConfig::validate() const {
  kd.validate();
  strategy.validate();
  train.validate();
  warmup.validate();
  if (track_cka && cka_samples < 2) throw ValidationError("diagnostics.cka_samples", "must be >= 2");
}

namespace {

using Clock = std::chrono::steady_clock;

// Epoch permutation, replayable from (seed, task, epoch, stream).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t task, std::size_t epoch,
                                     std::uint64_t stream) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = derive_rng({seed, tag(RngTag::Shuffle), task, epoch, stream});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Batches of `order`; a trailing batch of one sample is dropped because
// batch statistics are undefined for it.
std::vector<std::span<const std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::vector<std::span<const std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    if (len < 2) break;
    out.emplace_back(order.data() + start, len);
  }
  return out;
}

std::vector<std::size_t> to_local(std::span<const std::size_t> columns, std::size_t offset) {
  std::vector<std::size_t> out(columns.begin(), columns.end());
  for (auto& c : out) c -= offset;
  return out;
}

std::vector<ad::Tensor*> tensors_of(nn::IncrementalModel& model) {
  std::vector<ad::Tensor*> out;
  for (const auto& p : nn::parameters(model)) out.push_back(p.tensor);
  return out;
}

// Mean CE of a linear head over cached features.
double head_loss(const ad::Tensor& features, const std::vector<std::size_t>& labels, nn::DenseLayer& head) {
  ad::Tape tape;
  tape.set_grad_enabled(false);
  auto logits = ad::add_bias(ad::matmul(tape.constant(features), tape.leaf(head.weight)), tape.leaf(head.bias));
  return ad::cross_entropy(logits, labels).value().item();
}

ad::Tensor select_rows(const ad::Tensor& m, std::span<const std::size_t> rows) {
  const std::size_t cols = m.dim(1);
  std::vector<double> out;
  out.reserve(rows.size() * cols);
  for (auto r : rows) {
    auto v = m.values().subspan(r * cols, cols);
    out.insert(out.end(), v.begin(), v.end());
  }
  return ad::Tensor({rows.size(), cols}, std::move(out), ad::Tensor::Unchecked{});
}

// Auxiliary network for ANCL: a copy of the student trained on the
// current task alone, then frozen.
nn::TeacherSnapshot train_auxiliary(const nn::IncrementalModel& student, const data::TaskRecord& task,
                                    const RunConfig& cfg, const TaskContext& ctx) {
  nn::IncrementalModel aux = student;
  nn::set_trainable(aux, [](const nn::ParamRef&) { return true; });
  auto params = tensors_of(aux);
  Sgd opt(SgdOptions{cfg.train.momentum, cfg.train.weight_decay, cfg.train.grad_clip});
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg.train);
    const auto order = epoch_order(task.train.size(), ctx.seed, ctx.task_index, epoch, 2);
    for (auto idx : make_batches(order, cfg.train.batch_size)) {
      ad::Tape tape;
      auto out = nn::model_forward(tape, aux, tape.constant(task.train.batch(idx)), nn::NormMode::Train);
      const auto labels = to_local(task.train.labels_at(idx), task.column_offset);
      ad::Var ce = ad::cross_entropy(out.head_logits.back(), labels);
      nn::zero_grads(aux);
      tape.backward(ce);
      auto stepped = with_grad(params);
      opt.step(stepped, lr);
    }
  }
  nn::zero_grads(aux);
  return nn::snapshot_model(aux);
}

}  // namespace

WarmupResult warmup_head(nn::IncrementalModel& model, const data::Dataset& task_train, std::size_t column_offset,
                         const WarmupConfig& cfg, std::size_t batch_size, std::uint64_t seed, std::size_t task_index) {
  cfg.validate();
  if (model.num_heads() == 0) throw ContractError("warmup_head: model has no head for the new task");
  if (task_train.empty()) throw DataError("warmup_head: no training data");
  if (batch_size == 0) throw ParameterError("batch size must be positive");

  std::vector<std::size_t> all(task_train.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const ad::Tensor features = metrics::extract_features(model, task_train.batch(all));
  const auto labels = to_local(task_train.labels, column_offset);
  auto& head = model.heads.back();

  WarmupResult result;
  result.initial_loss = head_loss(features, labels, head);
  ad::Tensor* head_params[] = {&head.weight, &head.bias};
  const bool weight_grad = head.weight.requires_grad(), bias_grad = head.bias.requires_grad();
  head.weight.set_requires_grad(true);
  head.bias.set_requires_grad(true);

  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = one_cycle_lr(epoch, cfg);
    const auto order = epoch_order(task_train.size(), seed, task_index, epoch, 1);
    double total = 0.0;
    std::size_t batches = 0;
    for (auto idx : make_batches(order, batch_size)) {
      ad::Tape tape;
      auto logits = ad::add_bias(ad::matmul(tape.constant(select_rows(features, idx)), tape.leaf(head.weight)),
                                 tape.leaf(head.bias));
      std::vector<std::size_t> batch_labels;
      for (auto i : idx) batch_labels.push_back(labels[i]);
      ad::Var ce = ad::cross_entropy(logits, batch_labels);
      total += ce.value().item();
      ++batches;
      head.weight.clear_grad();
      head.bias.clear_grad();
      tape.backward(ce);
      sgd_step(head_params, lr, std::nullopt);
    }
    const double epoch_loss = batches ? total / static_cast<double>(batches) : 0.0;
    result.loss_trace.push_back(epoch_loss);
    result.epochs_run = epoch + 1;
    if (epoch_loss < best) {
      best = epoch_loss;
      stale = 0;
    } else if (++stale >= cfg.early_stop_patience) {
      break;
    }
  }
  head.weight.clear_grad();
  head.bias.clear_grad();
  head.weight.set_requires_grad(weight_grad);
  head.bias.set_requires_grad(bias_grad);
  return result;
}

TaskTrace train_task(nn::IncrementalModel& model, nn::TeacherSnapshot* teacher, const data::TaskRecord& task,
                     const RunConfig& cfg, const TaskContext& ctx) {
  const std::size_t t = ctx.task_index;
  if (task.train.empty()) throw DataError("task " + std::to_string(t + 1) + " has no training data");
  if (model.num_heads() != t + 1) throw ContractError("train_task: model must carry exactly one head per task so far");
  if (t > 0 && teacher == nullptr) throw ContractError("train_task: a teacher is required after the first task");
  if (t == 0 && teacher != nullptr) throw ContractError("train_task: no teacher exists for the first task");
  const auto& strategy = cfg.strategy;

  TaskTrace trace;
  if (cfg.warmup.enabled && t > 0) {
    trace.warmup_loss =
        warmup_head(model, task.train, task.column_offset, cfg.warmup, cfg.train.batch_size, ctx.seed, t).loss_trace;
  }

  if (teacher && strategy.trains_teacher()) {
    distill::attach_scratch_head(*teacher, model.heads.back());
    if (strategy.pretrains()) {
      distill::teacher_pretrain(*teacher, task.train, task.column_offset, strategy,
                                {cfg.train.batch_size, cfg.train.grad_clip, ctx.seed, t});
    }
  }

  std::optional<nn::TeacherSnapshot> aux;
  if (teacher && cfg.kd.variant == distill::KDVariant::ANCL) aux = train_auxiliary(model, task, cfg, ctx);

  const bool use_teacher = teacher && cfg.kd.variant != distill::KDVariant::None;
  const auto student_mode = (strategy.kind == distill::StrategyKind::FixBN && t > 0) ? nn::NormMode::Frozen
                                                                                     : nn::NormMode::Train;
  const std::uint64_t frozen_sum =
      teacher && strategy.freezes_teacher() ? nn::checksum(teacher->model, nn::StateScope::All) : 0;

  std::optional<ad::Tensor> probe;
  if (teacher && cfg.track_cka) probe = task.train.head(cfg.cka_samples);

  auto params = tensors_of(model);
  Sgd opt(SgdOptions{cfg.train.momentum, cfg.train.weight_decay, cfg.train.grad_clip});
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg.train);
    const auto order = epoch_order(task.train.size(), ctx.seed, t, epoch, 0);
    double ce_sum = 0.0, kd_sum = 0.0;
    std::size_t batches = 0;
    for (auto idx : make_batches(order, cfg.train.batch_size)) {
      const ad::Tensor x = task.train.batch(idx);
      const auto labels = to_local(task.train.labels_at(idx), task.column_offset);

      ad::Tape tape;
      auto out = nn::model_forward(tape, model, tape.constant(x), student_mode);
      ad::Var ce = ad::cross_entropy(out.head_logits.back(), labels);

      std::vector<ad::Tensor> teacher_heads;
      std::optional<ad::Tensor> aux_logits;
      if (use_teacher) {
        teacher_heads = distill::teacher_forward(teacher, x, strategy, t).heads;
        if (aux) aux_logits = distill::teacher_forward(&*aux, x, distill::TeacherStrategy{}, t + 1).heads.back();
      }
      auto kd = distill::kd_term(tape, cfg.kd, out, teacher_heads, aux_logits ? &*aux_logits : nullptr);
      ad::Var total = distill::total_loss(ce, kd.value, kd.weight);
      ce_sum += ce.value().item();
      kd_sum += kd.value.value().item();
      ++batches;

      nn::zero_grads(model);
      tape.backward(total);
      auto stepped = with_grad(params);
      opt.step(stepped, lr);

      if (teacher && strategy.continuous()) {
        distill::teacher_continuous_step(*teacher, x, labels, strategy, cfg.train.grad_clip);
      }
    }
    const double denom = batches ? static_cast<double>(batches) : 1.0;
    trace.ce.push_back(ce_sum / denom);
    trace.kd.push_back(kd_sum / denom);

    if (teacher && strategy.freezes_teacher() && nn::checksum(teacher->model, nn::StateScope::All) != frozen_sum) {
      throw StateError("teacher snapshot changed under a frozen-teacher strategy");
    }
    if (probe) {
      try {
        trace.cka.push_back(metrics::linear_cka(metrics::extract_features(teacher->model, *probe),
                                                metrics::extract_features(model, *probe)));
      } catch (const DataError&) {
        trace.cka.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
  }
  nn::zero_grads(model);
  return trace;
}

RunResult run_stream(const data::TaskStream& stream, nn::IncrementalModel model, const RunConfig& cfg,
                     std::uint64_t seed) {
  const auto started = Clock::now();
  cfg.validate();
  stream.validate();
  if (model.num_heads() != 0) throw ContractError("run_stream: model must start without heads");

  RunResult result;
  result.seed = seed;
  result.accuracy = metrics::AccuracyMatrix(stream.size());
  std::optional<nn::TeacherSnapshot> teacher;
  for (std::size_t t = 0; t < stream.size(); ++t) {
    const auto& task = stream.tasks[t];
    nn::add_task_head(model, task.num_classes(), cfg.head_init, seed);
    result.tasks.push_back(train_task(model, teacher ? &*teacher : nullptr, task, cfg, {t, seed}));
    for (std::size_t j = 0; j <= t; ++j) {
      result.accuracy.set(t, j, metrics::evaluate_task_agnostic(model, stream.tasks[j].test));
    }
    std::optional<double> kld;
    if (teacher && model.batchnorm_count() > 0) kld = metrics::bn_stats_kld(teacher->model, model);
    result.bn_kld.push_back(kld);
    teacher = nn::snapshot_model(model);
    distill::configure_adaptation(*teacher, cfg.strategy.ta_forward);
  }
  result.task_confusion = metrics::task_confusion(model, stream);
  result.wall_seconds = std::chrono::duration<double>(Clock::now() - started).count();
  return result;
}

}  // namespace clta::cil
