#include <cmath>

#include <gtest/gtest.h>

#include "clta/autodiff/ops.hpp"
#include "clta/errors.hpp"
#include "clta/harness/optimizer.hpp"
#include "clta/harness/schedule.hpp"
#include "clta/harness/trainer.hpp"
#include "clta/nn/state.hpp"
#include "generators.hpp"

using namespace clta;
using ad::Tensor;
using cil::RunConfig;
using distill::StrategyKind;

namespace {

nn::IncrementalModel mlp(nn::NormKind norm = nn::NormKind::Batch, std::uint64_t seed = 1) {
  nn::MlpSpec spec;
  spec.input_dim = 8;
  spec.hidden = 16;
  spec.norm = norm;
  return nn::build_micro_mlp(spec, seed);
}

RunConfig quick_config(StrategyKind kind = StrategyKind::FrozenTeacher) {
  RunConfig cfg;
  cfg.train.epochs = 4;
  cfg.train.batch_size = 16;
  cfg.kd.lambda = 1.0;
  cfg.strategy.kind = kind;
  cfg.cka_samples = 32;
  return cfg;
}

// Trains task 0 and returns the model with task 1's head attached plus the
// teacher snapshot taken after task 0.
struct SecondTask {
  data::TaskStream stream;
  nn::IncrementalModel model;
  nn::TeacherSnapshot teacher;

  SecondTask(const RunConfig& cfg, double shift = 0.0, nn::NormKind norm = nn::NormKind::Batch)
      : stream(testkit::blob_stream(4, 2, shift)), model(mlp(norm)) {
    nn::add_task_head(model, 2, cfg.head_init, 7);
    cil::train_task(model, nullptr, stream.tasks[0], cfg, {0, 7});
    teacher = nn::snapshot_model(model);
    distill::configure_adaptation(teacher, cfg.strategy.ta_forward);
    nn::add_task_head(model, 2, cfg.head_init, 7);
  }
};

double mean_abs_old_logit_gap(nn::IncrementalModel& student, nn::TeacherSnapshot& teacher, const Tensor& x) {
  ad::Tape tape;
  tape.set_grad_enabled(false);
  const auto s = nn::model_forward(tape, student, tape.constant(x), nn::NormMode::Eval).head_logits[0].value();
  const auto t = nn::model_forward(tape, teacher.model, tape.constant(x), nn::NormMode::Eval).head_logits[0].value();
  double gap = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) gap += std::abs(s[i] - t[i]);
  return gap / static_cast<double>(s.size());
}

}  // namespace

TEST(Schedule, FullLengthStepPoints) {
  const auto cfg = cil::TrainConfig::full_length();
  EXPECT_EQ(cil::lr_schedule(0, cfg), 0.1);
  EXPECT_EQ(cil::lr_schedule(59, cfg), 0.1);
  EXPECT_DOUBLE_EQ(cil::lr_schedule(60, cfg), 0.01);
  EXPECT_DOUBLE_EQ(cil::lr_schedule(120, cfg), 0.001);
  EXPECT_DOUBLE_EQ(cil::lr_schedule(160, cfg), 0.0001);
  EXPECT_DOUBLE_EQ(cil::lr_schedule(199, cfg), 0.0001);
  EXPECT_THROW(cil::lr_schedule(200, cfg), ParameterError);
}

TEST(Schedule, SingleDecay) {
  cil::TrainConfig cfg;
  cfg.epochs = 10;
  cfg.lr_decay_epochs = {5};
  EXPECT_EQ(cil::lr_schedule(4, cfg), cfg.base_lr);
  EXPECT_DOUBLE_EQ(cil::lr_schedule(5, cfg), cfg.base_lr / 10.0);
}

TEST(Schedule, ProportionalDecayForShortRuns) {
  cil::TrainConfig cfg;
  cfg.epochs = 20;
  EXPECT_EQ(cfg.decay_epochs(), (std::vector<std::size_t>{6, 12, 16}));
  cfg.lr_decay_epochs = {3, 3};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.lr_decay_epochs = {25};
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Schedule, OneCycle) {
  cil::WarmupConfig cfg;
  EXPECT_EQ(cil::one_cycle_lr(cfg.ramp_epochs, cfg), 0.1);
  EXPECT_LT(cil::one_cycle_lr(cfg.max_epochs - 1, cfg), 1e-3 * cfg.max_lr);
  double prev = 0.0;
  for (std::size_t e = 0; e < cfg.max_epochs; ++e) {
    const double lr = cil::one_cycle_lr(e, cfg);
    EXPECT_GE(lr, 0.0);
    EXPECT_LE(lr, cfg.max_lr);
    if (e <= cfg.ramp_epochs) EXPECT_GE(lr, prev);
    if (e > cfg.ramp_epochs) EXPECT_LE(lr, prev);
    prev = lr;
  }
  EXPECT_THROW(cil::one_cycle_lr(cfg.max_epochs, cfg), ParameterError);
  cfg.ramp_epochs = cfg.max_epochs;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Sgd, PlainStep) {
  Tensor p = Tensor::scalar(1.0);
  p.accumulate_grad(std::vector<double>{2.0});
  Tensor* params[] = {&p};
  cil::sgd_step(params, 0.1, std::nullopt);
  EXPECT_DOUBLE_EQ(p[0], 0.8);
}

TEST(Sgd, ClippingScalesByGlobalNorm) {
  // Gradients (6, 8) have norm 10.
  Tensor a = Tensor::scalar(0.0), b = Tensor::scalar(0.0);
  a.accumulate_grad(std::vector<double>{6.0});
  b.accumulate_grad(std::vector<double>{8.0});
  Tensor* params[] = {&a, &b};
  EXPECT_DOUBLE_EQ(cil::global_grad_norm(params), 10.0);
  cil::sgd_step(params, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(a[0], -0.6);
  EXPECT_DOUBLE_EQ(b[0], -0.8);

  Tensor c = Tensor::scalar(0.0), d = Tensor::scalar(0.0);
  c.accumulate_grad(std::vector<double>{6.0});
  d.accumulate_grad(std::vector<double>{8.0});
  Tensor* loose[] = {&c, &d};
  cil::sgd_step(loose, 1.0, 100.0);
  EXPECT_EQ(c[0], -6.0);
  EXPECT_EQ(d[0], -8.0);
}

TEST(Sgd, MissingGradientIsContractError) {
  Tensor p = Tensor::scalar(1.0);
  Tensor* params[] = {&p};
  EXPECT_THROW(cil::sgd_step(params, 0.1, std::nullopt), ContractError);
}

TEST(Sgd, MomentumAndWeightDecay) {
  cil::Sgd opt({.momentum = 0.5, .weight_decay = 0.1});
  Tensor p = Tensor::scalar(1.0);
  Tensor* params[] = {&p};
  p.accumulate_grad(std::vector<double>{1.0});
  opt.step(params, 0.1);  // g = 1.1, v = 1.1
  EXPECT_DOUBLE_EQ(p[0], 1.0 - 0.11);
  p.clear_grad();
  p.accumulate_grad(std::vector<double>{1.0});
  opt.step(params, 0.1);  // g = 1 + 0.089, v = 0.55 + 1.089
  EXPECT_NEAR(p[0], 0.89 - 0.1 * (0.55 + 1.089), 1e-15);
}

TEST(Warmup, TouchesOnlyTheNewHead) {
  auto cfg = quick_config();
  SecondTask s(cfg);
  const auto backbone = nn::checksum(s.model, nn::StateScope::BackboneParameters);
  const auto stats = nn::checksum(s.model, nn::StateScope::RunningStats);
  const auto old_head = nn::head_checksum(s.model, 0);
  const auto new_head = nn::head_checksum(s.model, 1);
  cil::WarmupConfig w;
  w.enabled = true;
  w.max_epochs = 30;
  w.ramp_epochs = 6;
  w.early_stop_patience = 5;
  const auto& task = s.stream.tasks[1];
  const auto r = cil::warmup_head(s.model, task.train, task.column_offset, w, 16, 3, 1);
  EXPECT_EQ(nn::checksum(s.model, nn::StateScope::BackboneParameters), backbone);
  EXPECT_EQ(nn::checksum(s.model, nn::StateScope::RunningStats), stats);
  EXPECT_EQ(nn::head_checksum(s.model, 0), old_head);
  EXPECT_NE(nn::head_checksum(s.model, 1), new_head);
  ASSERT_FALSE(r.loss_trace.empty());
  EXPECT_LE(r.epochs_run, 30u);
  EXPECT_LT(r.loss_trace.back(), r.initial_loss);
}

TEST(Warmup, EarlyStopsOnPlateau) {
  auto cfg = quick_config();
  SecondTask s(cfg);
  // Identical inputs with alternating labels: nothing beyond ln 2 is
  // learnable, so the loss stalls.
  data::Dataset same;
  same.sample_shape = {8};
  same.num_classes = 4;
  for (std::size_t i = 0; i < 64; ++i) {
    same.inputs.insert(same.inputs.end(), 8, 0.3);
    same.labels.push_back(2 + i % 2);
  }
  cil::WarmupConfig w;
  w.early_stop_patience = 3;
  const auto r = cil::warmup_head(s.model, same, 2, w, 16, 3, 1);
  EXPECT_LT(r.epochs_run, w.max_epochs);
  ASSERT_EQ(r.loss_trace.size(), r.epochs_run);
  const double best_before = *std::min_element(r.loss_trace.begin(), r.loss_trace.end() - 3);
  for (auto it = r.loss_trace.end() - 3; it != r.loss_trace.end(); ++it) EXPECT_GE(*it, best_before);
  EXPECT_NEAR(r.loss_trace.back(), std::log(2.0), 1e-2);
}

TEST(TrainTask, Contracts) {
  auto cfg = quick_config();
  SecondTask s(cfg);
  EXPECT_THROW(cil::train_task(s.model, nullptr, s.stream.tasks[1], cfg, {1, 7}), ContractError);
  auto fresh = mlp();
  nn::add_task_head(fresh, 2, cfg.head_init, 1);
  EXPECT_THROW(cil::train_task(fresh, &s.teacher, s.stream.tasks[0], cfg, {0, 7}), ContractError);
  auto empty = s.stream.tasks[1];
  empty.train = empty.train.subset(std::vector<std::size_t>{});
  EXPECT_THROW(cil::train_task(s.model, &s.teacher, empty, cfg, {1, 7}), DataError);
}

TEST(TrainTask, FirstTaskIsPlainSupervised) {
  auto cfg = quick_config();
  const auto stream = testkit::blob_stream(4);
  auto m = mlp();
  nn::add_task_head(m, 2, cfg.head_init, 7);
  const auto trace = cil::train_task(m, nullptr, stream.tasks[0], cfg, {0, 7});
  ASSERT_EQ(trace.kd.size(), cfg.train.epochs);
  for (double v : trace.kd) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(trace.cka.empty());
  EXPECT_LT(trace.ce.back(), trace.ce.front());
}

TEST(TrainTask, ZeroLambdaReplaysFinetuningBitForBit) {
  auto kd_cfg = quick_config(StrategyKind::TA);
  kd_cfg.kd.lambda = 0.0;
  auto ft_cfg = kd_cfg;
  ft_cfg.kd.variant = distill::KDVariant::None;
  SecondTask a(kd_cfg, 0.2), b(ft_cfg, 0.2);
  cil::train_task(a.model, &a.teacher, a.stream.tasks[1], kd_cfg, {1, 7});
  cil::train_task(b.model, &b.teacher, b.stream.tasks[1], ft_cfg, {1, 7});
  EXPECT_EQ(nn::serialize(a.model), nn::serialize(b.model));
}

// Without normalization layers the student starts as an exact copy of the
// teacher, so the comparison isolates the weight of the KD term. Clipping
// keeps the huge-weight run stable; with clip 1 each step is larger than the
// drift it is meant to undo.
TEST(TrainTask, HugeLambdaKeepsOldLogitsNearTeacher) {
  auto loose = quick_config();
  loose.kd.lambda = 0.0;
  loose.train.grad_clip = 0.1;
  auto tight = loose;
  tight.kd.lambda = 1e6;
  SecondTask a(quick_config(), 0.0, nn::NormKind::None), b(quick_config(), 0.0, nn::NormKind::None);
  cil::train_task(a.model, &a.teacher, a.stream.tasks[1], loose, {1, 7});
  cil::train_task(b.model, &b.teacher, b.stream.tasks[1], tight, {1, 7});
  const auto x = a.stream.tasks[1].test.head(64);
  EXPECT_LT(mean_abs_old_logit_gap(b.model, b.teacher, x), mean_abs_old_logit_gap(a.model, a.teacher, x));
}

TEST(TrainTask, FrozenTeacherIsNeverMutated) {
  for (auto kind : {StrategyKind::FrozenTeacher, StrategyKind::FixBN}) {
    auto cfg = quick_config(kind);
    SecondTask s(cfg, 0.2);
    const auto before = nn::serialize(s.teacher.model);
    const auto trace = cil::train_task(s.model, &s.teacher, s.stream.tasks[1], cfg, {1, 7});
    EXPECT_EQ(nn::serialize(s.teacher.model), before);
    EXPECT_EQ(trace.cka.size(), cfg.train.epochs);
    for (double v : trace.kd) EXPECT_GT(v, 0.0);
  }
}

TEST(TrainTask, AdaptationMovesOnlyTeacherStatistics) {
  auto cfg = quick_config(StrategyKind::TA);
  SecondTask s(cfg, 0.2);
  const auto params = nn::checksum(s.teacher.model, nn::StateScope::Parameters);
  const auto stats = nn::checksum(s.teacher.model, nn::StateScope::RunningStats);
  cil::train_task(s.model, &s.teacher, s.stream.tasks[1], cfg, {1, 7});
  EXPECT_EQ(nn::checksum(s.teacher.model, nn::StateScope::Parameters), params);
  EXPECT_NE(nn::checksum(s.teacher.model, nn::StateScope::RunningStats), stats);
}

TEST(TrainTask, FixBnFreezesStudentStatisticsAfterFirstTask) {
  auto cfg = quick_config(StrategyKind::FixBN);
  SecondTask s(cfg, 0.2);
  const auto stats = nn::checksum(s.model, nn::StateScope::RunningStats);
  cil::train_task(s.model, &s.teacher, s.stream.tasks[1], cfg, {1, 7});
  EXPECT_EQ(nn::checksum(s.model, nn::StateScope::RunningStats), stats);
}

TEST(RunStream, DeterministicUnderSeed) {
  const auto stream = testkit::blob_stream(5, 3, 0.1);
  for (auto kind : {StrategyKind::FrozenTeacher, StrategyKind::TA, StrategyKind::CT_BN, StrategyKind::P_FM}) {
    auto cfg = quick_config(kind);
    cfg.strategy.teacher_lr = 0.01;
    cfg.strategy.pretrain_epochs = 1;
    const auto a = cil::run_stream(stream, mlp(), cfg, 11);
    const auto b = cil::run_stream(stream, mlp(), cfg, 11);
    EXPECT_EQ(a.accuracy, b.accuracy) << distill::to_string(kind);
    EXPECT_EQ(a.tasks[2].kd, b.tasks[2].kd);
    EXPECT_EQ(a.bn_kld, b.bn_kld);
    EXPECT_EQ(a.task_confusion, b.task_confusion);
  }
}

TEST(RunStream, SingleTaskStream) {
  const auto stream = testkit::blob_stream(5, 1);
  const auto r = cil::run_stream(stream, mlp(), quick_config(), 3);
  ASSERT_EQ(r.accuracy.tasks(), 1u);
  const auto s = metrics::summarize(r.accuracy);
  EXPECT_EQ(s.forgetting.forg_inc, 0.0);
  EXPECT_EQ(s.accuracy.acc_final, r.accuracy.at(0, 0));
  EXPECT_FALSE(r.bn_kld[0].has_value());
  EXPECT_GT(r.accuracy.at(0, 0), 0.5);  // better than chance
}

TEST(RunStream, ResultShapes) {
  const auto stream = testkit::blob_stream(5, 3, 0.1);
  const auto r = cil::run_stream(stream, mlp(), quick_config(StrategyKind::TA), 3);
  ASSERT_EQ(r.tasks.size(), 3u);
  for (const auto& t : r.tasks) EXPECT_EQ(t.ce.size(), 4u);
  EXPECT_TRUE(r.tasks[0].cka.empty());
  EXPECT_EQ(r.tasks[1].cka.size(), 4u);
  EXPECT_TRUE(r.bn_kld[1].has_value());
  EXPECT_GE(*r.bn_kld[1], 0.0);
  EXPECT_EQ(r.task_confusion.size(), 3u);
}

TEST(RunStream, WithoutNormalizationAdaptationEqualsFrozen) {
  const auto stream = testkit::blob_stream(6, 3, 0.2);
  const auto frozen = cil::run_stream(stream, mlp(nn::NormKind::None), quick_config(), 5);
  const auto adapted = cil::run_stream(stream, mlp(nn::NormKind::None), quick_config(StrategyKind::TA), 5);
  EXPECT_EQ(frozen.accuracy, adapted.accuracy);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(frozen.tasks[t].ce, adapted.tasks[t].ce);
    EXPECT_EQ(frozen.tasks[t].kd, adapted.tasks[t].kd);
  }
  EXPECT_FALSE(frozen.bn_kld[2].has_value());
}

TEST(RunStream, RejectsOverlappingTasksAndPreheadedModels) {
  auto stream = testkit::blob_stream(5, 2);
  auto m = mlp();
  nn::add_task_head(m, 2, nn::HeadInit::Zeros, 0);
  EXPECT_THROW(cil::run_stream(stream, m, quick_config(), 1), ContractError);
  stream.tasks[1].classes = stream.tasks[0].classes;
  EXPECT_THROW(cil::run_stream(stream, mlp(), quick_config(), 1), ConsistencyError);
}

TEST(RunStream, WarmupAndAnclRun) {
  const auto stream = testkit::blob_stream(5, 2, 0.1);
  auto cfg = quick_config(StrategyKind::TA);
  cfg.kd.variant = distill::KDVariant::ANCL;
  cfg.warmup.enabled = true;
  cfg.warmup.max_epochs = 10;
  cfg.warmup.ramp_epochs = 2;
  const auto r = cil::run_stream(stream, mlp(), cfg, 2);
  EXPECT_TRUE(r.tasks[0].warmup_loss.empty());
  EXPECT_FALSE(r.tasks[1].warmup_loss.empty());
  EXPECT_GT(r.tasks[1].kd.back(), 0.0);
}
