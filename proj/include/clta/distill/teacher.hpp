#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "clta/data/dataset.hpp"
#include "clta/nn/model.hpp"

namespace clta::distill {

enum class StrategyKind { FrozenTeacher, TA, CT_FM, CT_BN, P_FM, P_BN, FixBN };

std::string_view to_string(StrategyKind kind);
std::optional<StrategyKind> parse_strategy_kind(std::string_view name);

struct TeacherStrategy {
  StrategyKind kind = StrategyKind::FrozenTeacher;
  // Defaults follow the best reported settings for the continuous and
  // pretraining alternatives.
  double teacher_lr = 1e-7;
  std::size_t pretrain_epochs = 5;
  // Which statistics a TA forward normalizes with.
  nn::AdaptForward ta_forward = nn::AdaptForward::BatchStats;

  bool pretrains() const { return kind == StrategyKind::P_FM || kind == StrategyKind::P_BN; }
  bool continuous() const { return kind == StrategyKind::CT_FM || kind == StrategyKind::CT_BN; }
  bool trains_teacher() const { return pretrains() || continuous(); }
  bool norm_only() const { return kind == StrategyKind::P_BN || kind == StrategyKind::CT_BN; }
  // Strategies under which the snapshot must stay bit-identical during a task.
  bool freezes_teacher() const { return kind == StrategyKind::FrozenTeacher || kind == StrategyKind::FixBN; }
  void validate() const;
};

struct TeacherOutput {
  std::vector<ad::Tensor> heads;  // logits of the first `num_heads` heads
  std::optional<ad::Tensor> features;
};

// Runs the teacher on a batch. TA uses AdaptStats (running statistics move,
// nothing else); every other kind runs in Eval mode. Outputs are plain
// values and never carry gradients.
TeacherOutput teacher_forward(nn::TeacherSnapshot* snapshot, const ad::Tensor& x, const TeacherStrategy& strategy,
                              std::size_t num_heads, bool capture_features = false);

// Gives the teacher a private copy of the student's new head so the
// pretraining / continuous kinds have something to compute CE with. KD
// never reads this head.
void attach_scratch_head(nn::TeacherSnapshot& snapshot, const nn::DenseLayer& head);

// Sets the TA forward rule on every BN layer of the snapshot.
void configure_adaptation(nn::TeacherSnapshot& snapshot, nn::AdaptForward rule);

// One SGD step on teacher CE for a batch, training the last head's task.
// CT_* kinds only. `local_labels` index into the last head.
void teacher_continuous_step(nn::TeacherSnapshot& snapshot, const ad::Tensor& x,
                             std::span<const std::size_t> local_labels, const TeacherStrategy& strategy,
                             std::optional<double> grad_clip);

struct PretrainOptions {
  std::size_t batch_size = 128;
  std::optional<double> grad_clip;
  std::uint64_t seed = 0;
  std::size_t task_index = 0;
};

// pretrain_epochs passes of SGD on teacher CE over new-task data before the
// student starts. P_* kinds only. Labels of `task_train` are stream columns;
// `column_offset` maps them onto the last head.
void teacher_pretrain(nn::TeacherSnapshot& snapshot, const data::Dataset& task_train, std::size_t column_offset,
                      const TeacherStrategy& strategy, const PretrainOptions& options);

// Mean teacher CE of the last head on a dataset, Eval mode.
double teacher_head_loss(nn::TeacherSnapshot& snapshot, const data::Dataset& task_train, std::size_t column_offset);

}  // namespace clta::distill
