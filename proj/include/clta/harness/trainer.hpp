#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "clta/data/stream.hpp"
#include "clta/distill/losses.hpp"
#include "clta/distill/teacher.hpp"
#include "clta/harness/schedule.hpp"
#include "clta/metrics/metrics.hpp"
#include "clta/nn/model.hpp"

namespace clta::cil {

struct RunConfig {
  distill::KDConfig kd;
  distill::TeacherStrategy strategy;
  TrainConfig train;
  WarmupConfig warmup;
  nn::HeadInit head_init = nn::HeadInit::KaimingUniform;
  // Per-epoch teacher/student feature similarity on a fixed probe of
  // new-task training samples (tasks after the first).
  bool track_cka = true;
  std::size_t cka_samples = 256;

  void validate() const;
};

struct TaskTrace {
  std::vector<double> ce;   // per-epoch mean cross-entropy
  std::vector<double> kd;   // per-epoch mean KD term (unweighted; ANCL includes its weights)
  std::vector<double> cka;  // per-epoch teacher/student CKA; empty on the first task
  std::vector<double> warmup_loss;
};

struct RunResult {
  std::uint64_t seed = 0;
  metrics::AccuracyMatrix accuracy;
  std::vector<TaskTrace> tasks;
  // Teacher/student BN-statistics KLD at the end of each task; absent on
  // the first task and for models without BN.
  std::vector<std::optional<double>> bn_kld;
  std::vector<std::vector<std::size_t>> task_confusion;
  double wall_seconds = 0.0;
};

struct WarmupResult {
  std::size_t epochs_run = 0;
  double initial_loss = 0.0;
  std::vector<double> loss_trace;
};

// Trains only the newest head on frozen backbone features (Eval mode, so
// BN statistics stay put) with the one-cycle schedule; stops after
// `early_stop_patience` epochs without a lower training loss.
WarmupResult warmup_head(nn::IncrementalModel& model, const data::Dataset& task_train, std::size_t column_offset,
                         const WarmupConfig& cfg, std::size_t batch_size, std::uint64_t seed, std::size_t task_index);

struct TaskContext {
  std::size_t task_index = 0;  // 0-based
  std::uint64_t seed = 0;
};

// One task of the protocol. The model must already carry the task's head;
// the teacher must be present exactly when task_index > 0.
TaskTrace train_task(nn::IncrementalModel& model, nn::TeacherSnapshot* teacher, const data::TaskRecord& task,
                     const RunConfig& cfg, const TaskContext& ctx);

// Runs every task in order: add head, train, evaluate on every test split
// seen so far, snapshot the teacher. `model` must have no heads yet.
RunResult run_stream(const data::TaskStream& stream, nn::IncrementalModel model, const RunConfig& cfg,
                     std::uint64_t seed);

}  // namespace clta::cil
