#pragma once

#include <cstddef>
#include <vector>

#include "clta/autodiff/tensor.hpp"
#include "clta/data/stream.hpp"
#include "clta/nn/model.hpp"

namespace clta::metrics {

/// a(k, j): accuracy on task j's test data after training task k, j <= k.
/// Indices are 0-based here.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t tasks);
  // Rows must be lower-triangular: row k has k + 1 entries.
  static AccuracyMatrix from_rows(std::vector<std::vector<double>> rows);

  std::size_t tasks() const noexcept { return rows_.size(); }
  double at(std::size_t k, std::size_t j) const;
  void set(std::size_t k, std::size_t j, double value);
  const std::vector<std::vector<double>>& rows() const noexcept { return rows_; }

  bool operator==(const AccuracyMatrix&) const = default;

 private:
  std::vector<std::vector<double>> rows_;
};

struct AccuracySummary {
  std::vector<double> per_task;  // A_k, mean of row k
  double acc_inc = 0.0;          // mean of A_k
  double acc_final = 0.0;        // A_n
};

struct ForgettingSummary {
  std::vector<double> per_task;  // F_k; the first entry is 0 (nothing to forget yet)
  double forg_inc = 0.0;         // mean of F_k over k >= 2
  double forg_final = 0.0;       // F_n
};

struct MetricsReport {
  AccuracySummary accuracy;
  ForgettingSummary forgetting;
};

AccuracySummary accuracy_metrics(const AccuracyMatrix& m);
// f(k, j) = max over l in [j, k-1] of a(l, j) - a(k, j); F_k = mean over j < k.
ForgettingSummary forgetting_metrics(const AccuracyMatrix& m);
MetricsReport summarize(const AccuracyMatrix& m);

// argmax over the concatenated head logits, lowest index on ties.
std::vector<std::size_t> argmax_rows(const ad::Tensor& logits);
std::vector<std::size_t> predict(nn::IncrementalModel& model, const data::Dataset& data, std::size_t batch_size = 256);
// Fraction of samples whose predicted stream column equals the label.
double evaluate_task_agnostic(nn::IncrementalModel& model, const data::Dataset& data);

// counts(i, j): samples of task i predicted into task j's columns.
std::vector<std::vector<std::size_t>> task_confusion(nn::IncrementalModel& model, const data::TaskStream& stream);

// Backbone features (pre-head) of the first `max_samples` samples, Eval mode.
ad::Tensor extract_features(nn::IncrementalModel& model, const ad::Tensor& inputs);

// Linear CKA between (n, d1) and (n, d2) feature matrices.
double linear_cka(const ad::Tensor& x, const ad::Tensor& y);

// Mean closed-form KL(N_a || N_b) over every channel of every BN layer,
// using running (mean, var) as the Gaussian parameters.
double bn_stats_kld(const nn::IncrementalModel& a, const nn::IncrementalModel& b);

}  // namespace clta::metrics
