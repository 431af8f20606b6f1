#include "clta/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <variant>

#include "clta/autodiff/ops.hpp"
#include "clta/errors.hpp"

namespace clta::metrics {

AccuracyMatrix::AccuracyMatrix(std::size_t tasks) {
  rows_.resize(tasks);
  for (std::size_t k = 0; k < tasks; ++k) rows_[k].assign(k + 1, 0.0);
}

AccuracyMatrix AccuracyMatrix::from_rows(std::vector<std::vector<double>> rows) {
  AccuracyMatrix m(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].size() != k + 1) {
      throw DimensionError("accuracy matrix row " + std::to_string(k + 1) + " must have " + std::to_string(k + 1) +
                           " entries");
    }
    for (std::size_t j = 0; j <= k; ++j) m.set(k, j, rows[k][j]);
  }
  return m;
}

double AccuracyMatrix::at(std::size_t k, std::size_t j) const {
  if (k >= rows_.size() || j > k) throw IndexError("accuracy matrix entry outside the lower triangle");
  return rows_[k][j];
}

void AccuracyMatrix::set(std::size_t k, std::size_t j, double value) {
  if (k >= rows_.size() || j > k) throw IndexError("accuracy matrix entry outside the lower triangle");
  if (!(value >= 0.0 && value <= 1.0)) throw ParameterError("accuracy must lie in [0, 1]");
  rows_[k][j] = value;
}

AccuracySummary accuracy_metrics(const AccuracyMatrix& m) {
  AccuracySummary out;
  const std::size_t n = m.tasks();
  if (n == 0) return out;
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double row = 0.0;
    for (std::size_t j = 0; j <= k; ++j) row += m.at(k, j);
    out.per_task.push_back(row / static_cast<double>(k + 1));
    total += out.per_task.back();
  }
  out.acc_inc = total / static_cast<double>(n);
  out.acc_final = out.per_task.back();
  return out;
}

ForgettingSummary forgetting_metrics(const AccuracyMatrix& m) {
  ForgettingSummary out;
  const std::size_t n = m.tasks();
  if (n == 0) return out;
  out.per_task.assign(n, 0.0);
  double total = 0.0;
  for (std::size_t k = 1; k < n; ++k) {
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double best = m.at(j, j);
      for (std::size_t l = j + 1; l < k; ++l) best = std::max(best, m.at(l, j));
      sum += best - m.at(k, j);
    }
    out.per_task[k] = sum / static_cast<double>(k);
    total += out.per_task[k];
  }
  if (n > 1) out.forg_inc = total / static_cast<double>(n - 1);
  out.forg_final = out.per_task.back();
  return out;
}

MetricsReport summarize(const AccuracyMatrix& m) { return {accuracy_metrics(m), forgetting_metrics(m)}; }

std::vector<std::size_t> argmax_rows(const ad::Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects (batch, classes)");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (logits[r * cols + c] > logits[r * cols + best]) best = c;
    }
    out[r] = best;
  }
  return out;
}

std::vector<std::size_t> predict(nn::IncrementalModel& model, const data::Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw DataError("cannot evaluate on an empty dataset");
  if (model.num_heads() == 0) throw ContractError("model has no heads to predict with");
  if (batch_size == 0) throw ParameterError("batch size must be positive");
  std::vector<std::size_t> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    ad::Tape tape;
    tape.set_grad_enabled(false);
    auto fwd = nn::model_forward(tape, model, tape.constant(data.batch(idx)), nn::NormMode::Eval);
    auto pred = argmax_rows(fwd.all_logits().value());
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

double evaluate_task_agnostic(nn::IncrementalModel& model, const data::Dataset& data) {
  const auto pred = predict(model, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<std::vector<std::size_t>> task_confusion(nn::IncrementalModel& model, const data::TaskStream& stream) {
  const std::size_t n = stream.size();
  std::vector<std::vector<std::size_t>> counts(n, std::vector<std::size_t>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (auto column : predict(model, stream.tasks[i].test)) ++counts[i][stream.task_of_column(column)];
  }
  return counts;
}

ad::Tensor extract_features(nn::IncrementalModel& model, const ad::Tensor& inputs) {
  ad::Tape tape;
  tape.set_grad_enabled(false);
  return nn::backbone_forward(tape.constant(inputs), model, nn::NormMode::Eval).value();
}

namespace {

// Column-centered copy of an (n, d) matrix.
std::vector<double> centered(const ad::Tensor& m) {
  const std::size_t n = m.dim(0), d = m.dim(1);
  std::vector<double> out(m.values().begin(), m.values().end());
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += out[r * d + c];
    mean /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) out[r * d + c] -= mean;
  }
  return out;
}

// Frobenius norm squared of A^T B for A (n, da), B (n, db).
double cross_frobenius_sq(const std::vector<double>& a, std::size_t da, const std::vector<double>& b, std::size_t db,
                          std::size_t n) {
  double total = 0.0;
  std::vector<double> col(db);
  for (std::size_t i = 0; i < da; ++i) {
    std::fill(col.begin(), col.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const double av = a[r * da + i];
      for (std::size_t j = 0; j < db; ++j) col[j] += av * b[r * db + j];
    }
    for (double v : col) total += v * v;
  }
  return total;
}

}  // namespace

double linear_cka(const ad::Tensor& x, const ad::Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2) throw DimensionError("linear_cka expects (n, d) matrices");
  if (x.dim(0) != y.dim(0)) throw DimensionError("linear_cka: sample counts differ");
  const std::size_t n = x.dim(0);
  if (n < 2) throw DataError("linear_cka needs at least two samples");
  const auto xc = centered(x);
  const auto yc = centered(y);
  const double xx = cross_frobenius_sq(xc, x.dim(1), xc, x.dim(1), n);
  const double yy = cross_frobenius_sq(yc, y.dim(1), yc, y.dim(1), n);
  if (xx == 0.0 || yy == 0.0) throw DataError("linear_cka: zero-variance input");
  // Symmetric in the two arguments: the cross term is the same sum either way.
  const double xy = x.dim(1) <= y.dim(1) ? cross_frobenius_sq(xc, x.dim(1), yc, y.dim(1), n)
                                         : cross_frobenius_sq(yc, y.dim(1), xc, x.dim(1), n);
  return xy / (std::sqrt(xx) * std::sqrt(yy));
}

double bn_stats_kld(const nn::IncrementalModel& a, const nn::IncrementalModel& b) {
  if (a.backbone.size() != b.backbone.size()) throw ContractError("bn_stats_kld: models differ in depth");
  double total = 0.0;
  std::size_t channels = 0;
  for (std::size_t i = 0; i < a.backbone.size(); ++i) {
    if (a.backbone[i].index() != b.backbone[i].index()) throw ContractError("bn_stats_kld: layer types differ");
    const auto* la = std::get_if<nn::BatchNormLayer>(&a.backbone[i]);
    if (!la) continue;
    const auto& lb = std::get<nn::BatchNormLayer>(b.backbone[i]);
    if (la->num_features != lb.num_features) throw ContractError("bn_stats_kld: channel counts differ");
    for (std::size_t c = 0; c < la->num_features; ++c) {
      const double mu_a = la->running_mean[c], mu_b = lb.running_mean[c];
      const double var_a = la->running_var[c], var_b = lb.running_var[c];
      if (!(var_a > 0.0) || !(var_b > 0.0)) throw StateError("bn_stats_kld: non-positive running variance");
      const double d = mu_a - mu_b;
      total += 0.5 * std::log(var_b / var_a) + (var_a + d * d) / (2.0 * var_b) - 0.5;
      ++channels;
    }
  }
  if (channels == 0) throw ContractError("bn_stats_kld: no batch-norm layers");
  return total / static_cast<double>(channels);
}

}  // namespace clta::metrics
