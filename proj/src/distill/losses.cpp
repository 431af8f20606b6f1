#include "clta/distill/losses.hpp"

#include <cmath>
#include <string>

#include "clta/autodiff/ops.hpp"
#include "clta/errors.hpp"

namespace clta::distill {

std::string_view to_string(KDVariant variant) {
  switch (variant) {
    case KDVariant::None: return "none";
    case KDVariant::GKD: return "gkd";
    case KDVariant::TKD: return "tkd";
    case KDVariant::MKD: return "mkd";
    case KDVariant::ANCL: return "ancl";
  }
  return "unknown";
}

std::optional<KDVariant> parse_kd_variant(std::string_view name) {
  for (auto v : {KDVariant::None, KDVariant::GKD, KDVariant::TKD, KDVariant::MKD, KDVariant::ANCL}) {
    if (name == to_string(v)) return v;
  }
  return std::nullopt;
}

void KDConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValidationError("kd.temperature", "must be > 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("kd.lambda", "must be >= 0");
  if (lambda_aux && (!(*lambda_aux >= 0.0) || !std::isfinite(*lambda_aux))) {
    throw ValidationError("kd.lambda_aux", "must be >= 0");
  }
}

namespace {

void require_matching(const char* op, const ad::Var& student, const ad::Tensor& teacher) {
  if (student.shape().size() != 2) throw ContractError(std::string(op) + ": student logits must be (batch, classes)");
  if (student.shape() != teacher.shape()) {
    throw ContractError(std::string(op) + ": student " + ad::shape_string(student.shape()) + " vs teacher " +
                        ad::shape_string(teacher.shape()));
  }
}

ad::Tensor rank0(double v) { return ad::Tensor({}, {v}); }

// -1/B sum_b sum_i p log p_hat, with d/dz = (p_hat - p) / (B T) since rows of p sum to 1.
ad::Var soft_cross_entropy(const char* op, ad::Var student, const ad::Tensor& teacher, double temperature,
                           bool subtract_entropy) {
  require_matching(op, student, teacher);
  if (!(temperature > 0.0)) throw ParameterError(std::string(op) + ": temperature must be positive");
  const std::size_t rows = teacher.dim(0);
  const ad::Tensor p = ad::softmax_rows(teacher, temperature);
  const ad::Tensor logp = ad::log_softmax_rows(teacher, temperature);
  const ad::Tensor logq = ad::log_softmax_rows(student.value(), temperature);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    // Terms with p == 0 contribute nothing; this also keeps 0 * log 0 out.
    if (p[i] == 0.0) continue;
    total += subtract_entropy ? p[i] * (logp[i] - logq[i]) : -p[i] * logq[i];
  }
  const double batch = static_cast<double>(rows);
  return student.tape().record(op, rank0(total / batch), {student},
                               [p, logq, batch, temperature](ad::BackwardContext& ctx) {
                                 const double g = ctx.grad_output()[0] / (batch * temperature);
                                 auto gz = ctx.input_grad(0);
                                 for (std::size_t i = 0; i < p.size(); ++i) gz[i] += g * (std::exp(logq[i]) - p[i]);
                               });
}

double log_sigmoid_value(double v) { return std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v))); }

double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

ad::Var gkd_loss(ad::Var student_old, const ad::Tensor& teacher_old, double temperature) {
  return soft_cross_entropy("gkd_loss", student_old, teacher_old, temperature, false);
}

ad::Var tkd_loss(std::span<const TaskLogitPair> pairs, double temperature) {
  if (pairs.empty()) throw ContractError("tkd_loss: no previous tasks to distill");
  ad::Var total = soft_cross_entropy("tkd_loss", pairs[0].student, pairs[0].teacher, temperature, true);
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    if (&pairs[i].student.tape() != &total.tape()) throw ContractError("tkd_loss: pairs live on different tapes");
    total = ad::add(total, soft_cross_entropy("tkd_loss", pairs[i].student, pairs[i].teacher, temperature, true));
  }
  return total;
}

ad::Var mkd_loss(ad::Var student_old, const ad::Tensor& teacher_old) {
  require_matching("mkd_loss", student_old, teacher_old);
  const std::size_t n = teacher_old.size();
  const double batch = static_cast<double>(teacher_old.dim(0));
  std::vector<double> target(n), student_sig(n);
  double total = 0.0;
  const auto s = student_old.value().values();
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = sigmoid_value(teacher_old[i]);
    student_sig[i] = sigmoid_value(s[i]);
    total -= target[i] * log_sigmoid_value(s[i]);
  }
  return student_old.tape().record("mkd_loss", rank0(total / batch), {student_old},
                                   [target, student_sig, batch](ad::BackwardContext& ctx) {
                                     // d/ds [-t log sigmoid(s)] = -t (1 - sigmoid(s))
                                     const double g = ctx.grad_output()[0] / batch;
                                     auto gz = ctx.input_grad(0);
                                     for (std::size_t i = 0; i < target.size(); ++i) {
                                       gz[i] -= g * target[i] * (1.0 - student_sig[i]);
                                     }
                                   });
}

ad::Var ancl_loss(ad::Var student_all, const ad::Tensor& main_teacher_old, const ad::Tensor* aux_current,
                  const KDConfig& cfg) {
  if (aux_current == nullptr) throw ContractError("ancl_loss: auxiliary network output missing");
  if (student_all.shape().size() != 2 || main_teacher_old.rank() != 2 || aux_current->rank() != 2) {
    throw ContractError("ancl_loss: logits must be (batch, classes)");
  }
  const std::size_t old_cols = main_teacher_old.dim(1);
  const std::size_t total_cols = student_all.shape()[1];
  if (old_cols + aux_current->dim(1) != total_cols) {
    throw ContractError("ancl_loss: teacher columns do not partition the student's columns");
  }
  ad::Var old_part = ad::slice_columns(student_all, 0, old_cols);
  ad::Var cur_part = ad::slice_columns(student_all, old_cols, total_cols);
  ad::Var main_term = ad::scale(gkd_loss(old_part, main_teacher_old, cfg.temperature), cfg.lambda);
  ad::Var aux_term = ad::scale(gkd_loss(cur_part, *aux_current, cfg.temperature), cfg.aux_weight());
  return ad::add(main_term, aux_term);
}

ad::Var total_loss(ad::Var ce, ad::Var kd, double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("total_loss: lambda must be >= 0");
  return ad::add(ce, ad::scale(kd, lambda));
}

double total_loss(double ce, double kd, double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("total_loss: lambda must be >= 0");
  return ce + lambda * kd;
}

ad::Tensor concat_columns(std::span<const ad::Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_columns: nothing to concatenate");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) throw DimensionError("concat_columns: row counts differ");
    cols += p.dim(1);
  }
  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) out[r * cols + offset + c] = p[r * w + c];
    }
    offset += w;
  }
  return ad::Tensor({rows, cols}, std::move(out), ad::Tensor::Unchecked{});
}

KDTerm kd_term(ad::Tape& tape, const KDConfig& cfg, const nn::ForwardOutput& student,
               std::span<const ad::Tensor> teacher_heads, const ad::Tensor* aux_current) {
  const std::size_t old = teacher_heads.size();
  if (old == 0 || cfg.variant == KDVariant::None) return {tape.constant(rank0(0.0)), 0.0};
  if (student.head_logits.size() <= old) throw ContractError("kd_term: student lacks a head for the current task");
  switch (cfg.variant) {
    case KDVariant::GKD:
      return {gkd_loss(student.head_range(0, old), concat_columns(teacher_heads), cfg.temperature), cfg.lambda};
    case KDVariant::TKD: {
      std::vector<TaskLogitPair> pairs;
      for (std::size_t j = 0; j < old; ++j) pairs.push_back({student.head_logits[j], teacher_heads[j]});
      return {tkd_loss(pairs, cfg.temperature), cfg.lambda};
    }
    case KDVariant::MKD:
      return {mkd_loss(student.head_range(0, old), concat_columns(teacher_heads)), cfg.lambda};
    case KDVariant::ANCL:
      return {ancl_loss(student.head_range(0, old + 1), concat_columns(teacher_heads), aux_current, cfg), 1.0};
    case KDVariant::None: break;
  }
  return {tape.constant(rank0(0.0)), 0.0};
}

}  // namespace clta::distill
