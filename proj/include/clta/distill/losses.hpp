#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "clta/autodiff/tape.hpp"
#include "clta/nn/model.hpp"

namespace clta::distill {

enum class KDVariant { None, GKD, TKD, MKD, ANCL };

std::string_view to_string(KDVariant variant);
std::optional<KDVariant> parse_kd_variant(std::string_view name);

struct KDConfig {
  KDVariant variant = KDVariant::GKD;
  double temperature = 2.0;  // unused by MKD
  double lambda = 10.0;
  std::optional<double> lambda_aux;  // ANCL only; defaults to lambda

  double aux_weight() const { return lambda_aux.value_or(lambda); }
  void validate() const;
};

// Teacher logits are plain tensors: they enter the student's graph as
// constants, so no gradient can flow back into the teacher.

// Global KD over the old-class axis: mean_b -sum_i p_i log p_hat_i with
// temperature softmax on both sides.
ad::Var gkd_loss(ad::Var student_old, const ad::Tensor& teacher_old, double temperature);

struct TaskLogitPair {
  ad::Var student;
  ad::Tensor teacher;
};

// Task-wise KD: sum over tasks of KL(p || p_hat), each averaged over the batch.
ad::Var tkd_loss(std::span<const TaskLogitPair> pairs, double temperature);

// Element-wise sigmoid KD: mean_b -sum_i sigmoid(t_i) log sigmoid(s_i).
ad::Var mkd_loss(ad::Var student_old, const ad::Tensor& teacher_old);

// lambda * GKD(old columns vs main teacher)
//   + lambda_aux * GKD-form(current columns vs auxiliary network).
// `student_all` holds old columns first, then the current task's columns.
ad::Var ancl_loss(ad::Var student_all, const ad::Tensor& main_teacher_old, const ad::Tensor* aux_current,
                  const KDConfig& cfg);

ad::Var total_loss(ad::Var ce, ad::Var kd, double lambda);
double total_loss(double ce, double kd, double lambda);

/// The KD part of one training step. The objective is ce + weight * value;
/// for ANCL the weights live inside `value` and `weight` is 1.
struct KDTerm {
  ad::Var value;
  double weight = 0.0;
};

// Builds the variant's KD term for a student on heads [0, t] against
// teacher logits for heads [0, t). With no teacher heads (first task) or
// KDVariant::None the term is a constant zero.
KDTerm kd_term(ad::Tape& tape, const KDConfig& cfg, const nn::ForwardOutput& student,
               std::span<const ad::Tensor> teacher_heads, const ad::Tensor* aux_current);

// Side-by-side concatenation of row-aligned logit tensors.
ad::Tensor concat_columns(std::span<const ad::Tensor> parts);

}  // namespace clta::distill
