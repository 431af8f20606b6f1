#include "gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>

#include "clta/autodiff/gradcheck.hpp"
#include "clta/autodiff/ops.hpp"
#include "clta/distill/losses.hpp"
#include "clta/nn/normalization.hpp"

namespace clta::testkit {

namespace {

using ad::Tape;
using ad::Tensor;
using ad::Var;

ad::Shape random_shape(Gen& g, std::size_t min_rank, std::size_t max_rank, std::size_t max_dim = 4) {
  ad::Shape s(uniform_size(g, min_rank, max_rank));
  for (auto& d : s) d = uniform_size(g, 1, max_dim);
  return s;
}

// Case whose slots are plain tensors owned by the case itself.
struct Owned {
  std::vector<Tensor> tensors;
};

GradCase owned_case(std::vector<Tensor> tensors, std::function<Var(Tape&, std::vector<Var>&)> body) {
  auto state = std::make_shared<Owned>();
  state->tensors = std::move(tensors);
  GradCase c;
  for (auto& t : state->tensors) c.slots.push_back(&t);
  Owned* raw = state.get();
  c.build = [raw, body = std::move(body)](Tape& tape) {
    std::vector<Var> vars;
    for (auto& t : raw->tensors) vars.push_back(tape.leaf(t));
    return body(tape, vars);
  };
  c.state = std::move(state);
  return c;
}

GradCase unary(Gen& g, double lo, double hi, Var (*op)(Var)) {
  return owned_case({random_tensor(g, random_shape(g, 1, 3), lo, hi)},
                    [op](Tape&, std::vector<Var>& v) { return op(v[0]); });
}

Tensor logits(Gen& g, std::size_t rows, std::size_t cols, double spread = 2.0) {
  return random_tensor(g, {rows, cols}, -spread, spread);
}

std::vector<GradOp> primitive_ops() {
  std::vector<GradOp> ops;
  ops.push_back({"matmul", [](Gen& g) {
                   const auto n = uniform_size(g, 1, 4), k = uniform_size(g, 1, 4), m = uniform_size(g, 1, 4);
                   return owned_case({random_tensor(g, {n, k}), random_tensor(g, {k, m})},
                                     [](Tape&, std::vector<Var>& v) { return ad::matmul(v[0], v[1]); });
                 }});
  ops.push_back({"conv2d", [](Gen& g) {
                   ad::Conv2dOptions opt;
                   opt.stride = uniform_size(g, 1, 2);
                   opt.padding = uniform_size(g, 0, 1);
                   const auto b = uniform_size(g, 1, 2), cin = uniform_size(g, 1, 2), cout = uniform_size(g, 1, 3);
                   const auto h = uniform_size(g, 3, 5), w = uniform_size(g, 3, 5);
                   const auto k = uniform_size(g, 1, 3);
                   return owned_case({random_tensor(g, {b, cin, h, w}), random_tensor(g, {cout, cin, k, k})},
                                     [opt](Tape&, std::vector<Var>& v) { return ad::conv2d(v[0], v[1], opt); });
                 }});
  ops.push_back({"add", [](Gen& g) {
                   const auto s = random_shape(g, 1, 3);
                   return owned_case({random_tensor(g, s), random_tensor(g, s)},
                                     [](Tape&, std::vector<Var>& v) { return ad::add(v[0], v[1]); });
                 }});
  ops.push_back({"sub", [](Gen& g) {
                   const auto s = random_shape(g, 1, 3);
                   return owned_case({random_tensor(g, s), random_tensor(g, s)},
                                     [](Tape&, std::vector<Var>& v) { return ad::sub(v[0], v[1]); });
                 }});
  ops.push_back({"mul", [](Gen& g) {
                   const auto s = random_shape(g, 1, 3);
                   return owned_case({random_tensor(g, s), random_tensor(g, s)},
                                     [](Tape&, std::vector<Var>& v) { return ad::mul(v[0], v[1]); });
                 }});
  ops.push_back({"scale", [](Gen& g) {
                   const double f = uniform(g, -3.0, 3.0);
                   return owned_case({random_tensor(g, random_shape(g, 1, 3))},
                                     [f](Tape&, std::vector<Var>& v) { return ad::scale(v[0], f); });
                 }});
  ops.push_back({"add_bias", [](Gen& g) {
                   const auto b = uniform_size(g, 1, 3), c = uniform_size(g, 1, 4);
                   ad::Shape s{b, c};
                   if (uniform(g, 0, 1) < 0.5) {
                     s.push_back(uniform_size(g, 1, 3));
                     s.push_back(uniform_size(g, 1, 3));
                   }
                   return owned_case({random_tensor(g, s), random_tensor(g, {c})},
                                     [](Tape&, std::vector<Var>& v) { return ad::add_bias(v[0], v[1]); });
                 }});
  ops.push_back({"relu", [](Gen& g) {
                   return owned_case({random_tensor_off_zero(g, random_shape(g, 1, 3))},
                                     [](Tape&, std::vector<Var>& v) { return ad::relu(v[0]); });
                 }});
  ops.push_back({"sigmoid", [](Gen& g) { return unary(g, -3, 3, ad::sigmoid); }});
  ops.push_back({"log_sigmoid", [](Gen& g) { return unary(g, -3, 3, ad::log_sigmoid); }});
  ops.push_back({"log", [](Gen& g) { return unary(g, 0.2, 2.0, ad::log); }});
  ops.push_back({"exp", [](Gen& g) { return unary(g, -2, 2, ad::exp); }});
  ops.push_back({"sum", [](Gen& g) { return unary(g, -1, 1, ad::sum); }});
  ops.push_back({"mean", [](Gen& g) { return unary(g, -1, 1, ad::mean); }});
  ops.push_back({"avg_pool2d", [](Gen& g) {
                   ad::Pool2dOptions opt;
                   opt.kernel_h = uniform_size(g, 1, 2);
                   opt.kernel_w = uniform_size(g, 1, 2);
                   opt.stride = uniform_size(g, 1, 2);
                   const ad::Shape s{uniform_size(g, 1, 2), uniform_size(g, 1, 2), uniform_size(g, 2, 5),
                                     uniform_size(g, 2, 5)};
                   return owned_case({random_tensor(g, s)},
                                     [opt](Tape&, std::vector<Var>& v) { return ad::avg_pool2d(v[0], opt); });
                 }});
  ops.push_back({"global_avg_pool", [](Gen& g) {
                   const ad::Shape s{uniform_size(g, 1, 3), uniform_size(g, 1, 3), uniform_size(g, 1, 4),
                                     uniform_size(g, 1, 4)};
                   return owned_case({random_tensor(g, s)},
                                     [](Tape&, std::vector<Var>& v) { return ad::global_avg_pool(v[0]); });
                 }});
  ops.push_back({"flatten", [](Gen& g) {
                   return owned_case({random_tensor(g, random_shape(g, 2, 4, 3))},
                                     [](Tape&, std::vector<Var>& v) { return ad::flatten(v[0]); });
                 }});
  ops.push_back({"concat", [](Gen& g) {
                   const auto rows = uniform_size(g, 1, 3);
                   std::vector<Tensor> parts(uniform_size(g, 1, 3));
                   for (auto& p : parts) p = random_tensor(g, {rows, uniform_size(g, 1, 3)});
                   return owned_case(std::move(parts),
                                     [](Tape&, std::vector<Var>& v) { return ad::concat_columns(v); });
                 }});
  ops.push_back({"slice_columns", [](Gen& g) {
                   const auto cols = uniform_size(g, 1, 5);
                   const auto begin = uniform_size(g, 0, cols - 1);
                   const auto end = uniform_size(g, begin + 1, cols);
                   return owned_case({random_tensor(g, {uniform_size(g, 1, 3), cols})},
                                     [begin, end](Tape&, std::vector<Var>& v) {
                                       return ad::slice_columns(v[0], begin, end);
                                     });
                 }});
  ops.push_back({"softmax_temperature", [](Gen& g) {
                   const double t = uniform(g, 0.5, 4.0);
                   return owned_case({logits(g, uniform_size(g, 1, 3), uniform_size(g, 1, 5))},
                                     [t](Tape&, std::vector<Var>& v) { return ad::softmax_temperature(v[0], t); });
                 }});
  ops.push_back({"log_softmax_temperature", [](Gen& g) {
                   const double t = uniform(g, 0.5, 4.0);
                   return owned_case({logits(g, uniform_size(g, 1, 3), uniform_size(g, 1, 5))},
                                     [t](Tape&, std::vector<Var>& v) {
                                       return ad::log_softmax_temperature(v[0], t);
                                     });
                 }});
  ops.push_back({"cross_entropy", [](Gen& g) {
                   const auto rows = uniform_size(g, 1, 4), cols = uniform_size(g, 1, 5);
                   std::vector<std::size_t> labels(rows);
                   for (auto& l : labels) l = uniform_size(g, 0, cols - 1);
                   return owned_case({logits(g, rows, cols)}, [labels](Tape&, std::vector<Var>& v) {
                     return ad::cross_entropy(v[0], labels);
                   });
                 }});

  struct BnState {
    Tensor x;
    nn::BatchNormLayer layer;
  };
  ops.push_back({"batchnorm", [](Gen& g) {
                   auto state = std::make_shared<BnState>();
                   const auto c = uniform_size(g, 1, 3);
                   ad::Shape s{uniform_size(g, 3, 6), c};
                   if (uniform(g, 0, 1) < 0.5) {
                     s.push_back(uniform_size(g, 1, 3));
                     s.push_back(uniform_size(g, 1, 3));
                   }
                   state->x = random_tensor(g, s);
                   state->layer = nn::BatchNormLayer::make(c);
                   state->layer.gamma = random_tensor(g, {c}, 0.5, 1.5);
                   state->layer.beta = random_tensor(g, {c});
                   BnState* raw = state.get();
                   GradCase out;
                   out.slots = {&raw->x, &raw->layer.gamma, &raw->layer.beta};
                   out.build = [raw](Tape& tape) {
                     return nn::batchnorm_forward(tape.leaf(raw->x), raw->layer, nn::NormMode::Train);
                   };
                   out.state = std::move(state);
                   return out;
                 }});

  struct AltState {
    Tensor x;
    nn::AltNormLayer layer;
  };
  auto altnorm = [](bool group) {
    return [group](Gen& g) {
      auto state = std::make_shared<AltState>();
      const auto groups = group ? uniform_size(g, 1, 2) : 1;
      const auto c = groups * uniform_size(g, 1, 2);
      ad::Shape s{uniform_size(g, 1, 3), c};
      if (group || uniform(g, 0, 1) < 0.5) {
        s.push_back(uniform_size(g, 2, 3));
        s.push_back(uniform_size(g, 1, 3));
      } else if (c == 1) {
        s[1] = 2;  // a single feature has no spread to normalize
      }
      state->x = random_tensor(g, s);
      state->layer = group ? nn::AltNormLayer::group_norm(s[1], groups) : nn::AltNormLayer::layer_norm(s[1]);
      state->layer.gamma = random_tensor(g, {s[1]}, 0.5, 1.5);
      state->layer.beta = random_tensor(g, {s[1]});
      AltState* raw = state.get();
      GradCase out;
      out.slots = {&raw->x, &raw->layer.gamma, &raw->layer.beta};
      out.build = [raw](Tape& tape) { return nn::altnorm_forward(tape.leaf(raw->x), raw->layer); };
      out.state = std::move(state);
      return out;
    };
  };
  ops.push_back({"layer_norm", altnorm(false)});
  ops.push_back({"group_norm", altnorm(true)});
  return ops;
}

std::vector<GradOp> loss_ops() {
  std::vector<GradOp> ops;
  ops.push_back({"gkd_loss", [](Gen& g) {
                   const auto rows = uniform_size(g, 1, 4), cols = uniform_size(g, 1, 5);
                   const Tensor teacher = logits(g, rows, cols, 3.0);
                   const double t = uniform(g, 0.5, 4.0);
                   return owned_case({logits(g, rows, cols, 3.0)}, [teacher, t](Tape&, std::vector<Var>& v) {
                     return distill::gkd_loss(v[0], teacher, t);
                   });
                 }});
  ops.push_back({"tkd_loss", [](Gen& g) {
                   const auto rows = uniform_size(g, 1, 4);
                   const auto tasks = uniform_size(g, 1, 3);
                   std::vector<Tensor> students, teachers;
                   for (std::size_t i = 0; i < tasks; ++i) {
                     const auto cols = uniform_size(g, 1, 4);
                     students.push_back(logits(g, rows, cols, 3.0));
                     teachers.push_back(logits(g, rows, cols, 3.0));
                   }
                   const double t = uniform(g, 0.5, 4.0);
                   return owned_case(std::move(students), [teachers, t](Tape&, std::vector<Var>& v) {
                     std::vector<distill::TaskLogitPair> pairs;
                     for (std::size_t i = 0; i < v.size(); ++i) pairs.push_back({v[i], teachers[i]});
                     return distill::tkd_loss(pairs, t);
                   });
                 }});
  ops.push_back({"mkd_loss", [](Gen& g) {
                   const auto rows = uniform_size(g, 1, 4), cols = uniform_size(g, 1, 5);
                   const Tensor teacher = logits(g, rows, cols, 3.0);
                   return owned_case({logits(g, rows, cols, 3.0)}, [teacher](Tape&, std::vector<Var>& v) {
                     return distill::mkd_loss(v[0], teacher);
                   });
                 }});
  ops.push_back({"ancl_loss", [](Gen& g) {
                   const auto rows = uniform_size(g, 1, 4);
                   const auto old_cols = uniform_size(g, 1, 4), cur_cols = uniform_size(g, 1, 3);
                   const Tensor main_teacher = logits(g, rows, old_cols, 3.0);
                   const Tensor aux = logits(g, rows, cur_cols, 3.0);
                   distill::KDConfig cfg;
                   cfg.variant = distill::KDVariant::ANCL;
                   cfg.temperature = uniform(g, 0.5, 4.0);
                   cfg.lambda = uniform(g, 0.1, 5.0);
                   cfg.lambda_aux = uniform(g, 0.1, 5.0);
                   return owned_case({logits(g, rows, old_cols + cur_cols, 3.0)},
                                     [main_teacher, aux, cfg](Tape&, std::vector<Var>& v) {
                                       return distill::ancl_loss(v[0], main_teacher, &aux, cfg);
                                     });
                 }});
  return ops;
}

Tensor reduction_weights(const ad::Shape& shape) {
  auto w = Tensor::zeros(shape);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 + 0.37 * std::sin(1.7 * static_cast<double>(i) + 0.3);
  return w;
}

double weighted_value(const Tensor& out) {
  const auto w = reduction_weights(out.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
  return s;
}

}  // namespace

std::vector<GradOp> gradcheck_ops() {
  auto ops = primitive_ops();
  for (auto& op : loss_ops()) ops.push_back(std::move(op));
  return ops;
}

double case_max_error(GradCase& c, double h) {
  for (auto* s : c.slots) {
    s->set_requires_grad(true);
    s->clear_grad();
  }
  {
    Tape tape;
    const Var out = c.build(tape);
    const Var w = tape.constant(reduction_weights(out.shape()));
    tape.backward(ad::sum(ad::mul(out, w)));
  }
  double worst = 0.0;
  for (auto* slot : c.slots) {
    const std::vector<double> analytic(slot->grad().begin(), slot->grad().end());
    const Tensor original = *slot;
    auto f = [&](const Tensor& probe) {
      std::copy(probe.values().begin(), probe.values().end(), slot->data().begin());
      Tape tape;
      tape.set_grad_enabled(false);
      const double v = weighted_value(c.build(tape).value());
      std::copy(original.values().begin(), original.values().end(), slot->data().begin());
      return v;
    };
    const auto numeric = ad::finite_difference_oracle(f, original, h);
    worst = std::max(worst, ad::max_relative_error(analytic, numeric));
  }
  return worst;
}

std::vector<GradcheckStats> run_gradcheck_suite(std::size_t cases_per_op, std::uint64_t seed, double h) {
  std::vector<GradcheckStats> out;
  Gen g(seed);
  for (const auto& op : gradcheck_ops()) {
    GradcheckStats stats{op.name, 0, 0.0};
    for (std::size_t i = 0; i < cases_per_op; ++i) {
      auto c = op.make(g);
      stats.max_rel_error = std::max(stats.max_rel_error, case_max_error(c, h));
      ++stats.cases;
    }
    out.push_back(stats);
  }
  return out;
}

}  // namespace clta::testkit
