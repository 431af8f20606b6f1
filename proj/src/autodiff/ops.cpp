#include "clta/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "clta/errors.hpp"

namespace clta::ad {
namespace {

Tape& common_tape(std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const auto& v : vars) {
    if (!v.valid()) throw ContractError("op received an empty Var");
    if (tape == nullptr) {
      tape = &v.tape();
    } else if (tape != &v.tape()) {
      throw ContractError("op inputs live on different tapes");
    }
  }
  return *tape;
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Var& x, std::size_t rank) {
  if (x.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(x.shape()));
  }
}

Tensor make(const Shape& shape, std::vector<double> values) {
  return Tensor(shape, std::move(values), Tensor::Unchecked{});
}

template <typename Forward, typename Derivative>
Var unary(const char* op, Var x, Forward f, Derivative df) {
  const auto& in = x.value();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return x.tape().record(op, make(in.shape(), std::move(out)), {x}, [df](BackwardContext& ctx) {
    const auto& xin = ctx.input(0);
    const auto& y = ctx.output();
    auto g = ctx.grad_output();
    auto gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * df(xin[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  auto& tape = common_tape({a, b});
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.values().data() + p * m;
      double* orow = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return tape.record("matmul", make({n, m}, std::move(out)), {a, b}, [n, k, m](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    if (ctx.needs_grad(0)) {
      // dA = G B^T
      const auto& bv = ctx.input(1);
      auto ga = ctx.input_grad(0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * bv[p * m + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (ctx.needs_grad(1)) {
      // dB = A^T G
      const auto& av = ctx.input(0);
      auto gb = ctx.input_grad(1);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * g[i * m + j];
        }
      }
    }
  });
}

Var conv2d(Var input, Var weight, Conv2dOptions opt) {
  auto& tape = common_tape({input, weight});
  require_rank("conv2d", input, 4);
  require_rank("conv2d", weight, 4);
  if (opt.stride != 1 && opt.stride != 2) throw ParameterError("conv2d: stride must be 1 or 2");
  const auto& xs = input.shape();
  const auto& ws = weight.shape();
  const std::size_t batch = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const std::size_t cout = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != cin) {
    throw DimensionError("conv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                         std::to_string(ws[1]));
  }
  if (h + 2 * opt.padding < kh || w + 2 * opt.padding < kw) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const std::size_t oh = (h + 2 * opt.padding - kh) / opt.stride + 1;
  const std::size_t ow = (w + 2 * opt.padding - kw) / opt.stride + 1;
  const auto stride = static_cast<long>(opt.stride);
  const auto pad = static_cast<long>(opt.padding);

  // Visits every (output, input, kernel) triple that lands inside the input.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
              const std::size_t oidx = ((b * cout + co) * oh + y) * ow + x;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const long iy = static_cast<long>(y) * stride + static_cast<long>(ky) - pad;
                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const long ix = static_cast<long>(x) * stride + static_cast<long>(kx) - pad;
                  if (ix < 0 || ix >= static_cast<long>(w)) continue;
                  const std::size_t iidx = ((b * cin + ci) * h + static_cast<std::size_t>(iy)) * w +
                                           static_cast<std::size_t>(ix);
                  const std::size_t widx = ((co * cin + ci) * kh + ky) * kw + kx;
                  fn(oidx, iidx, widx);
                }
              }
            }
  };

  const auto& xv = input.value();
  const auto& wv = weight.value();
  std::vector<double> out(batch * cout * oh * ow, 0.0);
  for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { out[o] += xv[i] * wv[k]; });

  return tape.record("conv2d", make({batch, cout, oh, ow}, std::move(out)), {input, weight},
                     [for_each_tap](BackwardContext& ctx) {
                       auto g = ctx.grad_output();
                       if (ctx.needs_grad(0)) {
                         const auto& wv = ctx.input(1);
                         auto gx = ctx.input_grad(0);
                         for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { gx[i] += g[o] * wv[k]; });
                       }
                       if (ctx.needs_grad(1)) {
                         const auto& xv = ctx.input(0);
                         auto gw = ctx.input_grad(1);
                         for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { gw[k] += g[o] * xv[i]; });
                       }
                     });
}

Var add(Var a, Var b) {
  auto& tape = common_tape({a, b});
  require_same_shape("add", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record("add", make(av.shape(), std::move(out)), {a, b}, [](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    for (std::size_t in = 0; in < 2; ++in) {
      if (!ctx.needs_grad(in)) continue;
      auto gi = ctx.input_grad(in);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  auto& tape = common_tape({a, b});
  require_same_shape("sub", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return tape.record("sub", make(av.shape(), std::move(out)), {a, b}, [](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    if (ctx.needs_grad(0)) {
      auto ga = ctx.input_grad(0);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (ctx.needs_grad(1)) {
      auto gb = ctx.input_grad(1);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  auto& tape = common_tape({a, b});
  require_same_shape("mul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record("mul", make(av.shape(), std::move(out)), {a, b}, [](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    if (ctx.needs_grad(0)) {
      const auto& bv = ctx.input(1);
      auto ga = ctx.input_grad(0);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (ctx.needs_grad(1)) {
      const auto& av = ctx.input(0);
      auto gb = ctx.input_grad(1);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Var add_bias(Var x, Var bias) {
  auto& tape = common_tape({x, bias});
  const auto& xs = x.shape();
  if (xs.size() < 2) throw DimensionError("add_bias: input needs a batch and a channel axis");
  if (bias.shape().size() != 1 || bias.shape()[0] != xs[1]) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match channels of " +
                         shape_string(xs));
  }
  const std::size_t batch = xs[0], channels = xs[1];
  const std::size_t inner = x.value().size() / (batch * channels);
  const auto& xv = x.value();
  const auto& bv = bias.value();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t s = 0; s < inner; ++s) {
        const std::size_t i = (b * channels + c) * inner + s;
        out[i] = xv[i] + bv[c];
      }
  return tape.record("add_bias", make(xs, std::move(out)), {x, bias},
                     [batch, channels, inner](BackwardContext& ctx) {
                       auto g = ctx.grad_output();
                       if (ctx.needs_grad(0)) {
                         auto gx = ctx.input_grad(0);
                         for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                       }
                       if (ctx.needs_grad(1)) {
                         auto gb = ctx.input_grad(1);
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t c = 0; c < channels; ++c)
                             for (std::size_t s = 0; s < inner; ++s) gb[c] += g[(b * channels + c) * inner + s];
                       }
                     });
}

Var relu(Var x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var log_sigmoid(Var x) {
  // log s(v) = min(v, 0) - log1p(exp(-|v|)); d/dv = s(-v)
  return unary(
      "log_sigmoid", x, [](double v) { return std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        if (v >= 0.0) {
          const double e = std::exp(-v);
          return e / (1.0 + e);
        }
        return 1.0 / (1.0 + std::exp(v));
      });
}

Var log(Var x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input");
  }
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var exp(Var x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return x.tape().record("sum", make({}, {total}), {x}, [](BackwardContext& ctx) {
    const double g = ctx.grad_output()[0];
    auto gx = ctx.input_grad(0);
    for (auto& v : gx) v += g;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return x.tape().record("mean", make({}, {total / n}), {x}, [n](BackwardContext& ctx) {
    const double g = ctx.grad_output()[0] / n;
    auto gx = ctx.input_grad(0);
    for (auto& v : gx) v += g;
  });
}

Var avg_pool2d(Var x, Pool2dOptions opt) {
  require_rank("avg_pool2d", x, 4);
  if (opt.kernel_h == 0 || opt.kernel_w == 0 || opt.stride == 0) {
    throw ParameterError("avg_pool2d: kernel and stride must be positive");
  }
  const auto& xs = x.shape();
  const std::size_t batch = xs[0], ch = xs[1], h = xs[2], w = xs[3];
  if (h < opt.kernel_h || w < opt.kernel_w) throw DimensionError("avg_pool2d: kernel larger than input");
  const std::size_t oh = (h - opt.kernel_h) / opt.stride + 1;
  const std::size_t ow = (w - opt.kernel_w) / opt.stride + 1;
  const double inv = 1.0 / static_cast<double>(opt.kernel_h * opt.kernel_w);

  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t bc = 0; bc < batch * ch; ++bc)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          const std::size_t o = (bc * oh + y) * ow + xo;
          for (std::size_t ky = 0; ky < opt.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < opt.kernel_w; ++kx) {
              fn(o, (bc * h + y * opt.stride + ky) * w + xo * opt.stride + kx);
            }
        }
  };

  const auto& xv = x.value();
  std::vector<double> out(batch * ch * oh * ow, 0.0);
  for_each_tap([&](std::size_t o, std::size_t i) { out[o] += xv[i] * inv; });
  return x.tape().record("avg_pool2d", make({batch, ch, oh, ow}, std::move(out)), {x},
                         [for_each_tap, inv](BackwardContext& ctx) {
                           auto g = ctx.grad_output();
                           auto gx = ctx.input_grad(0);
                           for_each_tap([&](std::size_t o, std::size_t i) { gx[i] += g[o] * inv; });
                         });
}

Var global_avg_pool(Var x) {
  require_rank("global_avg_pool", x, 4);
  const auto& xs = x.shape();
  return flatten(avg_pool2d(x, {xs[2], xs[3], 1}));
}

Var flatten(Var x) {
  const auto& xs = x.shape();
  if (xs.empty()) throw DimensionError("flatten: needs a batch axis");
  const std::size_t batch = xs[0];
  const std::size_t rest = x.value().size() / batch;
  return x.tape().record("flatten", x.value().reshaped({batch, rest}), {x}, [](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

Var concat_columns(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  Tape& tape = parts.front().tape();
  const std::size_t rows = parts.front().shape().at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (&p.tape() != &tape) throw ContractError("concat: inputs live on different tapes");
    require_rank("concat", p, 2);
    if (p.shape()[0] != rows) throw DimensionError("concat: row counts differ");
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + offset + c] = v[r * widths[k] + c];
    offset += widths[k];
  }
  return tape.record("concat", make({rows, total}, std::move(out)), std::vector<Var>(parts.begin(), parts.end()),
                     [rows, total, widths](BackwardContext& ctx) {
                       auto g = ctx.grad_output();
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (ctx.needs_grad(k)) {
                           auto gk = ctx.input_grad(k);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < widths[k]; ++c)
                               gk[r * widths[k] + c] += g[r * total + offset + c];
                         }
                         offset += widths[k];
                       }
                     });
}

Var slice_columns(Var x, std::size_t begin, std::size_t end) {
  require_rank("slice_columns", x, 2);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (begin >= end || end > cols) {
    throw IndexError("slice_columns: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + std::to_string(cols) + " columns");
  }
  const std::size_t width = end - begin;
  const auto& xv = x.value();
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = xv[r * cols + begin + c];
  return x.tape().record("slice_columns", make({rows, width}, std::move(out)), {x},
                         [rows, cols, begin, width](BackwardContext& ctx) {
                           auto g = ctx.grad_output();
                           auto gx = ctx.input_grad(0);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < width; ++c) gx[r * cols + begin + c] += g[r * width + c];
                         });
}

Tensor softmax_rows(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("softmax: temperature must be positive");
  if (logits.rank() != 2) throw DimensionError("softmax: expected (batch, classes), got " + shape_string(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.values().data() + r * cols;
    const double mx = *std::max_element(z, z + cols);
    double denom = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = std::exp((z[c] - mx) / temperature);
      denom += out[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= denom;
  }
  return Tensor(logits.shape(), std::move(out), Tensor::Unchecked{});
}

Tensor log_softmax_rows(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("log_softmax: temperature must be positive");
  if (logits.rank() != 2) {
    throw DimensionError("log_softmax: expected (batch, classes), got " + shape_string(logits.shape()));
  }
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.values().data() + r * cols;
    const double mx = *std::max_element(z, z + cols);
    double denom = 0.0;
    for (std::size_t c = 0; c < cols; ++c) denom += std::exp((z[c] - mx) / temperature);
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (z[c] - mx) / temperature - log_denom;
  }
  return Tensor(logits.shape(), std::move(out), Tensor::Unchecked{});
}

Var softmax_temperature(Var logits, double temperature) {
  Tensor probs = softmax_rows(logits.value(), temperature);
  const std::size_t rows = probs.dim(0), cols = probs.dim(1);
  return logits.tape().record("softmax", std::move(probs), {logits},
                              [rows, cols, temperature](BackwardContext& ctx) {
                                // dz_c = p_c (g_c - sum_k g_k p_k) / T
                                const auto& p = ctx.output();
                                auto g = ctx.grad_output();
                                auto gz = ctx.input_grad(0);
                                for (std::size_t r = 0; r < rows; ++r) {
                                  double dot = 0.0;
                                  for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * p[r * cols + c];
                                  for (std::size_t c = 0; c < cols; ++c) {
                                    const std::size_t i = r * cols + c;
                                    gz[i] += p[i] * (g[i] - dot) / temperature;
                                  }
                                }
                              });
}

Var log_softmax_temperature(Var logits, double temperature) {
  Tensor logp = log_softmax_rows(logits.value(), temperature);
  const std::size_t rows = logp.dim(0), cols = logp.dim(1);
  return logits.tape().record("log_softmax", std::move(logp), {logits},
                              [rows, cols, temperature](BackwardContext& ctx) {
                                // dz_c = (g_c - p_c sum_k g_k) / T
                                const auto& lp = ctx.output();
                                auto g = ctx.grad_output();
                                auto gz = ctx.input_grad(0);
                                for (std::size_t r = 0; r < rows; ++r) {
                                  double gsum = 0.0;
                                  for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
                                  for (std::size_t c = 0; c < cols; ++c) {
                                    const std::size_t i = r * cols + c;
                                    gz[i] += (g[i] - std::exp(lp[i]) * gsum) / temperature;
                                  }
                                }
                              });
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  if (labels.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  }
  for (auto l : labels) {
    if (l >= cols) {
      throw IndexError("cross_entropy: label " + std::to_string(l) + " out of range for " + std::to_string(cols) +
                       " classes");
    }
  }
  Tensor logp = log_softmax_rows(logits.value(), 1.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) total -= logp[r * cols + labels[r]];
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  return logits.tape().record(
      "cross_entropy", make({}, {total / static_cast<double>(rows)}), {logits},
      [rows, cols, targets = std::move(targets), logp = std::move(logp)](BackwardContext& ctx) {
        const double g = ctx.grad_output()[0] / static_cast<double>(rows);
        auto gz = ctx.input_grad(0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            gz[i] += g * (std::exp(logp[i]) - (c == targets[r] ? 1.0 : 0.0));
          }
      });
}

}  // namespace clta::ad
