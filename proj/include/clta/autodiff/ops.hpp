#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "clta/autodiff/tape.hpp"

// Differentiable primitives. Every op records itself on the tape of its
// first input; all inputs must share that tape.
namespace clta::ad {

// (n, k) x (k, m) -> (n, m)
Var matmul(Var a, Var b);

struct Conv2dOptions {
  std::size_t stride = 1;   // 1 or 2
  std::size_t padding = 0;  // zero padding on every side
};
// input (batch, in_ch, h, w), weight (out_ch, in_ch, kh, kw) -> (batch, out_ch, oh, ow)
Var conv2d(Var input, Var weight, Conv2dOptions options = {});

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// Adds bias[c] along axis 1 of a (batch, c, ...) tensor.
Var add_bias(Var x, Var bias);

Var relu(Var x);
Var sigmoid(Var x);
Var log_sigmoid(Var x);
Var log(Var x);
Var exp(Var x);

// Reductions over every element; both return a rank-0 tensor.
Var sum(Var x);
Var mean(Var x);

struct Pool2dOptions {
  std::size_t kernel_h = 2;
  std::size_t kernel_w = 2;
  std::size_t stride = 2;
};
Var avg_pool2d(Var x, Pool2dOptions options);
// Average over the whole spatial extent: (b, c, h, w) -> (b, c).
Var global_avg_pool(Var x);

// (b, ...) -> (b, prod(...))
Var flatten(Var x);
// Concatenates 2-d tensors along the column axis.
Var concat_columns(std::span<const Var> parts);
Var slice_columns(Var x, std::size_t begin, std::size_t end);

// Row-wise softmax of logits / temperature over the class axis of a
// (batch, classes) tensor, with max subtraction.
Var softmax_temperature(Var logits, double temperature);
Var log_softmax_temperature(Var logits, double temperature);

// Mean over the batch of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

// Plain-value helpers shared with code that works outside a tape.
Tensor softmax_rows(const Tensor& logits, double temperature);
Tensor log_softmax_rows(const Tensor& logits, double temperature);

}  // namespace clta::ad
