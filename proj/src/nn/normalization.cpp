#include "clta/nn/normalization.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "clta/errors.hpp"

namespace clta::nn {

std::string_view to_string(NormMode mode) {
  switch (mode) {
    case NormMode::Train: return "train";
    case NormMode::Eval: return "eval";
    case NormMode::AdaptStats: return "adapt_stats";
    case NormMode::Frozen: return "frozen";
  }
  return "unknown";
}

BatchNormLayer BatchNormLayer::make(std::size_t num_features, double momentum, double eps) {
  if (num_features == 0) throw ParameterError("batch norm needs at least one feature");
  if (!(momentum > 0.0 && momentum <= 1.0)) throw ParameterError("batch norm momentum must lie in (0, 1]");
  if (!(eps >= 0.0)) throw ParameterError("batch norm eps must be non-negative");
  BatchNormLayer layer;
  layer.num_features = num_features;
  layer.gamma = ad::Tensor::full({num_features}, 1.0);
  layer.beta = ad::Tensor::zeros({num_features});
  layer.running_mean = ad::Tensor::zeros({num_features});
  layer.running_var = ad::Tensor::full({num_features}, 1.0);
  layer.gamma.set_requires_grad(true);
  layer.beta.set_requires_grad(true);
  layer.momentum = momentum;
  layer.eps = eps;
  return layer;
}

namespace {

struct Layout {
  std::size_t batch;
  std::size_t channels;
  std::size_t inner;
};

Layout channel_layout(const char* op, const ad::Var& x, std::size_t channels) {
  const auto& s = x.shape();
  if (s.size() < 2) throw DimensionError(std::string(op) + ": input needs (batch, channels, ...)");
  if (s[1] != channels) {
    throw DimensionError(std::string(op) + ": expected " + std::to_string(channels) + " channels, got " +
                         ad::shape_string(s));
  }
  return {s[0], s[1], x.value().size() / (s[0] * s[1])};
}

ad::Var affine_param(ad::Tape& tape, ad::Tensor& param, bool detached) {
  if (detached) return tape.constant(ad::Tensor(param.shape(), param.storage()));
  return tape.leaf(param);
}

}  // namespace

ad::Var batchnorm_forward(ad::Var x, BatchNormLayer& layer, NormMode mode) {
  const auto [batch, channels, inner] = channel_layout("batchnorm", x, layer.num_features);
  const bool batch_stats =
      mode == NormMode::Train || (mode == NormMode::AdaptStats && layer.adapt_forward == AdaptForward::BatchStats);
  const bool update = mode == NormMode::Train || mode == NormMode::AdaptStats;
  if (update && batch < 2) {
    throw DataError("batchnorm: degenerate batch of size " + std::to_string(batch) + " in " +
                    std::string(to_string(mode)) + " mode");
  }

  // Push the affine parameters first: growing the tape may move the
  // storage behind earlier value references.
  auto& tape = x.tape();
  const bool detached = mode == NormMode::AdaptStats;
  ad::Var gamma = affine_param(tape, layer.gamma, detached);
  ad::Var beta = affine_param(tape, layer.beta, detached);
  const auto& xv = x.value();
  const std::size_t count = batch * inner;
  std::vector<double> mu(channels, 0.0), var(channels, 0.0);
  if (update) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t s = 0; s < inner; ++s) mu[c] += xv[(b * channels + c) * inner + s];
    for (auto& m : mu) m /= static_cast<double>(count);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t s = 0; s < inner; ++s) {
          const double d = xv[(b * channels + c) * inner + s] - mu[c];
          var[c] += d * d;
        }
    for (auto& v : var) v /= static_cast<double>(count);

    const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
    for (std::size_t c = 0; c < channels; ++c) {
      layer.running_mean[c] = (1.0 - layer.momentum) * layer.running_mean[c] + layer.momentum * mu[c];
      layer.running_var[c] = (1.0 - layer.momentum) * layer.running_var[c] + layer.momentum * var[c] * unbias;
    }
  }
  if (!batch_stats) {
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = layer.running_mean[c];
      var[c] = layer.running_var[c];
    }
  }

  std::vector<double> rstd(channels);
  for (std::size_t c = 0; c < channels; ++c) rstd[c] = 1.0 / std::sqrt(var[c] + layer.eps);

  const auto& gv = gamma.value();
  const auto& bv = beta.value();

  std::vector<double> xhat(xv.size()), out(xv.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t s = 0; s < inner; ++s) {
        const std::size_t i = (b * channels + c) * inner + s;
        xhat[i] = (xv[i] - mu[c]) * rstd[c];
        out[i] = gv[c] * xhat[i] + bv[c];
      }

  return tape.record(
      "batchnorm", ad::Tensor(x.shape(), std::move(out), ad::Tensor::Unchecked{}), {x, gamma, beta},
      [=, xhat = std::move(xhat), rstd = std::move(rstd)](ad::BackwardContext& ctx) {
        auto g = ctx.grad_output();
        const auto& gv = ctx.input(1);
        if (ctx.needs_grad(1) || ctx.needs_grad(2)) {
          std::vector<double> dgamma(channels, 0.0), dbeta(channels, 0.0);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t s = 0; s < inner; ++s) {
                const std::size_t i = (b * channels + c) * inner + s;
                dgamma[c] += g[i] * xhat[i];
                dbeta[c] += g[i];
              }
          if (ctx.needs_grad(1)) {
            auto gg = ctx.input_grad(1);
            for (std::size_t c = 0; c < channels; ++c) gg[c] += dgamma[c];
          }
          if (ctx.needs_grad(2)) {
            auto gb = ctx.input_grad(2);
            for (std::size_t c = 0; c < channels; ++c) gb[c] += dbeta[c];
          }
        }
        if (!ctx.needs_grad(0)) return;
        auto gx = ctx.input_grad(0);
        if (!batch_stats) {
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t s = 0; s < inner; ++s) {
                const std::size_t i = (b * channels + c) * inner + s;
                gx[i] += g[i] * gv[c] * rstd[c];
              }
          return;
        }
        // dx = rstd / M * (M * gh - sum(gh) - xhat * sum(gh * xhat)), gh = g * gamma
        const double m = static_cast<double>(count);
        std::vector<double> sum_gh(channels, 0.0), sum_ghx(channels, 0.0);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t s = 0; s < inner; ++s) {
              const std::size_t i = (b * channels + c) * inner + s;
              const double gh = g[i] * gv[c];
              sum_gh[c] += gh;
              sum_ghx[c] += gh * xhat[i];
            }
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t s = 0; s < inner; ++s) {
              const std::size_t i = (b * channels + c) * inner + s;
              const double gh = g[i] * gv[c];
              gx[i] += rstd[c] / m * (m * gh - sum_gh[c] - xhat[i] * sum_ghx[c]);
            }
      });
}

AltNormLayer AltNormLayer::layer_norm(std::size_t num_channels, double eps) {
  AltNormLayer layer = group_norm(num_channels, 1, eps);
  layer.kind = AltNormKind::LayerNorm;
  return layer;
}

AltNormLayer AltNormLayer::group_norm(std::size_t num_channels, std::size_t groups, double eps) {
  if (num_channels == 0) throw ParameterError("normalization needs at least one channel");
  if (groups == 0 || num_channels % groups != 0) {
    throw ParameterError("group norm: " + std::to_string(groups) + " groups do not divide " +
                         std::to_string(num_channels) + " channels");
  }
  AltNormLayer layer;
  layer.kind = AltNormKind::GroupNorm;
  layer.num_channels = num_channels;
  layer.groups = groups;
  layer.gamma = ad::Tensor::full({num_channels}, 1.0);
  layer.beta = ad::Tensor::zeros({num_channels});
  layer.gamma.set_requires_grad(true);
  layer.beta.set_requires_grad(true);
  layer.eps = eps;
  return layer;
}

ad::Var altnorm_forward(ad::Var x, AltNormLayer& layer) {
  const auto [batch, channels, inner] = channel_layout("altnorm", x, layer.num_channels);
  const std::size_t groups = layer.kind == AltNormKind::LayerNorm ? 1 : layer.groups;
  if (groups == 0 || channels % groups != 0) {
    throw ParameterError("group norm: " + std::to_string(groups) + " groups do not divide " +
                         std::to_string(channels) + " channels");
  }
  const std::size_t per_group = channels / groups;
  const std::size_t count = per_group * inner;
  auto& tape = x.tape();
  ad::Var gamma = tape.leaf(layer.gamma);
  ad::Var beta = tape.leaf(layer.beta);
  const auto& xv = x.value();

  // Elements of (sample b, group g) are contiguous: channels g*per_group.. times inner.
  std::vector<double> rstd(batch * groups);
  std::vector<double> xhat(xv.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = (b * channels + g * per_group) * inner;
      double mu = 0.0;
      for (std::size_t k = 0; k < count; ++k) mu += xv[base + k];
      mu /= static_cast<double>(count);
      double var = 0.0;
      for (std::size_t k = 0; k < count; ++k) var += (xv[base + k] - mu) * (xv[base + k] - mu);
      var /= static_cast<double>(count);
      const double r = 1.0 / std::sqrt(var + layer.eps);
      rstd[b * groups + g] = r;
      for (std::size_t k = 0; k < count; ++k) xhat[base + k] = (xv[base + k] - mu) * r;
    }

  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t s = 0; s < inner; ++s) {
        const std::size_t i = (b * channels + c) * inner + s;
        out[i] = layer.gamma[c] * xhat[i] + layer.beta[c];
      }

  const char* name = layer.kind == AltNormKind::LayerNorm ? "layernorm" : "groupnorm";
  return tape.record(
      name, ad::Tensor(x.shape(), std::move(out), ad::Tensor::Unchecked{}), {x, gamma, beta},
      [=, xhat = std::move(xhat), rstd = std::move(rstd)](ad::BackwardContext& ctx) {
        auto g = ctx.grad_output();
        const auto& gv = ctx.input(1);
        if (ctx.needs_grad(1)) {
          auto gg = ctx.input_grad(1);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t s = 0; s < inner; ++s) {
                const std::size_t i = (b * channels + c) * inner + s;
                gg[c] += g[i] * xhat[i];
              }
        }
        if (ctx.needs_grad(2)) {
          auto gb = ctx.input_grad(2);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t s = 0; s < inner; ++s) gb[c] += g[(b * channels + c) * inner + s];
        }
        if (!ctx.needs_grad(0)) return;
        auto gx = ctx.input_grad(0);
        const double m = static_cast<double>(count);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t grp = 0; grp < groups; ++grp) {
            const std::size_t base = (b * channels + grp * per_group) * inner;
            double sum_gh = 0.0, sum_ghx = 0.0;
            for (std::size_t k = 0; k < count; ++k) {
              const double gh = g[base + k] * gv[grp * per_group + k / inner];
              sum_gh += gh;
              sum_ghx += gh * xhat[base + k];
            }
            const double r = rstd[b * groups + grp];
            for (std::size_t k = 0; k < count; ++k) {
              const double gh = g[base + k] * gv[grp * per_group + k / inner];
              gx[base + k] += r / m * (m * gh - sum_gh - xhat[base + k] * sum_ghx);
            }
          }
      });
}

}  // namespace clta::nn
