#include "spikerain/layers.hpp"

#include <cmath>

#include "spikerain/ops.hpp"

namespace spikerain {

namespace {

Tensor kaiming(Rng& rng, Shape shape, std::size_t fan_in) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = dist(rng);
  t.set_requires_grad(true);
  return t;
}

Tensor trainable_zeros(Shape shape, double fill = 0.0) {
  Tensor t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

void accumulate(const Tensor& t, std::span<const double> g) {
  if (t.requires_grad()) t.impl()->accumulate_grad(g);
}

// Shared batch-norm kernel. `groups` is the number of independent statistic
// groups along time (1 for tdBN, T for per-step BN).
Tensor batch_norm_impl(const Tensor& x, const TdBnParams& p, bool training, bool per_step,
                       double out_scale) {
  if (x.dim() != 5) throw DimensionError("normalization expects [T,N,C,H,W], got " + shape_str(x.shape()));
  const auto steps = x.size(0);
  const auto batch = x.size(1);
  const auto ch = x.size(2);
  const auto plane = x.size(3) * x.size(4);
  if (ch != p.channels()) {
    throw DimensionError("normalization channel axis 2 has extent " + std::to_string(ch) +
                         ", parameters expect " + std::to_string(p.channels()));
  }
  if (!(p.eps > 0.0)) throw ContractError("normalization eps must be > 0");
  const std::size_t groups = per_step ? steps : 1;
  const std::size_t steps_per_group = per_step ? 1 : steps;
  const double count = static_cast<double>(steps_per_group * batch * plane);

  const auto xd = x.data();
  const auto gamma = p.gamma.data();
  const auto beta = p.beta_shift.data();
  auto index = [batch, ch, plane](std::size_t t, std::size_t n, std::size_t c) {
    return ((t * batch + n) * ch + c) * plane;
  };

  // Per (group, channel) mean and inverse std actually used for normalization.
  auto mu = std::make_shared<std::vector<double>>(groups * ch);
  auto inv_std = std::make_shared<std::vector<double>>(groups * ch);
  std::vector<double> batch_mean(ch, 0.0), batch_var(ch, 0.0);
  for (std::size_t grp = 0; grp < groups; ++grp) {
    for (std::size_t c = 0; c < ch; ++c) {
      double m, v;
      if (training) {
        double s = 0.0;
        for (std::size_t t = grp * steps_per_group; t < (grp + 1) * steps_per_group; ++t) {
          for (std::size_t n = 0; n < batch; ++n) {
            const double* row = xd.data() + index(t, n, c);
            for (std::size_t i = 0; i < plane; ++i) s += row[i];
          }
        }
        m = s / count;
        double sq = 0.0;
        for (std::size_t t = grp * steps_per_group; t < (grp + 1) * steps_per_group; ++t) {
          for (std::size_t n = 0; n < batch; ++n) {
            const double* row = xd.data() + index(t, n, c);
            for (std::size_t i = 0; i < plane; ++i) sq += (row[i] - m) * (row[i] - m);
          }
        }
        v = sq / count;
        batch_mean[c] += m / static_cast<double>(groups);
        batch_var[c] += v / static_cast<double>(groups);
      } else {
        m = p.running_mean[c];
        v = p.running_var[c];
      }
      (*mu)[grp * ch + c] = m;
      (*inv_std)[grp * ch + c] = 1.0 / std::sqrt(v + p.eps);
    }
  }

  if (training) {
    // Running statistics live outside the tape; update in place.
    auto rm = p.running_mean.impl()->storage;
    auto rv = p.running_var.impl()->storage;
    const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
    for (std::size_t c = 0; c < ch; ++c) {
      (*rm)[c] = (1.0 - p.momentum) * (*rm)[c] + p.momentum * batch_mean[c];
      (*rv)[c] = (1.0 - p.momentum) * (*rv)[c] + p.momentum * batch_var[c] * unbias;
    }
  }

  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t t = 0; t < steps; ++t) {
    const auto grp = per_step ? t : 0;
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < ch; ++c) {
        const auto base = index(t, n, c);
        const double m = (*mu)[grp * ch + c];
        const double is = (*inv_std)[grp * ch + c];
        const double a = out_scale * gamma[c];
        for (std::size_t i = 0; i < plane; ++i) {
          const double xh = (xd[base + i] - m) * is;
          (*xhat)[base + i] = xh;
          out[base + i] = a * xh + beta[c];
        }
      }
    }
  }

  const Tensor& g_t = p.gamma;
  const Tensor& b_t = p.beta_shift;
  return detail::make_result(
      x.shape(), std::move(out), {&x, &g_t, &b_t},
      [x, g_t, b_t, xhat, inv_std, training, groups, steps_per_group, batch, ch, plane,
       count, out_scale, index](std::span<const double> g) {
        const auto gamma = g_t.data();
        std::vector<double> dgamma(ch, 0.0), dbeta(ch, 0.0);
        std::vector<double> dx(x.requires_grad() ? x.numel() : 0, 0.0);
        for (std::size_t grp = 0; grp < groups; ++grp) {
          for (std::size_t c = 0; c < ch; ++c) {
            double sg = 0.0, sgx = 0.0;
            for (std::size_t t = grp * steps_per_group; t < (grp + 1) * steps_per_group; ++t) {
              for (std::size_t n = 0; n < batch; ++n) {
                const auto base = index(t, n, c);
                for (std::size_t i = 0; i < plane; ++i) {
                  sg += g[base + i];
                  sgx += g[base + i] * (*xhat)[base + i];
                }
              }
            }
            dbeta[c] += sg;
            dgamma[c] += out_scale * sgx;
            if (dx.empty()) continue;
            const double a = out_scale * gamma[c] * (*inv_std)[grp * ch + c];
            const double mg = sg / count;
            const double mgx = sgx / count;
            for (std::size_t t = grp * steps_per_group; t < (grp + 1) * steps_per_group; ++t) {
              for (std::size_t n = 0; n < batch; ++n) {
                const auto base = index(t, n, c);
                for (std::size_t i = 0; i < plane; ++i) {
                  dx[base + i] = training ? a * (g[base + i] - mg - (*xhat)[base + i] * mgx)
                                          : a * g[base + i];
                }
              }
            }
          }
        }
        if (!dx.empty()) accumulate(x, dx);
        accumulate(g_t, dgamma);
        accumulate(b_t, dbeta);
      });
}

}  // namespace

std::size_t squeeze_width(std::size_t channels) { return channels >= 4 ? channels / 4 : 1; }


ConvLayer ConvLayer::make(Rng& rng, std::size_t cin, std::size_t cout, std::size_t kernel,
                          std::size_t stride, bool with_bias) {
  ConvLayer layer;
  layer.weight = kaiming(rng, {cout, cin, kernel, kernel}, cin * kernel * kernel);
  if (with_bias) layer.bias = trainable_zeros({cout});
  layer.opts = Conv2dOptions::same_padding(kernel, stride);
  return layer;
}

ConvLayer ConvLayer::make_transposed(Rng& rng, std::size_t cin, std::size_t cout,
                                     std::size_t kernel, std::size_t stride, bool with_bias) {
  ConvLayer layer;
  layer.weight = kaiming(rng, {cin, cout, kernel, kernel}, cin * kernel * kernel / (stride * stride));
  if (with_bias) layer.bias = trainable_zeros({cout});
  layer.opts = Conv2dOptions{stride, 0, 0};
  layer.transposed = true;
  return layer;
}

Tensor ConvLayer::forward(const Tensor& x) const {
  return transposed ? conv_transpose2d(x, weight, bias, opts) : conv2d(x, weight, bias, opts);
}

Tensor ConvLayer::forward_seq(const Tensor& x_seq) const {
  return fold_time(x_seq, [this](const Tensor& flat) { return forward(flat); });
}

void ConvLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight, true});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, true});
}

TdBnParams TdBnParams::make(std::size_t channels, double v_threshold_scale) {
  TdBnParams p;
  p.gamma = trainable_zeros({channels}, 1.0);
  p.beta_shift = trainable_zeros({channels}, 0.0);
  p.running_mean = Tensor({channels}, 0.0);
  p.running_var = Tensor({channels}, 1.0);
  p.v_threshold_scale = v_threshold_scale;
  return p;
}

void TdBnParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma, true});
  out.push_back({prefix + ".beta", beta_shift, true});
  out.push_back({prefix + ".running_mean", running_mean, false});
  out.push_back({prefix + ".running_var", running_var, false});
}

Tensor tdbn(const Tensor& x_seq, const TdBnParams& params, bool training) {
  return batch_norm_impl(x_seq, params, training, false, params.v_threshold_scale);
}

Tensor batch_norm_per_step(const Tensor& x_seq, const TdBnParams& params, bool training) {
  return batch_norm_impl(x_seq, params, training, true, 1.0);
}

Tensor normalize(NormKind kind, const Tensor& x_seq, const TdBnParams& params, bool training) {
  return kind == NormKind::kThresholdDependent ? tdbn(x_seq, params, training)
                                               : batch_norm_per_step(x_seq, params, training);
}

Scu Scu::make(Rng& rng, std::size_t cin, std::size_t cout, std::size_t stride, double v_threshold) {
  return {ConvLayer::make(rng, cin, cout, 3, stride, false), TdBnParams::make(cout, v_threshold)};
}

Scu Scu::make_upsample(Rng& rng, std::size_t cin, std::size_t cout, double v_threshold) {
  return {ConvLayer::make_transposed(rng, cin, cout, 2, 2, false), TdBnParams::make(cout, v_threshold)};
}

Tensor Scu::forward(const Tensor& x_seq, const ForwardContext& ctx) const {
  auto spikes = lif_unroll(x_seq, ctx.lif, ctx.tally);
  auto features = conv.forward_seq(spikes);
  return normalize(ctx.norm, features, bn, ctx.training);
}

void Scu::collect(const std::string& prefix, ParamList& out) const {
  conv.collect(prefix + ".conv", out);
  bn.collect(prefix + ".bn", out);
}

Mau Mau::make(Rng& rng, std::size_t channels) {
  const auto hidden = squeeze_width(channels);
  return {ConvLayer::make(rng, channels, hidden, 1), ConvLayer::make(rng, hidden, channels, 1),
          ConvLayer::make(rng, 1, 1, 7)};
}

Tensor Mau::forward(const Tensor& x_seq) const { return mau(x_seq, *this); }

void Mau::collect(const std::string& prefix, ParamList& out) const {
  channel_squeeze.collect(prefix + ".channel_squeeze", out);
  channel_excite.collect(prefix + ".channel_excite", out);
  spatial.collect(prefix + ".spatial", out);
}

Tensor mau(const Tensor& x_seq, const Mau& params) {
  if (x_seq.dim() != 5) throw DimensionError("mau expects [T,N,C,H,W], got " + shape_str(x_seq.shape()));
  const auto n = x_seq.size(1);
  const auto c = x_seq.size(2);
  const auto h = x_seq.size(3);
  const auto w = x_seq.size(4);
  auto avg = time_mean(x_seq);
  auto channel_gate = sigmoid(params.channel_excite.forward(
      relu(params.channel_squeeze.forward(global_avg_pool(avg)))));
  auto spatial_gate = sigmoid(params.spatial.forward(mean_axes(avg, {1})));
  auto gated = mul(x_seq, reshape(channel_gate, {1, n, c, 1, 1}));
  return mul(gated, reshape(spatial_gate, {1, n, 1, h, w}));
}

FrbParams FrbParams::make(Rng& rng, std::size_t channels) {
  const auto hidden = squeeze_width(channels);
  return {ConvLayer::make(rng, channels, hidden, 1), ConvLayer::make(rng, hidden, channels, 1),
          ConvLayer::make(rng, channels, channels, 3), ConvLayer::make(rng, channels, hidden, 1),
          ConvLayer::make(rng, hidden, channels, 1)};
}

void FrbParams::collect(const std::string& prefix, ParamList& out) const {
  pooled_squeeze.collect(prefix + ".pooled_squeeze", out);
  pooled_excite.collect(prefix + ".pooled_excite", out);
  feature.collect(prefix + ".feature", out);
  feature_squeeze.collect(prefix + ".feature_squeeze", out);
  feature_excite.collect(prefix + ".feature_excite", out);
}

FrbGates frb_detailed(const Tensor& y, const FrbParams& params) {
  if (y.dim() != 4) throw DimensionError("frb expects [N,C,H,W], got " + shape_str(y.shape()));
  if (y.size(1) != params.channels()) {
    throw DimensionError("frb channel axis 1 has extent " + std::to_string(y.size(1)) +
                         ", parameters expect " + std::to_string(params.channels()));
  }
  FrbGates out;
  out.pooled_gate = sigmoid(params.pooled_excite.forward(
      relu(params.pooled_squeeze.forward(global_avg_pool(y)))));
  out.feature_gate = sigmoid(params.feature_excite.forward(
      relu(params.feature_squeeze.forward(params.feature.forward(y)))));
  out.output = add(mul(y, out.feature_gate), mul(one_minus(out.feature_gate), out.pooled_gate));
  return out;
}

Tensor frb(const Tensor& y, const FrbParams& params) { return frb_detailed(y, params).output; }

}  // namespace spikerain
