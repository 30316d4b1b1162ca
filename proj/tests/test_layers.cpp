#include <gtest/gtest.h>

#include <cmath>

#include "spikerain/layers.hpp"
#include "test_support.hpp"

using namespace spikerain;
using namespace spikerain::testing;

namespace {

Tensor leaf(Shape shape, std::vector<double> v) {
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

ConvLayer fixed_conv(Shape w_shape, std::vector<double> w, std::vector<double> b) {
  ConvLayer layer;
  const auto k = w_shape[2];
  const auto cout = w_shape[0];
  layer.weight = leaf(std::move(w_shape), std::move(w));
  layer.bias = leaf({cout}, std::move(b));
  layer.opts = Conv2dOptions::same_padding(k);
  return layer;
}

struct ChannelStats {
  std::vector<double> mean, var;
};

ChannelStats channel_stats(const Tensor& x) {
  const auto t = x.size(0), n = x.size(1), c = x.size(2), plane = x.size(3) * x.size(4);
  ChannelStats s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  const double count = static_cast<double>(t * n * plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t a = 0; a < t; ++a)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < plane; ++i) s.mean[ch] += x[((a * n + b) * c + ch) * plane + i];
    s.mean[ch] /= count;
    for (std::size_t a = 0; a < t; ++a)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = x[((a * n + b) * c + ch) * plane + i] - s.mean[ch];
          s.var[ch] += d * d;
        }
    s.var[ch] /= count;
  }
  return s;
}

}  // namespace

TEST(Tdbn, NormalizedChannelPassesThrough) {
  // Two values +-1 per channel: mean 0, population variance 1.
  std::vector<double> v(2 * 1 * 1 * 2 * 2);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i % 2) ? 1.0 : -1.0;
  Tensor x({2, 1, 1, 2, 2}, v);
  auto p = TdBnParams::make(1);
  auto y = tdbn(x, p, true);
  EXPECT_LT(max_abs_diff(y.data(), x.data()), p.eps);
}

TEST(Tdbn, ConstantChannelGivesShift) {
  auto p = TdBnParams::make(2);
  p.beta_shift.mutable_data()[0] = 0.25;
  p.beta_shift.mutable_data()[1] = -0.5;
  Tensor x({3, 2, 2, 2, 2}, 4.0);
  auto y = tdbn(x, p, true);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const std::size_t ch = (i / 4) % 2;
    ASSERT_EQ(y[i], ch == 0 ? 0.25 : -0.5);
  }
}

TEST(Tdbn, OutputStatisticsMatchScale) {
  Rng rng(1);
  auto p = TdBnParams::make(3, 0.5);
  p.gamma.mutable_data()[0] = 1.5;
  p.gamma.mutable_data()[1] = -2.0;
  auto x = random_tensor({4, 2, 3, 5, 5}, rng, -3.0, 7.0);
  const auto s = channel_stats(tdbn(x, p, true));
  for (std::size_t c = 0; c < 3; ++c) {
    const double g = p.gamma[c];
    EXPECT_LT(std::abs(s.mean[c]), 1e-6);
    EXPECT_NEAR(s.var[c], 0.25 * g * g, 1e-4);
  }
}

TEST(Tdbn, RunningStatisticsAndEvalMode) {
  Rng rng(2);
  auto p = TdBnParams::make(2);
  auto x = random_tensor({2, 3, 2, 4, 4}, rng, 0.0, 4.0);
  const auto s = channel_stats(x);
  tdbn(x, p, true);
  const double count = 2 * 3 * 16;
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_NEAR(p.running_mean[c], 0.1 * s.mean[c], 1e-12);
    EXPECT_NEAR(p.running_var[c], 0.9 + 0.1 * s.var[c] * count / (count - 1), 1e-12);
    EXPECT_GE(p.running_var[c], 0.0);
  }
  // Eval normalizes with the running statistics and leaves them untouched.
  const double rm = p.running_mean[0], rv = p.running_var[0];
  auto y = tdbn(x, p, false);
  EXPECT_EQ(p.running_mean[0], rm);
  EXPECT_NEAR(y[0], (x[0] - rm) / std::sqrt(rv + p.eps), 1e-12);
}

TEST(Tdbn, ChannelMismatchThrows) {
  auto p = TdBnParams::make(3);
  EXPECT_THROW(tdbn(Tensor({1, 1, 2, 2, 2}), p, true), DimensionError);
}

TEST(Tdbn, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  auto p = TdBnParams::make(2, 0.7);
  p.gamma = random_leaf({2}, rng, 0.5, 1.5);
  p.beta_shift = random_leaf({2}, rng);
  auto x = random_leaf({2, 2, 2, 3, 3}, rng);
  for (bool training : {true, false}) {
    auto r = gradcheck([&] { return project(tdbn(x, p, training)); }, {x, p.gamma, p.beta_shift});
    EXPECT_LT(r.max_rel_error, 1e-5) << training << " " << r.worst;
  }
}

TEST(PerStepBn, NormalizesEachTimeSlice) {
  Rng rng(4);
  auto p = TdBnParams::make(2, 5.0);  // threshold scale is ignored
  auto x = random_tensor({3, 2, 2, 3, 3}, rng, -2.0, 6.0);
  auto y = batch_norm_per_step(x, p, true);
  const std::size_t slice = 2 * 2 * 9;
  for (std::size_t t = 0; t < 3; ++t) {
    std::vector<double> part(y.data().begin() + t * slice, y.data().begin() + (t + 1) * slice);
    const auto s = channel_stats(Tensor({1, 2, 2, 3, 3}, part));
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_LT(std::abs(s.mean[c]), 1e-9);
      EXPECT_NEAR(s.var[c], 1.0, 1e-4);
    }
  }
  auto xl = random_leaf({2, 2, 2, 2, 2}, rng);
  auto r = gradcheck([&] { return project(batch_norm_per_step(xl, p, true)); }, {xl, p.gamma, p.beta_shift});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Scu, QuiescentPathGivesShift) {
  Rng rng(5);
  ForwardContext ctx;
  auto scu = Scu::make(rng, 2, 3);
  scu.bn.beta_shift.mutable_data()[1] = 0.75;
  auto y = scu.forward(Tensor({2, 1, 2, 4, 4}, 0.0), ctx);
  EXPECT_EQ(y.shape(), (Shape{2, 1, 3, 4, 4}));
  for (std::size_t i = 0; i < y.numel(); ++i) ASSERT_EQ(y[i], ((i / 16) % 3) == 1 ? 0.75 : 0.0);
}

TEST(Scu, EqualsCompositionOfStages) {
  Rng rng(6);
  ForwardContext ctx;
  auto scu = Scu::make(rng, 3, 4, 2);
  auto x = random_tensor({3, 2, 3, 8, 8}, rng, -1.0, 3.0);
  auto reference_bn = scu.bn;
  reference_bn.running_mean = scu.bn.running_mean.clone();
  reference_bn.running_var = scu.bn.running_var.clone();

  auto spikes = lif_unroll(x, ctx.lif);
  for (double s : spikes.data()) ASSERT_TRUE(s == 0.0 || s == 1.0);
  std::vector<double> feats;
  const auto slice = 2 * 3 * 64;
  for (std::size_t t = 0; t < 3; ++t) {
    std::vector<double> st(spikes.data().begin() + t * slice, spikes.data().begin() + (t + 1) * slice);
    auto f = conv2d(Tensor({2, 3, 8, 8}, st), scu.conv.weight, Tensor(), 2, 1);
    feats.insert(feats.end(), f.data().begin(), f.data().end());
  }
  auto expected = tdbn(Tensor({3, 2, 4, 4, 4}, feats), reference_bn, true);
  auto got = scu.forward(x, ctx);
  EXPECT_EQ(max_abs_diff(got.data(), expected.data()), 0.0);
  EXPECT_EQ(max_abs_diff(scu.bn.running_var.data(), reference_bn.running_var.data()), 0.0);
}

TEST(Scu, SmoothGradientsMatchFiniteDifferences) {
  Rng rng(7);
  ForwardContext ctx;
  ctx.lif.smooth_forward = true;
  auto scu = Scu::make(rng, 2, 2);
  auto x = random_leaf({2, 1, 2, 4, 4}, rng, -1.0, 3.0);
  auto r = gradcheck([&] { return project(scu.forward(x, ctx)); }, {x, scu.conv.weight, scu.bn.gamma});
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(Scu, UpsampleDoublesExtent) {
  Rng rng(8);
  ForwardContext ctx;
  auto up = Scu::make_upsample(rng, 4, 2);
  auto y = up.forward(random_tensor({2, 1, 4, 3, 5}, rng, 0.0, 3.0), ctx);
  EXPECT_EQ(y.shape(), (Shape{2, 1, 2, 6, 10}));
}

TEST(Mau, OpenGateIsIdentity) {
  Rng rng(9);
  auto m = Mau::make(rng, 4);
  for (auto& b : m.channel_excite.bias.mutable_data()) b = 100.0;
  m.spatial.bias.mutable_data()[0] = 100.0;
  auto x = random_tensor({2, 1, 4, 5, 5}, rng);
  EXPECT_LT(max_abs_diff(mau(x, m).data(), x.data()), 1e-12);
}

TEST(Mau, NeverAmplifies) {
  Rng rng(10);
  auto m = Mau::make(rng, 4);
  auto x = random_tensor({3, 2, 4, 6, 6}, rng, -5.0, 5.0);
  auto y = m.forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_LE(std::abs(y[i]), std::abs(x[i]));
}

TEST(Mau, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  auto m = Mau::make(rng, 2);
  auto x = random_leaf({2, 1, 2, 4, 4}, rng);
  auto r = gradcheck([&] { return project(mau(x, m)); },
                     {x, m.channel_squeeze.weight, m.channel_excite.weight, m.channel_excite.bias,
                      m.spatial.weight, m.spatial.bias});
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(Frb, SaturatedGatesGiveLimits) {
  Rng rng(12);
  auto p = FrbParams::make(rng, 4);
  auto y = random_tensor({2, 4, 5, 5}, rng);
  for (auto& b : p.feature_excite.bias.mutable_data()) b = 100.0;
  EXPECT_LT(max_abs_diff(frb(y, p).data(), y.data()), 1e-12);
  for (auto& b : p.feature_excite.bias.mutable_data()) b = -100.0;
  auto g = frb_detailed(y, p);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < 25; ++i)
        ASSERT_NEAR(g.output[(n * 4 + c) * 25 + i], g.pooled_gate[n * 4 + c], 1e-12);
}

TEST(Frb, HandEvaluation) {
  FrbParams p;
  p.pooled_squeeze = fixed_conv({1, 2, 1, 1}, {0.5, -0.3}, {0.1});
  p.pooled_excite = fixed_conv({2, 1, 1, 1}, {0.8, -0.6}, {0.05, -0.05});
  std::vector<double> fw(36);
  for (std::size_t k = 0; k < 36; ++k) fw[k] = 0.01 * static_cast<double>(k + 1);
  p.feature = fixed_conv({2, 2, 3, 3}, fw, {0.0, 0.1});
  p.feature_squeeze = fixed_conv({1, 2, 1, 1}, {0.7, 0.2}, {-0.1});
  p.feature_excite = fixed_conv({2, 1, 1, 1}, {1.2, -0.4}, {0.3, 0.0});
  Tensor y({1, 2, 2, 2}, {0.1, 0.2, 0.3, 0.4, 0.9, 0.8, 0.7, 0.6});

  const std::vector<double> expected{0.21332172776852004, 0.288565473396446,  0.3640216640533408,
                                     0.4349252105619874,  0.6707882910601751, 0.6274670342395923,
                                     0.5841935758081083,  0.5390933511019655};
  const std::vector<double> pooled{0.5124973964842103, 0.4875026035157896};
  auto g = frb_detailed(y, p);
  EXPECT_LT(max_abs_diff(g.output.data(), expected), 1e-6);
  EXPECT_LT(max_abs_diff(g.pooled_gate.data(), pooled), 1e-6);
}

TEST(Frb, BlendIsConvexAndGatesInUnitInterval) {
  Rng rng(13);
  auto p = FrbParams::make(rng, 4);
  auto y = random_tensor({2, 4, 6, 6}, rng, -2.0, 2.0);
  auto g = frb_detailed(y, p);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 4; ++c) {
      const double fh = g.pooled_gate[n * 4 + c];
      ASSERT_GT(fh, 0.0);
      ASSERT_LT(fh, 1.0);
      for (std::size_t i = 0; i < 36; ++i) {
        const auto k = (n * 4 + c) * 36 + i;
        ASSERT_GT(g.feature_gate[k], 0.0);
        ASSERT_LT(g.feature_gate[k], 1.0);
        ASSERT_GE(g.output[k], std::min(y[k], fh) - 1e-15);
        ASSERT_LE(g.output[k], std::max(y[k], fh) + 1e-15);
      }
    }
}

TEST(Frb, GradientsMatchFiniteDifferences) {
  Rng rng(14);
  auto p = FrbParams::make(rng, 4);
  auto y = random_leaf({1, 4, 4, 4}, rng);
  auto r = gradcheck([&] { return project(frb(y, p)); },
                     {y, p.pooled_squeeze.weight, p.pooled_excite.bias, p.feature.weight,
                      p.feature_squeeze.weight, p.feature_excite.weight});
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(Frb, ChannelMismatchThrows) {
  Rng rng(15);
  auto p = FrbParams::make(rng, 4);
  EXPECT_THROW(frb(Tensor({1, 3, 4, 4}), p), DimensionError);
}
