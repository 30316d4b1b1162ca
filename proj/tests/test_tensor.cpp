#include <gtest/gtest.h>

#include <cmath>

#include "spikerain/conv.hpp"
#include "spikerain/ops.hpp"
#include "test_support.hpp"

using namespace spikerain;
using namespace spikerain::testing;

namespace {
constexpr double kTol = 1e-5;
}

TEST(Tensor, ShapeAndStorageAgree) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.data().size(), 24u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, DetachedNeverAccumulates) {
  Rng rng(1);
  auto w = random_leaf({3}, rng);
  auto d = w.detach();
  EXPECT_FALSE(d.requires_grad());
  backward(sum(mul(d, w)));
  EXPECT_FALSE(d.has_grad());
  EXPECT_TRUE(w.has_grad());
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(2);
  auto x = random_tensor({2, 1, 5, 5}, rng);
  auto y = conv2d(x, Tensor::ones({1, 1, 1, 1}), Tensor());
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(max_abs_diff(y.data(), x.data()), 0.0);
}

TEST(Conv2d, SumKernel) {
  auto y = conv2d(Tensor::ones({1, 1, 3, 3}), Tensor::ones({1, 1, 3, 3}), Tensor());
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 9.0);
}

TEST(Conv2d, OutputExtentFormula) {
  Rng rng(3);
  auto y = conv2d(random_tensor({1, 2, 9, 7}, rng), random_tensor({3, 2, 3, 3}, rng), Tensor(), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 5, 4}));
}

TEST(Conv2d, MatchesDirectLoops) {
  Rng rng(4);
  auto x = random_tensor({2, 3, 6, 5}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng);
  auto b = random_tensor({4}, rng);
  const std::size_t stride = 2, pad = 1;
  auto y = conv2d(x, w, b, stride, pad);
  const auto oh = y.size(2), ow = y.size(3);
  double worst = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t ki = 0; ki < 3; ++ki)
              for (std::size_t kj = 0; kj < 3; ++kj) {
                const long yy = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= 6 || xx >= 5) continue;
                acc += w[((o * 3 + c) * 3 + ki) * 3 + kj] * x[((n * 3 + c) * 6 + yy) * 5 + xx];
              }
          worst = std::max(worst, std::abs(acc - y[((n * 4 + o) * oh + i) * ow + j]));
        }
  EXPECT_LT(worst, 1e-12);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  auto x = random_leaf({2, 3, 8, 8}, rng);
  auto w = random_leaf({4, 3, 3, 3}, rng);
  auto b = random_leaf({4}, rng);
  auto r = gradcheck([&] { return sum(conv2d(x, w, b, 1, 1)); }, {x, w, b});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  r = gradcheck([&] { return project(conv2d(x, w, b, 2, 1)); }, {x, w, b});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Conv2d, ShapeErrorsNameTheAxis) {
  try {
    conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor());
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos);
  }
  EXPECT_THROW(conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), Tensor()), DimensionError);
  EXPECT_THROW(conv2d(Tensor({1, 1, 4, 4}), Tensor({1, 1, 3, 3}), Tensor(), 0, 0), ContractError);
}

TEST(ConvTranspose2d, IsAdjointOfConv2d) {
  // <conv(x), y> == <x, convT(y)> for the same weights.
  Rng rng(6);
  auto x = random_tensor({1, 3, 8, 8}, rng);
  auto w = random_tensor({5, 3, 2, 2}, rng);
  auto y = random_tensor({1, 5, 4, 4}, rng);
  const double lhs = sum(mul(conv2d(x, w, Tensor(), 2, 0), y)).item();
  const double rhs = sum(mul(x, conv_transpose2d(y, w, Tensor(), {2, 0, 0}))).item();
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(ConvTranspose2d, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  auto x = random_leaf({2, 3, 3, 4}, rng);
  auto w = random_leaf({3, 2, 2, 2}, rng);
  auto b = random_leaf({2}, rng);
  auto r = gradcheck([&] { return project(conv_transpose2d(x, w, b, {2, 0, 0})); }, {x, w, b});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  auto z = one_minus(Tensor::ones({2, 3}));
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(relu(Tensor({2}, {-1.0, 2.0}))[0], 0.0);
  EXPECT_EQ(scale(Tensor({1}, {3.0}), -2.0)[0], -6.0);
}

TEST(Elementwise, DispatcherMatchesNamedOps) {
  Rng rng(8);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({2, 3}, rng, 0.5, 1.5);
  EXPECT_EQ(max_abs_diff(elementwise(ElementwiseOp::kDiv, a, &b).data(), div(a, b).data()), 0.0);
  EXPECT_EQ(max_abs_diff(elementwise(ElementwiseOp::kScale, a, nullptr, 3.0).data(), scale(a, 3.0).data()), 0.0);
  EXPECT_EQ(max_abs_diff(elementwise(ElementwiseOp::kSigmoid, a).data(), sigmoid(a).data()), 0.0);
}

TEST(Elementwise, MulGradientIsOtherOperand) {
  Rng rng(9);
  auto a = random_leaf({3, 4}, rng);
  auto b = random_leaf({3, 4}, rng);
  backward(sum(mul(a, b)));
  EXPECT_EQ(max_abs_diff(a.grad(), b.data()), 0.0);
  auto r = gradcheck([&] { return project(mul(a, b)); }, {a, b});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Elementwise, AllOpsMatchFiniteDifferences) {
  Rng rng(10);
  auto a = random_leaf({2, 3, 4}, rng);
  auto b = random_leaf({2, 1, 4}, rng, 0.5, 2.0);  // broadcast along axis 1
  for (auto op : {ElementwiseOp::kAdd, ElementwiseOp::kSub, ElementwiseOp::kMul, ElementwiseOp::kDiv}) {
    auto r = gradcheck([&] { return project(elementwise(op, a, &b)); }, {a, b});
    EXPECT_LT(r.max_rel_error, kTol) << static_cast<int>(op) << " " << r.worst;
  }
  for (auto op : {ElementwiseOp::kSigmoid, ElementwiseOp::kRelu, ElementwiseOp::kScale, ElementwiseOp::kOneMinus}) {
    auto r = gradcheck([&] { return project(elementwise(op, a, nullptr, 1.7)); }, {a});
    EXPECT_LT(r.max_rel_error, kTol) << static_cast<int>(op) << " " << r.worst;
  }
  auto r = gradcheck([&] { return project(add_scalar(a, 0.3)); }, {a});
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(Elementwise, NonBroadcastableShapesThrow) {
  EXPECT_THROW(add(Tensor({2, 3}), Tensor({3, 2})), DimensionError);
  EXPECT_THROW(add(Tensor({2, 3}), Tensor({3})), DimensionError);
  EXPECT_EQ(broadcast_shape({2, 1, 4}, {1, 3, 1}), (Shape{2, 3, 4}));
}

TEST(Pooling, GlobalAveragePool) {
  auto c = global_avg_pool(Tensor({1, 1, 3, 3}, 0.7));
  EXPECT_NEAR(c.item(), 0.7, 1e-15);
  EXPECT_EQ(global_avg_pool(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})).item(), 2.5);
  Rng rng(11);
  auto x = random_leaf({2, 3, 4, 5}, rng);
  backward(sum(global_avg_pool(x)));
  for (double g : x.grad()) EXPECT_NEAR(g, 1.0 / 20.0, 1e-15);
  auto r = gradcheck([&] { return project(global_avg_pool(x)); }, {x});
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(Pooling, TimeMean) {
  Rng rng(12);
  auto x = random_tensor({1, 2, 3, 3}, rng);
  EXPECT_LT(max_abs_diff(time_mean(repeat_leading(x, 4)).data(), x.data()), 1e-15);
  std::vector<double> v(2 * 4, 0.0);
  std::fill(v.begin() + 4, v.end(), 1.0);
  const auto half = time_mean(Tensor({2, 1, 1, 2, 2}, v));
  for (double m : half.data()) EXPECT_EQ(m, 0.5);
  auto s = random_leaf({3, 2, 2, 2, 2}, rng);
  backward(sum(time_mean(s)));
  for (double g : s.grad()) EXPECT_NEAR(g, 1.0 / 3.0, 1e-15);
  auto r = gradcheck([&] { return project(time_mean(s)); }, {s});
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(Reductions, MeanAxesAndReshape) {
  Rng rng(13);
  auto x = random_leaf({2, 3, 4}, rng);
  auto r = gradcheck([&] { return project(mean_axes(x, {0, 2})); }, {x});
  EXPECT_LT(r.max_rel_error, kTol);
  r = gradcheck([&] { return project(reshape(x, {6, 4})); }, {x});
  EXPECT_LT(r.max_rel_error, kTol);
  r = gradcheck([&] { return mean(mul(x, x)); }, {x});
  EXPECT_LT(r.max_rel_error, kTol);
  EXPECT_THROW(reshape(x, {5, 5}), DimensionError);
}

TEST(Backward, LinearLossGivesInput) {
  Rng rng(14);
  auto w = random_leaf({5}, rng);
  auto x = random_tensor({5}, rng);
  backward(sum(mul(w, x)));
  EXPECT_EQ(max_abs_diff(w.grad(), x.data()), 0.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Rng rng(15);
  auto w = random_leaf({4}, rng);
  auto x = random_tensor({4}, rng);
  auto loss = sum(mul(w, x));
  backward(loss);
  backward(loss);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(w.grad()[i], 2.0 * x[i]);
}

TEST(Backward, SumOfLossesIsSumOfGradients) {
  Rng rng(16);
  auto a = random_leaf({3, 3}, rng);
  auto b = random_leaf({3, 3}, rng);
  auto f1 = [&] { return sum(mul(sigmoid(a), b)); };
  auto f2 = [&] { return sum(relu(sub(a, b))); };
  backward(f1());
  backward(f2());
  const std::vector<double> ga(a.grad().begin(), a.grad().end());
  const std::vector<double> gb(b.grad().begin(), b.grad().end());
  a.zero_grad();
  b.zero_grad();
  Tape::active().clear();
  backward(add(f1(), f2()));
  EXPECT_LT(max_abs_diff(a.grad(), ga), 1e-14);
  EXPECT_LT(max_abs_diff(b.grad(), gb), 1e-14);
}

TEST(Backward, Contracts) {
  Rng rng(17);
  auto w = random_leaf({3}, rng);
  EXPECT_THROW(backward(mul(w, w)), ContractError);
  Tape::active().clear();
  EXPECT_NO_THROW(backward(Tensor::scalar(1.0)));
}

TEST(Backward, NoGradGuardStopsRecording) {
  Rng rng(18);
  auto w = random_leaf({3}, rng);
  Tape::active().clear();
  {
    NoGradGuard guard;
    auto y = mul(w, w);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(Tape::active().size(), 0u);
}

TEST(Determinism, RepeatedForwardBackwardIsBitIdentical) {
  auto run = [] {
    Rng rng(19);
    auto x = random_leaf({2, 3, 6, 6}, rng);
    auto w = random_leaf({4, 3, 3, 3}, rng);
    Tape::active().clear();
    backward(project(sigmoid(conv2d(x, w, Tensor(), 1, 1))));
    std::vector<double> out(x.grad().begin(), x.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}
