#include "spikerain/ops.hpp"

#include <algorithm>
#include <cmath>

namespace spikerain {

namespace {

void accumulate(const Tensor& t, std::span<const double> g) {
  if (t.requires_grad()) t.impl()->accumulate_grad(g);
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Maps each output linear index to the matching input offset under
// singleton-axis broadcasting.
std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t d = rank; d-- > 0;) {
    in_stride[d] = in[d] == 1 ? 0 : s;
    s *= in[d];
  }
  std::vector<std::size_t> offsets(shape_numel(out));
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    offsets[i] = off;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      off += in_stride[d];
      if (idx[d] < out[d]) break;
      off -= in_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return offsets;
}

struct BroadcastPlan {
  Shape out;
  bool a_same = true;
  bool b_same = true;
  std::vector<std::size_t> a_off;
  std::vector<std::size_t> b_off;

  BroadcastPlan(const Shape& a, const Shape& b) : out(broadcast_shape(a, b)) {
    a_same = a == out;
    b_same = b == out;
    if (!a_same) a_off = broadcast_offsets(a, out);
    if (!b_same) b_off = broadcast_offsets(b, out);
  }
  std::size_t ai(std::size_t i) const { return a_same ? i : a_off[i]; }
  std::size_t bi(std::size_t i) const { return b_same ? i : b_off[i]; }
};

template <typename Fwd, typename GradA, typename GradB>
Tensor binary_op(const Tensor& a, const Tensor& b, Fwd fwd, GradA grad_a, GradB grad_b) {
  auto plan = std::make_shared<BroadcastPlan>(a.shape(), b.shape());
  const auto n = shape_numel(plan->out);
  std::vector<double> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[plan->ai(i)], bd[plan->bi(i)]);
  return detail::make_result(plan->out, std::move(out), {&a, &b},
                             [a, b, plan, grad_a, grad_b](std::span<const double> g) {
                               const auto ad = a.data();
                               const auto bd = b.data();
                               if (a.requires_grad()) {
                                 std::vector<double> ga(a.numel(), 0.0);
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   const auto ia = plan->ai(i);
                                   ga[ia] += g[i] * grad_a(ad[ia], bd[plan->bi(i)]);
                                 }
                                 accumulate(a, ga);
                               }
                               if (b.requires_grad()) {
                                 std::vector<double> gb(b.numel(), 0.0);
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   const auto ib = plan->bi(i);
                                   gb[ib] += g[i] * grad_b(ad[plan->ai(i)], bd[ib]);
                                 }
                                 accumulate(b, gb);
                               }
                             });
}

template <typename Fwd, typename Deriv>
Tensor unary_op(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
  auto saved_out = std::make_shared<std::vector<double>>(out);
  return detail::make_result(a.shape(), std::move(out), {&a},
                             [a, saved_out, deriv](std::span<const double> g) {
                               const auto ad = a.data();
                               std::vector<double> ga(g.size());
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 ga[i] = g[i] * deriv(ad[i], (*saved_out)[i]);
                               }
                               accumulate(a, ga);
                             });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a.size() != b.size()) {
    throw DimensionError("rank mismatch: " + shape_str(a) + " vs " + shape_str(b));
  }
  Shape out(a.size());
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (a[d] == b[d] || b[d] == 1) {
      out[d] = a[d];
    } else if (a[d] == 1) {
      out[d] = b[d];
    } else {
      throw DimensionError("cannot broadcast axis " + std::to_string(d) + ": " + shape_str(a) +
                           " vs " + shape_str(b));
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_op(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor one_minus(const Tensor& a) {
  return unary_op(
      a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b, double factor) {
  auto need_b = [&]() -> const Tensor& {
    if (!b || !b->defined()) throw ContractError("binary elementwise op needs a second operand");
    return *b;
  };
  switch (op) {
    case ElementwiseOp::kAdd: return add(a, need_b());
    case ElementwiseOp::kSub: return sub(a, need_b());
    case ElementwiseOp::kMul: return mul(a, need_b());
    case ElementwiseOp::kDiv: return div(a, need_b());
    case ElementwiseOp::kSigmoid: return sigmoid(a);
    case ElementwiseOp::kRelu: return relu(a);
    case ElementwiseOp::kScale: return scale(a, factor);
    case ElementwiseOp::kOneMinus: return one_minus(a);
  }
  throw ContractError("unknown elementwise op");
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result({}, {s}, {&a}, [a](std::span<const double> g) {
    accumulate(a, std::vector<double>(a.numel(), g[0]));
  });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result({}, {s * inv}, {&a}, [a, inv](std::span<const double> g) {
    accumulate(a, std::vector<double>(a.numel(), g[0] * inv));
  });
}

Tensor mean_axes(const Tensor& a, const std::vector<std::size_t>& axes) {
  Shape out_shape = a.shape();
  std::size_t count = 1;
  for (auto ax : axes) {
    if (ax >= out_shape.size()) {
      throw DimensionError("reduction axis " + std::to_string(ax) + " out of range for " +
                           shape_str(a.shape()));
    }
    if (out_shape[ax] == 0) throw DimensionError("reduction over empty axis " + std::to_string(ax));
    count *= out_shape[ax];
    out_shape[ax] = 1;
  }
  auto offsets = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(out_shape, a.shape()));
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<double> out(shape_numel(out_shape), 0.0);
  const auto ad = a.data();
  for (std::size_t i = 0; i < ad.size(); ++i) out[(*offsets)[i]] += ad[i];
  for (auto& v : out) v *= inv;
  return detail::make_result(out_shape, std::move(out), {&a},
                             [a, offsets, inv](std::span<const double> g) {
                               std::vector<double> ga(a.numel());
                               for (std::size_t i = 0; i < ga.size(); ++i) {
                                 ga[i] = g[(*offsets)[i]] * inv;
                               }
                               accumulate(a, ga);
                             });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.dim() != 4) throw DimensionError("global_avg_pool expects [N,C,H,W], got " + shape_str(x.shape()));
  return mean_axes(x, {2, 3});
}

Tensor time_mean(const Tensor& x) {
  if (x.dim() < 1 || x.size(0) == 0) {
    throw DimensionError("time_mean expects a non-empty leading time axis, got " + shape_str(x.shape()));
  }
  auto m = mean_axes(x, {0});
  Shape s(x.shape().begin() + 1, x.shape().end());
  return reshape(m, std::move(s));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->storage = a.impl()->storage;
  Tensor out(std::move(impl));
  if (detail::needs_grad({&a})) {
    auto& o = *out.impl();
    o.requires_grad = true;
    o.is_leaf = false;
    o.backward = [a](std::span<const double> g) { accumulate(a, g); };
    Tape::active().record(out.impl());
  }
  return out;
}

Tensor repeat_leading(const Tensor& a, std::size_t count) {
  if (count == 0) throw ContractError("repeat count must be positive");
  Shape s{count};
  s.insert(s.end(), a.shape().begin(), a.shape().end());
  const auto ad = a.data();
  std::vector<double> out;
  out.reserve(ad.size() * count);
  for (std::size_t t = 0; t < count; ++t) out.insert(out.end(), ad.begin(), ad.end());
  return detail::make_result(std::move(s), std::move(out), {&a},
                             [a, count](std::span<const double> g) {
                               const auto n = a.numel();
                               std::vector<double> ga(n, 0.0);
                               for (std::size_t t = 0; t < count; ++t) {
                                 for (std::size_t i = 0; i < n; ++i) ga[i] += g[t * n + i];
                               }
                               accumulate(a, ga);
                             });
}

}  // namespace spikerain
