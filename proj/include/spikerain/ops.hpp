#pragma once

#include <vector>

#include "spikerain/tensor.hpp"

namespace spikerain {

enum class ElementwiseOp { kAdd, kSub, kMul, kDiv, kSigmoid, kRelu, kScale, kOneMinus };

/// Dispatches to the named pointwise op. Binary ops take `b`; kScale uses
/// `factor`; unary ops ignore both.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b = nullptr,
                   double factor = 1.0);

// Binary ops broadcast over singleton axes. Operands must have equal rank.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor one_minus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Mean over the listed axes, keeping them as size-1 extents.
Tensor mean_axes(const Tensor& a, const std::vector<std::size_t>& axes);

/// [N,C,H,W] -> [N,C,1,1]
Tensor global_avg_pool(const Tensor& x);

/// [T,N,C,H,W] -> [N,C,H,W]
Tensor time_mean(const Tensor& x);

/// Zero-copy view with a new shape of equal element count.
Tensor reshape(const Tensor& a, Shape shape);

/// Stacks `count` copies of `a` along a new leading axis.
Tensor repeat_leading(const Tensor& a, std::size_t count);

/// Broadcast result shape, or DimensionError naming the first bad axis.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace spikerain
