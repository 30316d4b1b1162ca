#pragma once

#include <cstddef>

#include "spikerain/tensor.hpp"

namespace spikerain {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;

  static Conv2dOptions same_padding(std::size_t kernel, std::size_t stride = 1) {
    return {stride, kernel / 2, kernel / 2};
  }
};

/// Cross-correlation. input [N,Cin,H,W], weight [Cout,Cin,kh,kw], optional
/// bias [Cout] (pass an undefined Tensor to skip). Output extent per axis is
/// (H + 2*pad - kh) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& opts = {});

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Gradient-of-conv2d as a forward op. input [N,Cin,H,W], weight
/// [Cin,Cout,kh,kw]. Output extent (H - 1) * stride - 2 * pad + kh.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        const Conv2dOptions& opts = {});

/// Applies a 4-D op to a [T,N,...] sequence by folding time into batch.
template <typename Fn>
Tensor fold_time(const Tensor& seq, Fn&& fn);

}  // namespace spikerain

#include "spikerain/ops.hpp"

namespace spikerain {

template <typename Fn>
Tensor fold_time(const Tensor& seq, Fn&& fn) {
  if (seq.dim() != 5) throw DimensionError("expected [T,N,C,H,W], got " + shape_str(seq.shape()));
  const auto t = seq.size(0);
  const auto n = seq.size(1);
  auto flat = reshape(seq, {t * n, seq.size(2), seq.size(3), seq.size(4)});
  auto out = fn(flat);
  return reshape(out, {t, n, out.size(1), out.size(2), out.size(3)});
}

}  // namespace spikerain
