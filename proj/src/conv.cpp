#include "spikerain/conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <string>

namespace spikerain {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct Geometry {
  std::size_t c, h, w, kh, kw, stride, ph, pw, oh, ow;
  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return oh * ow; }
};

// Output columns [lo, hi) whose input index ox*stride + k - pad lands in [0, extent).
struct Span {
  std::size_t lo, hi;
};

Span valid_range(std::size_t k, std::size_t pad, std::size_t stride, std::size_t extent,
                 std::size_t out) {
  std::size_t lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  if (extent + pad <= k) return {0, 0};
  const std::size_t hi = std::min(out, (extent - 1 + pad - k) / stride + 1);
  return {std::min(lo, hi), hi};
}

// Flat input index of (channel c, row iy, column ox * stride + kj - pad); ox must be valid.
std::size_t input_offset(const Geometry& g, std::size_t c, std::size_t iy, std::size_t ox, std::size_t kj) {
  return (c * g.h + iy) * g.w + (ox * g.stride + kj - g.pw);
}

void im2col(const double* img, const Geometry& g, double* cols) {
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const auto ys = valid_range(ki, g.ph, g.stride, g.h, g.oh);
      for (std::size_t kj = 0; kj < g.kw; ++kj, ++r) {
        const auto xs = valid_range(kj, g.pw, g.stride, g.w, g.ow);
        double* row = cols + r * g.cols();
        std::fill(row, row + g.cols(), 0.0);
        for (std::size_t oy = ys.lo; oy < ys.hi; ++oy) {
          const double* src = img + input_offset(g, c, oy * g.stride + ki - g.ph, xs.lo, kj);
          double* dst = row + oy * g.ow;
          if (g.stride == 1) {
            std::copy(src, src + (xs.hi - xs.lo), dst + xs.lo);
          } else {
            for (std::size_t ox = xs.lo; ox < xs.hi; ++ox) dst[ox] = src[(ox - xs.lo) * g.stride];
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const Geometry& g, double* img) {
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const auto ys = valid_range(ki, g.ph, g.stride, g.h, g.oh);
      for (std::size_t kj = 0; kj < g.kw; ++kj, ++r) {
        const auto xs = valid_range(kj, g.pw, g.stride, g.w, g.ow);
        const double* row = cols + r * g.cols();
        for (std::size_t oy = ys.lo; oy < ys.hi; ++oy) {
          double* dst = img + input_offset(g, c, oy * g.stride + ki - g.ph, xs.lo, kj);
          const double* src = row + oy * g.ow;
          for (std::size_t ox = xs.lo; ox < xs.hi; ++ox) dst[(ox - xs.lo) * g.stride] += src[ox];
        }
      }
    }
  }
}

bool is_pointwise(const Geometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.ph == 0 && g.pw == 0;
}

void check_rank4(const Tensor& t, const char* what) {
  if (t.dim() != 4) {
    throw DimensionError(std::string(what) + " must be 4-D, got " + shape_str(t.shape()));
  }
}

void check_bias(const Tensor& bias, std::size_t channels) {
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != channels)) {
    throw DimensionError("bias axis 0 must have extent " + std::to_string(channels) + ", got " +
                         shape_str(bias.shape()));
  }
}

void accumulate(const Tensor& t, std::span<const double> g) {
  if (t.requires_grad()) t.impl()->accumulate_grad(g);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  return conv2d(input, weight, bias, Conv2dOptions{stride, padding, padding});
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& opts) {
  check_rank4(input, "conv2d input");
  check_rank4(weight, "conv2d weight");
  if (opts.stride == 0) throw ContractError("conv2d stride must be >= 1");
  const auto n = input.size(0);
  const auto cout = weight.size(0);
  if (weight.size(1) != input.size(1)) {
    throw DimensionError("conv2d channel axis 1 mismatch: input has " + std::to_string(input.size(1)) +
                         ", weight expects " + std::to_string(weight.size(1)));
  }
  check_bias(bias, cout);
  Geometry g{input.size(1), input.size(2), input.size(3), weight.size(2), weight.size(3),
             opts.stride,   opts.pad_h,    opts.pad_w,    0,              0};
  if (g.h + 2 * g.ph < g.kh) throw DimensionError("conv2d kernel does not fit axis 2 (height)");
  if (g.w + 2 * g.pw < g.kw) throw DimensionError("conv2d kernel does not fit axis 3 (width)");
  g.oh = (g.h + 2 * g.ph - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pw - g.kw) / g.stride + 1;

  const auto in_plane = g.c * g.h * g.w;
  const auto out_plane = cout * g.cols();
  std::vector<double> out(n * out_plane);
  std::vector<double> cols(is_pointwise(g) ? 0 : g.rows() * g.cols());
  ConstMapMat wmat(weight.data().data(), cout, g.rows());
  const auto x = input.data();
  for (std::size_t s = 0; s < n; ++s) {
    const double* src = x.data() + s * in_plane;
    if (!is_pointwise(g)) {
      im2col(src, g, cols.data());
      src = cols.data();
    }
    MapMat o(out.data() + s * out_plane, cout, g.cols());
    o.noalias() = wmat * ConstMapMat(src, g.rows(), g.cols());
    if (bias.defined()) {
      const auto b = bias.data();
      for (std::size_t c = 0; c < cout; ++c) o.row(c).array() += b[c];
    }
  }

  return detail::make_result(
      {n, cout, g.oh, g.ow}, std::move(out), {&input, &weight, &bias},
      [input, weight, bias, g, n, cout, in_plane, out_plane](std::span<const double> grad) {
        ConstMapMat wmat(weight.data().data(), cout, g.rows());
        std::vector<double> cols(g.rows() * g.cols());
        std::vector<double> gw(weight.requires_grad() ? weight.numel() : 0, 0.0);
        std::vector<double> gx(input.requires_grad() ? input.numel() : 0, 0.0);
        std::vector<double> gb(bias.defined() && bias.requires_grad() ? cout : 0, 0.0);
        const auto x = input.data();
        for (std::size_t s = 0; s < n; ++s) {
          ConstMapMat go(grad.data() + s * out_plane, cout, g.cols());
          if (!gw.empty()) {
            const double* src = x.data() + s * in_plane;
            if (!is_pointwise(g)) {
              im2col(src, g, cols.data());
              src = cols.data();
            }
            MapMat(gw.data(), cout, g.rows()).noalias() += go * ConstMapMat(src, g.rows(), g.cols()).transpose();
          }
          if (!gx.empty()) {
            if (is_pointwise(g)) {
              MapMat(gx.data() + s * in_plane, g.rows(), g.cols()).noalias() += wmat.transpose() * go;
            } else {
              MapMat(cols.data(), g.rows(), g.cols()).noalias() = wmat.transpose() * go;
              col2im(cols.data(), g, gx.data() + s * in_plane);
            }
          }
          if (!gb.empty()) {
            for (std::size_t c = 0; c < cout; ++c) gb[c] += go.row(c).sum();
          }
        }
        if (!gx.empty()) accumulate(input, gx);
        if (!gw.empty()) accumulate(weight, gw);
        if (!gb.empty()) accumulate(bias, gb);
      });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        const Conv2dOptions& opts) {
  check_rank4(input, "conv_transpose2d input");
  check_rank4(weight, "conv_transpose2d weight");
  if (opts.stride == 0) throw ContractError("conv_transpose2d stride must be >= 1");
  if (weight.size(0) != input.size(1)) {
    throw DimensionError("conv_transpose2d channel axis 1 mismatch: input has " +
                         std::to_string(input.size(1)) + ", weight expects " +
                         std::to_string(weight.size(0)));
  }
  const auto n = input.size(0);
  const auto cin = input.size(1);
  const auto cout = weight.size(1);
  check_bias(bias, cout);
  const auto ih = input.size(2);
  const auto iw = input.size(3);
  const auto kh = weight.size(2);
  const auto kw = weight.size(3);
  if ((ih - 1) * opts.stride + kh <= 2 * opts.pad_h || (iw - 1) * opts.stride + kw <= 2 * opts.pad_w) {
    throw DimensionError("conv_transpose2d padding exceeds output extent");
  }
  // The output plays the role of a conv2d input whose im2col grid is `input`.
  Geometry g{cout, (ih - 1) * opts.stride - 2 * opts.pad_h + kh,
             (iw - 1) * opts.stride - 2 * opts.pad_w + kw,
             kh, kw, opts.stride, opts.pad_h, opts.pad_w, ih, iw};
  const auto in_plane = cin * ih * iw;
  const auto out_plane = cout * g.h * g.w;
  std::vector<double> out(n * out_plane, 0.0);
  std::vector<double> cols(g.rows() * g.cols());
  ConstMapMat wmat(weight.data().data(), cin, g.rows());
  const auto x = input.data();
  for (std::size_t s = 0; s < n; ++s) {
    MapMat(cols.data(), g.rows(), g.cols()).noalias() =
        wmat.transpose() * ConstMapMat(x.data() + s * in_plane, cin, g.cols());
    col2im(cols.data(), g, out.data() + s * out_plane);
    if (bias.defined()) {
      const auto b = bias.data();
      for (std::size_t c = 0; c < cout; ++c) {
        double* plane = out.data() + s * out_plane + c * g.h * g.w;
        for (std::size_t i = 0; i < g.h * g.w; ++i) plane[i] += b[c];
      }
    }
  }

  return detail::make_result(
      {n, cout, g.h, g.w}, std::move(out), {&input, &weight, &bias},
      [input, weight, bias, g, n, cin, cout, in_plane, out_plane](std::span<const double> grad) {
        ConstMapMat wmat(weight.data().data(), cin, g.rows());
        std::vector<double> cols(g.rows() * g.cols());
        std::vector<double> gw(weight.requires_grad() ? weight.numel() : 0, 0.0);
        std::vector<double> gx(input.requires_grad() ? input.numel() : 0, 0.0);
        std::vector<double> gb(bias.defined() && bias.requires_grad() ? cout : 0, 0.0);
        const auto x = input.data();
        for (std::size_t s = 0; s < n; ++s) {
          im2col(grad.data() + s * out_plane, g, cols.data());
          ConstMapMat gc(cols.data(), g.rows(), g.cols());
          if (!gx.empty()) {
            MapMat(gx.data() + s * in_plane, cin, g.cols()).noalias() += wmat * gc;
          }
          if (!gw.empty()) {
            MapMat(gw.data(), cin, g.rows()).noalias() +=
                ConstMapMat(x.data() + s * in_plane, cin, g.cols()) * gc.transpose();
          }
          if (!gb.empty()) {
            for (std::size_t c = 0; c < cout; ++c) {
              const double* plane = grad.data() + s * out_plane + c * g.h * g.w;
              for (std::size_t i = 0; i < g.h * g.w; ++i) gb[c] += plane[i];
            }
          }
        }
        if (!gx.empty()) accumulate(input, gx);
        if (!gw.empty()) accumulate(weight, gw);
        if (!gb.empty()) accumulate(bias, gb);
      });
}

}  // namespace spikerain
