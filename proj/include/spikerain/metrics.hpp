#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "spikerain/tensor.hpp"

namespace spikerain {

struct SsimConfig {
  std::size_t window_size = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;

  void validate() const;
  /// Normalized 1-D Gaussian; the 2-D window is its outer product.
  std::vector<double> window_1d() const;
};

/// Mean local SSIM over all channels with a Gaussian window and zero padding
/// at the borders. x, y: [N,C,H,W]. Differentiable in both arguments.
Tensor ssim(const Tensor& x, const Tensor& y, const SsimConfig& cfg = {});

/// 1 - ssim(pred, target).
Tensor ssim_loss(const Tensor& pred, const Tensor& target, const SsimConfig& cfg = {});

/// Luma in [0,1] from RGB in [0,1], BT.601 with 8-bit studio offsets:
/// Y = (16 + 65.481 R + 128.553 G + 24.966 B) / 255.
/// Accepts [3,H,W] or [N,3,H,W]; returns [N,1,H,W].
Tensor rgb_to_y(const Tensor& rgb);

/// PSNR on the Y channel with peak 1. Identical inputs give +infinity.
double psnr_y(const Tensor& pred, const Tensor& target);

/// SSIM on the Y channel, as used for evaluation tables.
double ssim_y(const Tensor& pred, const Tensor& target, const SsimConfig& cfg = {});

struct MetricRecord {
  std::string name;
  double value = 0.0;
  std::string image_id;
};

/// Tab-separated `name value image_id` line. Infinite values print as "inf".
void write_metric_record(std::ostream& os, const MetricRecord& r);

}  // namespace spikerain
