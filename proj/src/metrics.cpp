#include "spikerain/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>

#include "spikerain/conv.hpp"
#include "spikerain/ops.hpp"

namespace spikerain {

void SsimConfig::validate() const {
  if (window_size == 0 || window_size % 2 == 0) throw ContractError("ssim window size must be odd");
  if (!(sigma > 0.0)) throw ContractError("ssim sigma must be > 0");
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw ContractError("ssim stabilizers must be > 0");
}

std::vector<double> SsimConfig::window_1d() const {
  std::vector<double> w(window_size);
  const double center = static_cast<double>(window_size / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < window_size; ++i) {
    const double d = static_cast<double>(i) - center;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

namespace {

Tensor gaussian_blur(const Tensor& planes, const SsimConfig& cfg) {
  const auto w = cfg.window_1d();
  const auto k = cfg.window_size;
  Tensor horizontal({1, 1, 1, k}, w);
  Tensor vertical({1, 1, k, 1}, w);
  auto h = conv2d(planes, horizontal, Tensor(), Conv2dOptions{1, 0, k / 2});
  return conv2d(h, vertical, Tensor(), Conv2dOptions{1, k / 2, 0});
}

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    for (std::size_t d = 0; d < std::min(a.dim(), b.dim()); ++d) {
      if (a.size(d) != b.size(d)) {
        throw DimensionError(std::string(what) + " shape mismatch on axis " + std::to_string(d) +
                             ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
      }
    }
    throw DimensionError(std::string(what) + " rank mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Tensor ssim(const Tensor& x, const Tensor& y, const SsimConfig& cfg) {
  cfg.validate();
  check_same(x, y, "ssim");
  if (x.dim() != 4) throw DimensionError("ssim expects [N,C,H,W], got " + shape_str(x.shape()));
  const Shape planes{x.size(0) * x.size(1), 1, x.size(2), x.size(3)};
  auto xp = reshape(x, planes);
  auto yp = reshape(y, planes);

  auto mu_x = gaussian_blur(xp, cfg);
  auto mu_y = gaussian_blur(yp, cfg);
  auto mu_xx = mul(mu_x, mu_x);
  auto mu_yy = mul(mu_y, mu_y);
  auto mu_xy = mul(mu_x, mu_y);
  auto var_x = sub(gaussian_blur(mul(xp, xp), cfg), mu_xx);
  auto var_y = sub(gaussian_blur(mul(yp, yp), cfg), mu_yy);
  auto cov = sub(gaussian_blur(mul(xp, yp), cfg), mu_xy);

  auto num = mul(add_scalar(scale(mu_xy, 2.0), cfg.c1), add_scalar(scale(cov, 2.0), cfg.c2));
  auto den = mul(add_scalar(add(mu_xx, mu_yy), cfg.c1), add_scalar(add(var_x, var_y), cfg.c2));
  return mean(div(num, den));
}

Tensor ssim_loss(const Tensor& pred, const Tensor& target, const SsimConfig& cfg) {
  return one_minus(ssim(pred, target, cfg));
}

Tensor rgb_to_y(const Tensor& rgb) {
  Tensor batched = rgb;
  if (rgb.dim() == 3) batched = reshape(rgb.detach(), {1, rgb.size(0), rgb.size(1), rgb.size(2)});
  if (batched.dim() != 4 || batched.size(1) != 3) {
    throw DimensionError("expected 3 colour channels on axis 1, got " + shape_str(rgb.shape()));
  }
  const auto n = batched.size(0);
  const auto plane = batched.size(2) * batched.size(3);
  const auto d = batched.data();
  std::vector<double> out(n * plane);
  for (std::size_t s = 0; s < n; ++s) {
    const double* r = d.data() + s * 3 * plane;
    const double* g = r + plane;
    const double* b = g + plane;
    for (std::size_t i = 0; i < plane; ++i) {
      out[s * plane + i] = (16.0 + 65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i]) / 255.0;
    }
  }
  return Tensor({n, 1, batched.size(2), batched.size(3)}, std::move(out));
}

double psnr_y(const Tensor& pred, const Tensor& target) {
  check_same(pred, target, "psnr_y");
  const auto yp = rgb_to_y(pred);
  const auto yt = rgb_to_y(target);
  double se = 0.0;
  for (std::size_t i = 0; i < yp.numel(); ++i) {
    const double e = yp[i] - yt[i];
    se += e * e;
  }
  const double mse = se / static_cast<double>(yp.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim_y(const Tensor& pred, const Tensor& target, const SsimConfig& cfg) {
  check_same(pred, target, "ssim_y");
  NoGradGuard guard;
  return ssim(rgb_to_y(pred), rgb_to_y(target), cfg).item();
}

void write_metric_record(std::ostream& os, const MetricRecord& r) {
  os << r.name << '\t';
  if (std::isinf(r.value)) {
    os << (r.value > 0 ? "inf" : "-inf");
  } else {
    os << std::setprecision(10) << r.value;
  }
  os << '\t' << r.image_id << '\n';
}

}  // namespace spikerain
