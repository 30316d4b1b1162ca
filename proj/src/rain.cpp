#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "spikerain/data.hpp"

namespace spikerain {

void RainSynthConfig::validate() const {
  if (!(intensity >= 0.0 && intensity <= 1.0)) throw ContractError("rain intensity must lie in [0,1]");
  if (!(streak_length_px > 0.0)) throw ContractError("streak length must be > 0");
  if (gaussian_blur_sigma < 0.0) throw ContractError("blur sigma must be >= 0");
}

namespace {

void blur_plane(std::vector<double>& plane, std::size_t h, std::size_t w, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  std::vector<double> tmp(plane.size());
  const int H = static_cast<int>(h), W = static_cast<int>(w);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * plane[y * W + clampi(x + i, W)];
      tmp[y * W + x] = s;
    }
  }
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp[clampi(y + i, H) * W + x];
      plane[y * W + x] = s;
    }
  }
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

}  // namespace

Tensor rain_layer(std::size_t height, std::size_t width, const RainSynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> plane(height * width, 0.0);
  const double margin = cfg.streak_length_px;
  for (std::size_t s = 0; s < cfg.streak_count; ++s) {
    const double x0 = -margin + unit(rng) * (static_cast<double>(width) + 2 * margin);
    const double y0 = -margin + unit(rng) * (static_cast<double>(height) + 2 * margin);
    const double angle = (cfg.angle_deg + (2.0 * unit(rng) - 1.0) * cfg.angle_jitter_deg) *
                         std::numbers::pi / 180.0;
    const double length = cfg.streak_length_px * (0.5 + unit(rng));
    const double brightness = 0.6 + 0.4 * unit(rng);
    const double dx = std::cos(angle);
    const double dy = std::sin(angle);
    for (double t = 0.0; t <= length; t += 0.5) {
      const auto px = static_cast<long>(std::lround(x0 + t * dx));
      const auto py = static_cast<long>(std::lround(y0 + t * dy));
      if (px < 0 || py < 0 || px >= static_cast<long>(width) || py >= static_cast<long>(height)) continue;
      auto& v = plane[static_cast<std::size_t>(py) * width + static_cast<std::size_t>(px)];
      v = std::max(v, brightness);
    }
  }
  blur_plane(plane, height, width, cfg.gaussian_blur_sigma);
  for (auto& v : plane) v *= cfg.intensity;
  return Tensor({height, width}, std::move(plane));
}

ImagePair synth_rain(const Tensor& clean, const RainSynthConfig& cfg, std::string id) {
  if (clean.dim() != 3 || clean.size(0) != 3) {
    throw DimensionError("synth_rain expects [3,H,W], got " + shape_str(clean.shape()));
  }
  const auto h = clean.size(1);
  const auto w = clean.size(2);
  const auto layer = rain_layer(h, w, cfg);
  Tensor rainy(clean.shape());
  auto out = rainy.mutable_data();
  const auto in = clean.data();
  const auto l = layer.data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < h * w; ++i) out[c * h * w + i] = std::clamp(in[c * h * w + i] + l[i], 0.0, 1.0);
  }
  return {rainy, clean.clone(), std::move(id)};
}

Tensor procedural_image(std::size_t height, std::size_t width, TextureKind kind, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor img({3, height, width});
  auto d = img.mutable_data();
  const auto plane = height * width;
  auto fy = [&](std::size_t y) { return height > 1 ? static_cast<double>(y) / (height - 1) : 0.0; };
  auto fx = [&](std::size_t x) { return width > 1 ? static_cast<double>(x) / (width - 1) : 0.0; };

  auto gradient = [&](std::vector<double>& out) {
    const double theta = unit(rng) * 2.0 * std::numbers::pi;
    double lo[3], hi[3];
    for (int c = 0; c < 3; ++c) {
      lo[c] = 0.1 + 0.4 * unit(rng);
      hi[c] = 0.5 + 0.4 * unit(rng);
    }
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double t = 0.5 + 0.5 * (std::cos(theta) * (fx(x) - 0.5) + std::sin(theta) * (fy(y) - 0.5)) * 1.4;
        const double tc = std::clamp(t, 0.0, 1.0);
        for (int c = 0; c < 3; ++c) out[c * plane + y * width + x] = lo[c] + (hi[c] - lo[c]) * tc;
      }
    }
  };
  auto checkers = [&](std::vector<double>& out) {
    const auto period = 2 + static_cast<std::size_t>(unit(rng) * 6.0);
    double a[3], b[3];
    for (int c = 0; c < 3; ++c) {
      a[c] = 0.15 + 0.3 * unit(rng);
      b[c] = 0.55 + 0.3 * unit(rng);
    }
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const bool odd = ((y / period) + (x / period)) % 2 == 1;
        for (int c = 0; c < 3; ++c) out[c * plane + y * width + x] = odd ? a[c] : b[c];
      }
    }
  };
  auto noise = [&](std::vector<double>& out) {
    for (int c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) out[c * plane + y * width + x] = 0.0;
      }
    }
    double amplitude = 0.5;
    for (std::size_t cells : {4u, 8u}) {
      const auto n = cells + 1;
      std::vector<double> lattice(3 * n * n);
      for (auto& v : lattice) v = unit(rng);
      for (int c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < height; ++y) {
          const double gy = fy(y) * cells;
          const auto iy = std::min(static_cast<std::size_t>(gy), cells - 1);
          const double ty = smoothstep(gy - iy);
          for (std::size_t x = 0; x < width; ++x) {
            const double gx = fx(x) * cells;
            const auto ix = std::min(static_cast<std::size_t>(gx), cells - 1);
            const double tx = smoothstep(gx - ix);
            const double* L = lattice.data() + c * n * n;
            const double top = L[iy * n + ix] * (1 - tx) + L[iy * n + ix + 1] * tx;
            const double bot = L[(iy + 1) * n + ix] * (1 - tx) + L[(iy + 1) * n + ix + 1] * tx;
            out[c * plane + y * width + x] += amplitude * (top * (1 - ty) + bot * ty);
          }
        }
      }
      amplitude *= 0.5;
    }
    for (auto& v : out) v = 0.1 + 0.8 * std::clamp(v / 0.75, 0.0, 1.0);
  };

  std::vector<double> buf(3 * plane);
  switch (kind) {
    case TextureKind::kGradient: gradient(buf); break;
    case TextureKind::kCheckers: checkers(buf); break;
    case TextureKind::kValueNoise: noise(buf); break;
    case TextureKind::kMixed: {
      std::vector<double> a(3 * plane), b(3 * plane), c(3 * plane);
      gradient(a);
      checkers(b);
      noise(c);
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = 0.4 * a[i] + 0.2 * b[i] + 0.4 * c[i];
      break;
    }
  }
  std::copy(buf.begin(), buf.end(), d.begin());
  return img;
}

std::vector<ImagePair> synthetic_pairs(std::size_t count, std::size_t height, std::size_t width,
                                       std::uint64_t seed, const RainSynthConfig& rain) {
  static constexpr TextureKind kinds[] = {TextureKind::kMixed, TextureKind::kValueNoise,
                                          TextureKind::kCheckers, TextureKind::kGradient};
  std::vector<ImagePair> pairs;
  for (std::size_t i = 0; i < count; ++i) {
    const auto clean = procedural_image(height, width, kinds[i % 4], seed * 7919 + i);
    auto cfg = rain;
    cfg.seed = seed * 104729 + 31 * i + 1;
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%04zu", i);
    pairs.push_back(synth_rain(clean, cfg, id));
  }
  return pairs;
}

std::vector<ImagePair> load_pair_directory(const std::filesystem::path& dir) {
  const auto rainy_dir = dir / "rainy";
  const auto clean_dir = dir / "clean";
  if (!std::filesystem::is_directory(rainy_dir) || !std::filesystem::is_directory(clean_dir)) {
    throw IoError("'" + dir.string() + "' must contain rainy/ and clean/ subdirectories");
  }
  std::vector<std::filesystem::path> names;
  for (const auto& e : std::filesystem::directory_iterator(rainy_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename());
  }
  std::sort(names.begin(), names.end());
  std::vector<ImagePair> pairs;
  for (const auto& n : names) {
    auto rainy = load_image(rainy_dir / n);
    auto clean = load_image(clean_dir / n);
    if (rainy.shape() != clean.shape()) {
      throw IoError("pair '" + n.string() + "' has mismatched shapes " + shape_str(rainy.shape()) +
                    " vs " + shape_str(clean.shape()));
    }
    pairs.push_back({std::move(rainy), std::move(clean), n.stem().string()});
  }
  return pairs;
}

void save_pair_directory(const std::vector<ImagePair>& pairs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "rainy");
  std::filesystem::create_directories(dir / "clean");
  for (const auto& p : pairs) {
    save_image(p.rainy, dir / "rainy" / (p.id + ".png"));
    save_image(p.clean, dir / "clean" / (p.id + ".png"));
  }
}

}  // namespace spikerain
