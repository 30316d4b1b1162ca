#include <algorithm>

#include "spikerain/data.hpp"

namespace spikerain {

std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t tile, std::size_t overlap) {
  if (extent <= tile) return {0};
  const auto stride = tile - overlap;
  std::vector<std::size_t> origins;
  for (std::size_t p = 0; p + tile < extent; p += stride) origins.push_back(p);
  origins.push_back(extent - tile);
  return origins;
}

Tensor sliding_window_infer(const ImageModel& model, const Tensor& image, const TileOptions& opts) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw DimensionError("sliding_window_infer expects [3,H,W], got " + shape_str(image.shape()));
  }
  if (opts.multiple == 0 || opts.tile == 0 || opts.tile % opts.multiple != 0) {
    throw ContractError("tile size must be a positive multiple of " + std::to_string(opts.multiple));
  }
  if (opts.overlap >= opts.tile) throw ContractError("tile overlap must be smaller than the tile");

  const auto h = image.size(1);
  const auto w = image.size(2);
  auto round_up = [&](std::size_t v) { return (v + opts.multiple - 1) / opts.multiple * opts.multiple; };
  // Axes shorter than a tile are processed as one edge-padded tile.
  const auto tile_h = h < opts.tile ? round_up(h) : opts.tile;
  const auto tile_w = w < opts.tile ? round_up(w) : opts.tile;
  const auto ys = tile_origins(h, tile_h, h < opts.tile ? 0 : opts.overlap);
  const auto xs = tile_origins(w, tile_w, w < opts.tile ? 0 : opts.overlap);

  const auto src = image.data();
  std::vector<double> acc(3 * h * w, 0.0);
  std::vector<double> hits(h * w, 0.0);
  for (auto y0 : ys) {
    for (auto x0 : xs) {
      std::vector<double> patch(3 * tile_h * tile_w);
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < tile_h; ++y) {
          const auto sy = std::min(y0 + y, h - 1);
          for (std::size_t x = 0; x < tile_w; ++x) {
            const auto sx = std::min(x0 + x, w - 1);
            patch[(c * tile_h + y) * tile_w + x] = src[(c * h + sy) * w + sx];
          }
        }
      }
      const auto out = model(Tensor({1, 3, tile_h, tile_w}, std::move(patch)));
      if (out.numel() != 3 * tile_h * tile_w) {
        throw DimensionError("model returned " + shape_str(out.shape()) + " for a " +
                             std::to_string(tile_h) + "x" + std::to_string(tile_w) + " tile");
      }
      const auto od = out.data();
      for (std::size_t y = 0; y < tile_h && y0 + y < h; ++y) {
        for (std::size_t x = 0; x < tile_w && x0 + x < w; ++x) {
          // Running mean: identical contributions reproduce their value exactly.
          const double n = hits[(y0 + y) * w + x0 + x] += 1.0;
          for (std::size_t c = 0; c < 3; ++c) {
            auto& m = acc[(c * h + y0 + y) * w + x0 + x];
            m += (od[(c * tile_h + y) * tile_w + x] - m) / n;
          }
        }
      }
    }
  }
  return Tensor({3, h, w}, std::move(acc));
}

}  // namespace spikerain
