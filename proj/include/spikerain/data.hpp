#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "spikerain/tensor.hpp"

namespace spikerain {

struct ImagePair {
  Tensor rainy;  // [3,H,W] in [0,1]
  Tensor clean;  // [3,H,W] in [0,1]
  std::string id;
};

/// Reads an 8- or 16-bit PNG into [3,H,W] with values in [0,1]. Grayscale is
/// expanded to three channels and alpha is dropped.
Tensor load_image(const std::filesystem::path& path);

/// Writes [3,H,W] (or [1,3,H,W]) as PNG, clamping to [0,1] and rounding to
/// the nearest code. bit_depth is 8 or 16.
void save_image(const Tensor& image, const std::filesystem::path& path, int bit_depth = 8);

struct RainSynthConfig {
  std::size_t streak_count = 60;
  double streak_length_px = 10.0;
  double angle_deg = 75.0;  // measured from the horizontal axis
  double angle_jitter_deg = 8.0;
  double intensity = 0.6;
  double gaussian_blur_sigma = 0.7;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Rain streak layer in [0, intensity] for an H x W image, same for every
/// colour channel. Deterministic per seed; scales linearly with intensity.
Tensor rain_layer(std::size_t height, std::size_t width, const RainSynthConfig& cfg);

/// rainy = clamp(clean + streak layer, 0, 1).
ImagePair synth_rain(const Tensor& clean, const RainSynthConfig& cfg, std::string id = {});

enum class TextureKind { kGradient, kCheckers, kValueNoise, kMixed };

/// Procedural clean image [3,H,W] in [0,1].
Tensor procedural_image(std::size_t height, std::size_t width, TextureKind kind, std::uint64_t seed);

/// Synthetic training pairs: procedural textures with seeded rain.
std::vector<ImagePair> synthetic_pairs(std::size_t count, std::size_t height, std::size_t width,
                                       std::uint64_t seed, const RainSynthConfig& rain = {});

/// Loads `<dir>/rainy/<name>` and `<dir>/clean/<name>` pairs, sorted by name.
std::vector<ImagePair> load_pair_directory(const std::filesystem::path& dir);

/// Writes pairs in the layout read by load_pair_directory.
void save_pair_directory(const std::vector<ImagePair>& pairs, const std::filesystem::path& dir);

/// Maps an image batch [1,3,h,w] to a same-shape output.
using ImageModel = std::function<Tensor(const Tensor&)>;

struct TileOptions {
  std::size_t tile = 64;
  std::size_t overlap = 32;
  std::size_t multiple = 4;  // spatial divisibility required by the model
};

/// Runs `model` over overlapping tiles of image [3,H,W] and averages the
/// overlaps uniformly. Edge tiles are shifted inward; images smaller than a
/// tile are edge-padded to a valid extent and cropped back.
Tensor sliding_window_infer(const ImageModel& model, const Tensor& image, const TileOptions& opts);

/// Tile origins along one axis of the given extent.
std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t tile, std::size_t overlap);

}  // namespace spikerain
