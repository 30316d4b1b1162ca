#include <gtest/gtest.h>
#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "spikerain/checkpoint.hpp"
#include "spikerain/data.hpp"
#include "spikerain/network.hpp"
#include "spikerain/ops.hpp"
#include "spikerain/run_config.hpp"
#include "test_support.hpp"

using namespace spikerain;
using namespace spikerain::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("spikerain_test_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int sh = 24; sh >= 0; sh -= 8) s.push_back(static_cast<char>((v >> sh) & 0xff));
}

void put_chunk(std::string& out, const char* type, const std::string& body) {
  put_u32(out, static_cast<std::uint32_t>(body.size()));
  std::string tagged = std::string(type, 4) + body;
  out += tagged;
  put_u32(out, static_cast<std::uint32_t>(
                   crc32(0, reinterpret_cast<const Bytef*>(tagged.data()), static_cast<uInt>(tagged.size()))));
}

/// Minimal PNG writer built from the file format, independent of libpng.
std::string handmade_png(std::uint32_t w, std::uint32_t h, std::uint8_t color_type, const std::vector<std::uint8_t>& px) {
  const std::size_t channels = color_type == 2 ? 3 : 1;
  std::string raw;
  for (std::uint32_t y = 0; y < h; ++y) {
    raw.push_back('\0');  // filter: none
    for (std::size_t x = 0; x < w * channels; ++x) raw.push_back(static_cast<char>(px[y * w * channels + x]));
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::string z(len, '\0');
  compress(reinterpret_cast<Bytef*>(z.data()), &len, reinterpret_cast<const Bytef*>(raw.data()),
           static_cast<uLong>(raw.size()));
  z.resize(len);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, w);
  put_u32(ihdr, h);
  ihdr += std::string{8, static_cast<char>(color_type), 0, 0, 0};
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", "");
  return out;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary);
  f << bytes;
}

}  // namespace

TEST(ImageIo, HandCraftedRgbPngLoadsExactly) {
  const auto dir = scratch("rgb");
  const std::vector<std::uint8_t> px{255, 0, 0, 0, 128, 255, 10, 20, 30, 0, 0, 0};
  write_bytes(dir / "a.png", handmade_png(2, 2, 2, px));
  const auto t = load_image(dir / "a.png");
  ASSERT_EQ(t.shape(), (Shape{3, 2, 2}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(t[c * 4 + i], px[i * 3 + c] / 255.0) << c << "," << i;
}

TEST(ImageIo, GrayscaleExpandsToThreeIdenticalChannels) {
  const auto dir = scratch("gray");
  write_bytes(dir / "g.png", handmade_png(2, 2, 0, {0, 51, 204, 255}));
  const auto t = load_image(dir / "g.png");
  ASSERT_EQ(t.shape(), (Shape{3, 2, 2}));
  const double expect[] = {0.0, 0.2, 0.8, 1.0};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(t[c * 4 + i], expect[i]);
}

TEST(ImageIo, RoundTripWithinHalfCode) {
  const auto dir = scratch("rt");
  Rng rng(1);
  auto x = random_tensor({3, 5, 7}, rng, 0.0, 1.0);
  for (int depth : {8, 16}) {
    const auto p = dir / ("x" + std::to_string(depth) + ".png");
    save_image(x, p, depth);
    const auto y = load_image(p);
    const double half = 0.5 / (depth == 8 ? 255.0 : 65535.0);
    EXPECT_LE(max_abs_diff(x.data(), y.data()), half + 1e-15) << depth;
  }
}

TEST(ImageIo, ClampsOutOfRangeAndAcceptsBatchOfOne) {
  const auto dir = scratch("clamp");
  save_image(Tensor({1, 3, 1, 2}, {-0.5, 1.5, 0.0, 1.0, 2.0, -1.0}), dir / "c.png");
  const auto t = load_image(dir / "c.png");
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[1], 1.0);
  EXPECT_EQ(t[4], 1.0);
  EXPECT_EQ(t[5], 0.0);
}

TEST(ImageIo, ErrorsCarryPath) {
  const auto dir = scratch("err");
  try {
    load_image(dir / "missing.png");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.png"), std::string::npos);
  }
  write_bytes(dir / "junk.png", "not a png at all");
  EXPECT_THROW(load_image(dir / "junk.png"), IoError);
  auto truncated = handmade_png(2, 2, 2, std::vector<std::uint8_t>(12, 7));
  truncated.resize(truncated.size() / 2);
  write_bytes(dir / "trunc.png", truncated);
  EXPECT_THROW(load_image(dir / "trunc.png"), IoError);
  EXPECT_THROW(save_image(Tensor({3, 2, 2}), dir / "x.png", 12), ContractError);
}

TEST(Rain, ZeroIntensityLeavesImageUnchanged) {
  const auto clean = procedural_image(24, 24, TextureKind::kMixed, 3);
  RainSynthConfig cfg;
  cfg.intensity = 0.0;
  const auto p = synth_rain(clean, cfg);
  EXPECT_EQ(max_abs_diff(p.rainy.data(), clean.data()), 0.0);
}

TEST(Rain, AdditiveDeterministicAndMonotone) {
  const auto clean = procedural_image(32, 32, TextureKind::kGradient, 4);
  RainSynthConfig cfg;
  cfg.seed = 9;
  const auto a = synth_rain(clean, cfg);
  const auto b = synth_rain(clean, cfg);
  EXPECT_EQ(max_abs_diff(a.rainy.data(), b.rainy.data()), 0.0);
  for (std::size_t i = 0; i < clean.numel(); ++i) ASSERT_GE(a.rainy[i], clean[i]);
  EXPECT_GT(mean(a.rainy).item(), mean(clean).item());
  Tensor prev = clean;
  for (double s : {0.2, 0.4, 0.8, 1.0}) {
    cfg.intensity = s;
    const auto r = synth_rain(clean, cfg).rainy;
    for (std::size_t i = 0; i < r.numel(); ++i) ASSERT_GE(r[i], prev[i]);
    prev = r;
  }
  cfg.seed = 10;
  EXPECT_GT(max_abs_diff(synth_rain(clean, cfg).rainy.data(), prev.data()), 0.0);
}

TEST(Rain, LayerScalesLinearlyWithIntensity) {
  RainSynthConfig cfg;
  cfg.intensity = 0.25;
  const auto a = rain_layer(20, 20, cfg);
  cfg.intensity = 0.5;
  const auto b = rain_layer(20, 20, cfg);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(b[i], 2.0 * a[i], 1e-15);
  cfg.intensity = 1.5;
  EXPECT_THROW(cfg.validate(), ContractError);
}

TEST(Rain, SyntheticPairsDeterministic) {
  const auto a = synthetic_pairs(3, 16, 20, 5);
  const auto b = synthetic_pairs(3, 16, 20, 5);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].rainy.shape(), (Shape{3, 16, 20}));
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(max_abs_diff(a[i].rainy.data(), b[i].rainy.data()), 0.0);
    for (double v : a[i].clean.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(PairDirectory, RoundTripSortedByName) {
  const auto dir = scratch("pairs");
  auto pairs = synthetic_pairs(3, 8, 8, 1);
  save_pair_directory(pairs, dir);
  const auto loaded = load_pair_directory(dir);
  ASSERT_EQ(loaded.size(), 3u);
  for (std::size_t i = 1; i < loaded.size(); ++i) EXPECT_LT(loaded[i - 1].id, loaded[i].id);
  for (const auto& l : loaded) EXPECT_LE(max_abs_diff(l.clean.data(), load_image(dir / "clean" / (l.id + ".png")).data()), 0.0);
  EXPECT_THROW(load_pair_directory(scratch("empty")), IoError);
}

TEST(Tiling, OriginsCoverExtent) {
  EXPECT_EQ(tile_origins(96, 64, 32), (std::vector<std::size_t>{0, 32}));
  EXPECT_EQ(tile_origins(100, 64, 32), (std::vector<std::size_t>{0, 32, 36}));
  EXPECT_EQ(tile_origins(40, 64, 32), (std::vector<std::size_t>{0}));
}

TEST(Tiling, IdentityModelIsExactForAnyTiling) {
  Rng rng(2);
  const auto img = random_tensor({3, 37, 53}, rng, 0.0, 1.0);
  const ImageModel identity = [](const Tensor& x) { return x; };
  for (auto [tile, overlap] : {std::pair<std::size_t, std::size_t>{16, 8}, {16, 0}, {24, 20}, {64, 32}, {8, 4}}) {
    const auto out = sliding_window_infer(identity, img, {tile, overlap, 4});
    EXPECT_EQ(out.shape(), img.shape());
    EXPECT_EQ(max_abs_diff(out.data(), img.data()), 0.0) << tile << "/" << overlap;
  }
}

TEST(Tiling, BlendWeightsSumToOne) {
  // A model returning all-ones shows the per-pixel weight sum directly.
  const auto img = Tensor({3, 45, 70}, 0.3);
  const ImageModel ones = [](const Tensor& x) { return Tensor(x.shape(), 1.0); };
  const auto out = sliding_window_infer(ones, img, {16, 12, 4});
  for (double v : out.data()) ASSERT_NEAR(v, 1.0, 1e-15);
}

TEST(Tiling, SingleTileEqualsDirectCall) {
  Rng rng(3);
  const auto img = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  const ImageModel sq = [](const Tensor& x) { return mul(x, x); };
  const auto out = sliding_window_infer(sq, img, {32, 16, 4});
  const auto direct = mul(img, img);
  EXPECT_EQ(max_abs_diff(out.data(), direct.data()), 0.0);
}

TEST(Tiling, SmallImageTakesPaddedPath) {
  Rng rng(4);
  const auto img = random_tensor({3, 10, 13}, rng, 0.0, 1.0);
  std::vector<Shape> seen;
  const ImageModel spy = [&](const Tensor& x) {
    seen.push_back(x.shape());
    return x;
  };
  const auto out = sliding_window_infer(spy, img, {64, 32, 8});
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_EQ(seen[0], (Shape{1, 3, 16, 16}));
  EXPECT_EQ(max_abs_diff(out.data(), img.data()), 0.0);
}

namespace {

struct TileGap {
  double mad;       // tiled vs whole, interior mean absolute difference
  double residual;  // whole-image output vs input, same region
};

TileGap tiled_vs_whole(double head_sd) {
  NetworkConfig cfg;
  cfg.base_channels = 4;
  cfg.time_steps = 2;
  cfg.stage_depths_enc = {1, 1};
  cfg.stage_depths_dec = {1};
  cfg.seed = 3;
  Esdnet net(cfg);
  Rng rng(7);
  for (auto& p : net.named_tensors()) {
    if (p.name.rfind("head", 0) == 0 && p.name.find("weight") != std::string::npos) {
      for (auto& v : p.tensor.mutable_data()) v = std::normal_distribution<double>(0.0, head_sd)(rng);
    }
  }
  const auto img = procedural_image(96, 96, TextureKind::kMixed, 2);
  NoGradGuard guard;
  const ImageModel model = [&](const Tensor& x) { return net.forward(x, false); };
  const auto tiled = sliding_window_infer(model, img, {64, 32, cfg.spatial_multiple()});
  const auto whole = net.forward(reshape(img, {1, 3, 96, 96}), false);
  TileGap g{0.0, 0.0};
  std::size_t n = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 16; y < 80; ++y)
      for (std::size_t x = 16; x < 80; ++x, ++n) {
        const auto i = (c * 96 + y) * 96 + x;
        g.mad += std::abs(tiled[i] - whole[i]);
        g.residual += std::abs(whole[i] - img[i]);
      }
  g.mad /= static_cast<double>(n);
  g.residual /= static_cast<double>(n);
  return g;
}

}  // namespace

TEST(Tiling, RandomNetworkTiledCloseToWholeImage) {
  // Tile borders truncate the receptive field and the pooled gates see only
  // the tile, so the gap scales with how much the network changes the image.
  const auto small = tiled_vs_whole(0.01);
  EXPECT_GT(small.residual, 0.01);
  EXPECT_LT(small.mad, 1e-3);
  const auto large = tiled_vs_whole(0.05);
  EXPECT_LT(large.mad, 0.1 * large.residual);
}

TEST(Tiling, InvalidOptionsRejected) {
  const ImageModel id = [](const Tensor& x) { return x; };
  const Tensor img({3, 8, 8});
  EXPECT_THROW(sliding_window_infer(id, img, {10, 2, 4}), ContractError);
  EXPECT_THROW(sliding_window_infer(id, img, {8, 8, 4}), ContractError);
  EXPECT_THROW(sliding_window_infer(id, Tensor({1, 8, 8}), {8, 4, 4}), DimensionError);
}

TEST(Checkpoint, RoundTripReproducesForwardBitExactly) {
  const auto dir = scratch("ckpt");
  NetworkConfig cfg;
  cfg.base_channels = 4;
  cfg.time_steps = 2;
  cfg.stage_depths_enc = {1, 1};
  cfg.stage_depths_dec = {1};
  cfg.seed = 1;
  Esdnet a(cfg);
  Rng rng(5);
  for (auto& p : a.named_tensors())
    for (auto& v : p.tensor.mutable_data()) v += std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  save_checkpoint(dir / "m.ckpt", a.named_tensors(), "net.seed = 1\n");
  cfg.seed = 2;
  Esdnet b(cfg);
  const auto ck = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.meta, "net.seed = 1\n");
  restore_into(b.named_tensors(), ck);
  const auto x = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
  NoGradGuard guard;
  EXPECT_EQ(max_abs_diff(a.forward(x, false).data(), b.forward(x, false).data()), 0.0);
}

TEST(Checkpoint, F32EntriesWidenOnLoad) {
  ParamList p{{"w", Tensor({2}, {0.1, 3.0}), true}};
  const auto ck = decode_checkpoint(encode_checkpoint(p, "", CheckpointDtype::kF32));
  ASSERT_NE(ck.find("w"), nullptr);
  EXPECT_EQ(ck.find("w")->tensor[0], static_cast<double>(0.1f));
  EXPECT_EQ(ck.find("w")->tensor[1], 3.0);
  EXPECT_EQ(ck.find("nope"), nullptr);
}

TEST(Checkpoint, MalformedOrMismatchedRejected) {
  ParamList p{{"w", Tensor({2}, {1.0, 2.0}), true}};
  auto bytes = encode_checkpoint(p, "m");
  EXPECT_EQ(bytes.substr(0, 8), std::string("SPKRAIN\0", 8));
  EXPECT_THROW(decode_checkpoint("garbage"), IoError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  const auto ck = decode_checkpoint(bytes);
  ParamList wrong_shape{{"w", Tensor({3}), true}};
  EXPECT_THROW(restore_into(wrong_shape, ck), IoError);
  ParamList missing{{"v", Tensor({2}), true}};
  EXPECT_THROW(restore_into(missing, ck), IoError);
  EXPECT_THROW(load_checkpoint(scratch("nock") / "absent.ckpt"), IoError);
}

TEST(RunConfig, ParseRoundTripAndRejectUnknownKeys) {
  const auto cfg = parse_run_config(
      "# desk run\n"
      "net.time_steps = 2\n"
      "net.base_channels = 8   # trailing comment\n"
      "net.enc_depths = 1, 1\n"
      "net.dec_depths = 1\n"
      "net.use_mau = false\n"
      "train.lr_init = 2e-3\n"
      "train.non_finite = abort\n"
      "energy.sparsity = 0.25\n"
      "data.dir = /tmp/pairs\n");
  EXPECT_EQ(cfg.net.time_steps, 2u);
  EXPECT_EQ(cfg.net.stage_depths_enc, (std::vector<std::size_t>{1, 1}));
  EXPECT_FALSE(cfg.net.use_mau);
  EXPECT_EQ(cfg.train.lr_init, 2e-3);
  EXPECT_EQ(cfg.train.non_finite, NonFinitePolicy::kAbort);
  EXPECT_EQ(cfg.energy.sparsity, 0.25);
  EXPECT_EQ(cfg.data.dir, "/tmp/pairs");

  const auto again = parse_run_config(to_text(cfg));
  EXPECT_EQ(to_text(again), to_text(cfg));

  EXPECT_THROW(parse_run_config("net.bogus = 1\n"), ContractError);
  EXPECT_THROW(parse_run_config("net.time_steps 2\n"), ContractError);
  EXPECT_THROW(parse_run_config("net.time_steps = two\n"), ContractError);
  EXPECT_THROW(parse_run_config("train.lr_init = 1e-9\n"), ContractError);
  EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), IoError);
}
