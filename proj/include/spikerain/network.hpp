#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spikerain/layers.hpp"

namespace spikerain {

struct NetworkConfig {
  std::size_t time_steps = 4;
  std::size_t base_channels = 8;
  std::vector<std::size_t> stage_depths_enc{4, 4, 8};
  std::vector<std::size_t> stage_depths_dec{2, 2};
  LifConfig lif;
  bool use_mau = true;
  bool use_tdbn = true;
  bool use_frb = true;
  std::uint64_t seed = 0;

  void validate() const;
  /// Spatial extents must be multiples of this (one halving per extra stage).
  std::size_t spatial_multiple() const;
  std::size_t stage_channels(std::size_t stage) const { return base_channels << stage; }
};

/// Spiking residual block:
///   A = SCU(SCU(X)),  B = tdBN(Conv(X)),  out = MAU(A + B) + X
struct Srb {
  Scu first;
  Scu second;
  ConvLayer branch_conv;
  TdBnParams branch_bn;
  std::optional<Mau> attention;

  static Srb make(Rng& rng, std::size_t channels, bool with_mau, double v_threshold = 1.0);
  Tensor forward(const Tensor& x_seq, const ForwardContext& ctx) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Spiking encoder-decoder deraining network.
class Esdnet {
 public:
  explicit Esdnet(NetworkConfig cfg);

  const NetworkConfig& config() const { return cfg_; }

  /// rainy [N,3,H,W] -> derained [N,3,H,W]. Training mode uses batch
  /// statistics in every normalization layer.
  Tensor forward(const Tensor& rainy, bool training, SpikeTally* tally = nullptr) const;

  /// Every named tensor, including non-trainable running statistics.
  ParamList named_tensors() const;
  ParamList trainable_parameters() const;
  std::size_t trainable_parameter_count() const;

  /// Deep copy with independent parameter storage.
  Esdnet clone() const;

  const Srb& block(bool encoder, std::size_t stage, std::size_t index) const;
  ConvLayer& head() { return head_; }
  const ConvLayer& head() const { return head_; }

 private:
  ForwardContext context(bool training, SpikeTally* tally) const;

  NetworkConfig cfg_;
  ConvLayer stem_;
  std::vector<std::vector<Srb>> encoder_;
  std::vector<Scu> down_;
  std::vector<Scu> up_;
  std::vector<std::vector<Srb>> decoder_;
  std::optional<FrbParams> frb_;
  ConvLayer head_;
};

Tensor srb_forward(const Tensor& x_seq, const Srb& block, const ForwardContext& ctx);
Tensor esdnet_forward(const Tensor& rainy, const Esdnet& net, bool training = true);

enum class LayerKind { kConv, kUpsample, kLif, kTdbn, kMau, kFrb, kPool, kAdd };

std::string to_string(LayerKind kind);

/// One executed layer, shapes per sample (batch 1) and per time step.
struct LayerDescriptor {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  Shape in_shape;   // [C,H,W]
  Shape out_shape;  // [C,H,W]
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t params = 0;
  std::uint64_t macs = 0;      // multiply-accumulates A for one time step
  bool spiking_input = false;  // operand is a binary spike map
  bool temporal = false;       // executed once per time step
};

struct LayerGraph {
  std::size_t time_steps = 1;
  std::vector<LayerDescriptor> layers;

  std::size_t parameter_count() const;
};

/// MAC count recomputed from a conv/upsample descriptor's shapes.
std::uint64_t conv_macs(const LayerDescriptor& d);

LayerGraph export_layer_graph(const NetworkConfig& cfg, std::size_t height, std::size_t width);

}  // namespace spikerain
