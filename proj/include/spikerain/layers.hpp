#pragma once

#include <random>
#include <string>
#include <vector>

#include "spikerain/conv.hpp"
#include "spikerain/neuron.hpp"
#include "spikerain/tensor.hpp"

namespace spikerain {

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

using ParamList = std::vector<NamedTensor>;

/// Convolution weights plus geometry. Transposed layers store weight as
/// [Cin,Cout,kh,kw]; regular ones as [Cout,Cin,kh,kw].
struct ConvLayer {
  Tensor weight;
  Tensor bias;  // undefined when the layer has no bias
  Conv2dOptions opts;
  bool transposed = false;

  static ConvLayer make(Rng& rng, std::size_t cin, std::size_t cout, std::size_t kernel,
                        std::size_t stride = 1, bool with_bias = true);
  static ConvLayer make_transposed(Rng& rng, std::size_t cin, std::size_t cout,
                                   std::size_t kernel, std::size_t stride, bool with_bias = true);

  std::size_t in_channels() const { return weight.size(transposed ? 0 : 1); }
  std::size_t out_channels() const { return weight.size(transposed ? 1 : 0); }
  std::size_t kernel_h() const { return weight.size(2); }
  std::size_t kernel_w() const { return weight.size(3); }

  Tensor forward(const Tensor& x) const;
  /// Applies the layer to every time slice of a [T,N,C,H,W] sequence.
  Tensor forward_seq(const Tensor& x_seq) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

enum class NormKind {
  kThresholdDependent,  // tdBN: statistics over (T,N,H,W), scaled by V_thr
  kPerStep,             // plain BN: statistics over (N,H,W) for each time step
};

struct TdBnParams {
  Tensor gamma;
  Tensor beta_shift;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double v_threshold_scale = 1.0;
  double momentum = 0.1;

  static TdBnParams make(std::size_t channels, double v_threshold_scale = 1.0);
  std::size_t channels() const { return gamma.numel(); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Threshold-dependent batch norm over a [T,N,C,H,W] sequence. In training
/// mode it normalizes with batch statistics and updates the running ones.
Tensor tdbn(const Tensor& x_seq, const TdBnParams& params, bool training);

/// Per-time-step batch norm with shared affine parameters and no threshold
/// scaling. Only used for the normalization ablation.
Tensor batch_norm_per_step(const Tensor& x_seq, const TdBnParams& params, bool training);

Tensor normalize(NormKind kind, const Tensor& x_seq, const TdBnParams& params, bool training);

struct ForwardContext {
  LifConfig lif;
  NormKind norm = NormKind::kThresholdDependent;
  bool training = true;
  SpikeTally* tally = nullptr;
};

/// Spike convolution unit: LIF -> conv -> tdBN.
struct Scu {
  ConvLayer conv;
  TdBnParams bn;

  /// v_threshold scales the tdBN output (tdBN's V_thr factor).
  static Scu make(Rng& rng, std::size_t cin, std::size_t cout, std::size_t stride = 1,
                  double v_threshold = 1.0);
  static Scu make_upsample(Rng& rng, std::size_t cin, std::size_t cout, double v_threshold = 1.0);
  Tensor forward(const Tensor& x_seq, const ForwardContext& ctx) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Mixed attention unit. Channel gate from the pooled time-mean feature and
/// a spatial gate from its channel-mean map; both shared across time.
struct Mau {
  ConvLayer channel_squeeze;  // 1x1, C -> C/4
  ConvLayer channel_excite;   // 1x1, C/4 -> C
  ConvLayer spatial;          // 7x7, 1 -> 1

  static Mau make(Rng& rng, std::size_t channels);
  Tensor forward(const Tensor& x_seq) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor mau(const Tensor& x_seq, const Mau& params);

/// Feature refinement block parameters.
///   Fhat = sigmoid(Conv(relu(Conv(GAP(Y)))))
///   F    = sigmoid(Conv(relu(Conv(Conv(Y)))))
///   out  = Y * F + (1 - F) * Fhat
struct FrbParams {
  ConvLayer pooled_squeeze;  // 1x1, C -> C/4
  ConvLayer pooled_excite;   // 1x1, C/4 -> C
  ConvLayer feature;         // 3x3, C -> C
  ConvLayer feature_squeeze; // 1x1, C -> C/4
  ConvLayer feature_excite;  // 1x1, C/4 -> C

  static FrbParams make(Rng& rng, std::size_t channels);
  std::size_t channels() const { return feature.in_channels(); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct FrbGates {
  Tensor pooled_gate;   // Fhat [N,C,1,1]
  Tensor feature_gate;  // F [N,C,H,W]
  Tensor output;
};

FrbGates frb_detailed(const Tensor& y, const FrbParams& params);
Tensor frb(const Tensor& y, const FrbParams& params);

std::size_t squeeze_width(std::size_t channels);

}  // namespace spikerain
