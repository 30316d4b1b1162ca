#include "spikerain/network.hpp"

#include <algorithm>

#include "spikerain/ops.hpp"

namespace spikerain {

void NetworkConfig::validate() const {
  lif.validate();
  if (time_steps < 1) throw ContractError("network time_steps must be >= 1");
  if (base_channels < 1) throw ContractError("network base_channels must be >= 1");
  if (stage_depths_enc.empty() || stage_depths_dec.empty()) {
    throw ContractError("stage depth lists must be nonempty");
  }
  if (stage_depths_dec.size() + 1 != stage_depths_enc.size()) {
    throw ContractError("decoder needs exactly one stage fewer than the encoder (got " +
                        std::to_string(stage_depths_enc.size()) + " encoder, " +
                        std::to_string(stage_depths_dec.size()) + " decoder)");
  }
}

std::size_t NetworkConfig::spatial_multiple() const {
  return std::size_t{1} << (stage_depths_enc.size() - 1);
}

Srb Srb::make(Rng& rng, std::size_t channels, bool with_mau, double v_threshold) {
  Srb b{Scu::make(rng, channels, channels, 1, v_threshold), Scu::make(rng, channels, channels, 1, v_threshold),
        ConvLayer::make(rng, channels, channels, 3, 1, false), TdBnParams::make(channels, v_threshold),
        std::nullopt};
  if (with_mau) b.attention = Mau::make(rng, channels);
  return b;
}

Tensor Srb::forward(const Tensor& x_seq, const ForwardContext& ctx) const {
  auto spiking = second.forward(first.forward(x_seq, ctx), ctx);
  auto dense = normalize(ctx.norm, branch_conv.forward_seq(x_seq), branch_bn, ctx.training);
  auto merged = add(spiking, dense);
  if (attention) merged = attention->forward(merged);
  return add(merged, x_seq);
}

void Srb::collect(const std::string& prefix, ParamList& out) const {
  first.collect(prefix + ".scu1", out);
  second.collect(prefix + ".scu2", out);
  branch_conv.collect(prefix + ".branch_conv", out);
  branch_bn.collect(prefix + ".branch_bn", out);
  if (attention) attention->collect(prefix + ".mau", out);
}

Tensor srb_forward(const Tensor& x_seq, const Srb& block, const ForwardContext& ctx) {
  return block.forward(x_seq, ctx);
}

Esdnet::Esdnet(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const auto stages = cfg_.stage_depths_enc.size();
  const double vthr = cfg_.lif.v_threshold;
  stem_ = ConvLayer::make(rng, 3, cfg_.base_channels, 3);
  for (std::size_t s = 0; s < stages; ++s) {
    const auto ch = cfg_.stage_channels(s);
    std::vector<Srb> blocks;
    for (std::size_t i = 0; i < cfg_.stage_depths_enc[s]; ++i) blocks.push_back(Srb::make(rng, ch, cfg_.use_mau, vthr));
    encoder_.push_back(std::move(blocks));
    if (s + 1 < stages) down_.push_back(Scu::make(rng, ch, ch * 2, 2, vthr));
  }
  for (std::size_t d = 0; d + 1 < stages; ++d) {
    const auto ch = cfg_.stage_channels(stages - 2 - d);
    up_.push_back(Scu::make_upsample(rng, ch * 2, ch, vthr));
    std::vector<Srb> blocks;
    for (std::size_t i = 0; i < cfg_.stage_depths_dec[d]; ++i) blocks.push_back(Srb::make(rng, ch, cfg_.use_mau, vthr));
    decoder_.push_back(std::move(blocks));
  }
  if (cfg_.use_frb) frb_ = FrbParams::make(rng, cfg_.base_channels);
  head_ = ConvLayer::make(rng, cfg_.base_channels, 3, 3);
  // Zero head + global residual makes the untrained network the identity.
  std::fill(head_.weight.mutable_data().begin(), head_.weight.mutable_data().end(), 0.0);
}

ForwardContext Esdnet::context(bool training, SpikeTally* tally) const {
  return {cfg_.lif, cfg_.use_tdbn ? NormKind::kThresholdDependent : NormKind::kPerStep, training,
          tally};
}

Tensor Esdnet::forward(const Tensor& rainy, bool training, SpikeTally* tally) const {
  if (rainy.dim() != 4 || rainy.size(1) != 3) {
    throw DimensionError("esdnet expects [N,3,H,W], got " + shape_str(rainy.shape()));
  }
  const auto mult = cfg_.spatial_multiple();
  if (rainy.size(2) % mult != 0 || rainy.size(3) % mult != 0 || rainy.size(2) == 0 ||
      rainy.size(3) == 0) {
    throw ContractError("esdnet input height and width must be positive multiples of " +
                        std::to_string(mult) + ", got " + shape_str(rainy.shape()));
  }
  const auto ctx = context(training, tally);
  auto f = stem_.forward_seq(direct_encode(rainy, cfg_.time_steps));
  std::vector<Tensor> skips;
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    for (const auto& b : encoder_[s]) f = b.forward(f, ctx);
    if (s < down_.size()) {
      skips.push_back(f);
      f = down_[s].forward(f, ctx);
    }
  }
  for (std::size_t d = 0; d < decoder_.size(); ++d) {
    f = add(up_[d].forward(f, ctx), skips[skips.size() - 1 - d]);
    for (const auto& b : decoder_[d]) f = b.forward(f, ctx);
  }
  auto decoded = time_mean(f);
  if (frb_) decoded = frb(decoded, *frb_);
  return add(head_.forward(decoded), rainy);
}

ParamList Esdnet::named_tensors() const {
  ParamList out;
  stem_.collect("stem", out);
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    for (std::size_t i = 0; i < encoder_[s].size(); ++i) {
      encoder_[s][i].collect("enc" + std::to_string(s) + ".srb" + std::to_string(i), out);
    }
    if (s < down_.size()) down_[s].collect("down" + std::to_string(s), out);
  }
  for (std::size_t d = 0; d < decoder_.size(); ++d) {
    up_[d].collect("up" + std::to_string(d), out);
    for (std::size_t i = 0; i < decoder_[d].size(); ++i) {
      decoder_[d][i].collect("dec" + std::to_string(d) + ".srb" + std::to_string(i), out);
    }
  }
  if (frb_) frb_->collect("frb", out);
  head_.collect("head", out);
  return out;
}

ParamList Esdnet::trainable_parameters() const {
  auto all = named_tensors();
  std::erase_if(all, [](const NamedTensor& t) { return !t.trainable; });
  return all;
}

std::size_t Esdnet::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : trainable_parameters()) n += p.tensor.numel();
  return n;
}

Esdnet Esdnet::clone() const {
  Esdnet copy(cfg_);
  auto src = named_tensors();
  auto dst = copy.named_tensors();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto d = dst[i].tensor.mutable_data();
    const auto s = src[i].tensor.data();
    std::copy(s.begin(), s.end(), d.begin());
  }
  return copy;
}

const Srb& Esdnet::block(bool encoder, std::size_t stage, std::size_t index) const {
  return (encoder ? encoder_ : decoder_).at(stage).at(index);
}

Tensor esdnet_forward(const Tensor& rainy, const Esdnet& net, bool training) {
  return net.forward(rainy, training);
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kUpsample: return "upsample";
    case LayerKind::kLif: return "lif";
    case LayerKind::kTdbn: return "tdbn";
    case LayerKind::kMau: return "mau";
    case LayerKind::kFrb: return "frb";
    case LayerKind::kPool: return "pool";
    case LayerKind::kAdd: return "add";
  }
  return "unknown";
}

std::size_t LayerGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.params;
  return n;
}

std::uint64_t conv_macs(const LayerDescriptor& d) {
  if (d.kind == LayerKind::kConv) {
    return std::uint64_t{d.out_shape[0]} * d.in_shape[0] * d.kernel_h * d.kernel_w *
           d.out_shape[1] * d.out_shape[2];
  }
  if (d.kind == LayerKind::kUpsample) {
    return std::uint64_t{d.in_shape[0]} * d.out_shape[0] * d.kernel_h * d.kernel_w *
           d.in_shape[1] * d.in_shape[2];
  }
  return 0;
}

namespace {

class GraphBuilder {
 public:
  explicit GraphBuilder(LayerGraph& g) : g_(g) {}

  Shape conv(const std::string& name, const Shape& in, std::size_t cout, std::size_t k,
             std::size_t stride, bool bias, bool spiking, bool temporal) {
    const auto pad = k / 2;
    Shape out{cout, (in[1] + 2 * pad - k) / stride + 1, (in[2] + 2 * pad - k) / stride + 1};
    LayerDescriptor d{name, LayerKind::kConv, in, out, k, k,
                      cout * in[0] * k * k + (bias ? cout : 0), 0, spiking, temporal};
    d.macs = conv_macs(d);
    g_.layers.push_back(d);
    return out;
  }

  Shape upsample(const std::string& name, const Shape& in, std::size_t cout) {
    Shape out{cout, in[1] * 2, in[2] * 2};
    LayerDescriptor d{name, LayerKind::kUpsample, in, out, 2, 2, in[0] * cout * 4, 0, true, true};
    d.macs = conv_macs(d);
    g_.layers.push_back(d);
    return out;
  }

  void simple(const std::string& name, LayerKind kind, const Shape& in, const Shape& out,
              std::size_t params, bool temporal) {
    g_.layers.push_back({name, kind, in, out, 0, 0, params, 0, false, temporal});
  }

  Shape scu(const std::string& name, const Shape& in, std::size_t cout, std::size_t stride) {
    simple(name + ".lif", LayerKind::kLif, in, in, 0, true);
    auto out = conv(name + ".conv", in, cout, 3, stride, false, true, true);
    simple(name + ".bn", LayerKind::kTdbn, out, out, 2 * cout, true);
    return out;
  }

  void srb(const std::string& name, const Shape& in, bool with_mau) {
    const auto c = in[0];
    scu(name + ".scu1", in, c, 1);
    scu(name + ".scu2", in, c, 1);
    conv(name + ".branch_conv", in, c, 3, 1, false, false, true);
    simple(name + ".branch_bn", LayerKind::kTdbn, in, in, 2 * c, true);
    simple(name + ".merge", LayerKind::kAdd, in, in, 0, true);
    if (with_mau) {
      const auto hidden = squeeze_width(c);
      simple(name + ".mau.pool", LayerKind::kPool, in, {c, 1, 1}, 0, false);
      conv(name + ".mau.channel_squeeze", {c, 1, 1}, hidden, 1, 1, true, false, false);
      conv(name + ".mau.channel_excite", {hidden, 1, 1}, c, 1, 1, true, false, false);
      simple(name + ".mau.channel_mean", LayerKind::kPool, in, {1, in[1], in[2]}, 0, false);
      conv(name + ".mau.spatial", {1, in[1], in[2]}, 1, 7, 1, true, false, false);
      simple(name + ".mau.gate", LayerKind::kMau, in, in, 0, true);
    }
    simple(name + ".residual", LayerKind::kAdd, in, in, 0, true);
  }

  void frb(const std::string& name, const Shape& in) {
    const auto c = in[0];
    const auto hidden = squeeze_width(c);
    simple(name + ".pool", LayerKind::kPool, in, {c, 1, 1}, 0, false);
    conv(name + ".pooled_squeeze", {c, 1, 1}, hidden, 1, 1, true, false, false);
    conv(name + ".pooled_excite", {hidden, 1, 1}, c, 1, 1, true, false, false);
    conv(name + ".feature", in, c, 3, 1, true, false, false);
    conv(name + ".feature_squeeze", in, hidden, 1, 1, true, false, false);
    conv(name + ".feature_excite", {hidden, in[1], in[2]}, c, 1, 1, true, false, false);
    simple(name + ".blend", LayerKind::kFrb, in, in, 0, false);
  }

 private:
  LayerGraph& g_;
};

}  // namespace

LayerGraph export_layer_graph(const NetworkConfig& cfg, std::size_t height, std::size_t width) {
  cfg.validate();
  const auto mult = cfg.spatial_multiple();
  if (height == 0 || width == 0 || height % mult != 0 || width % mult != 0) {
    throw ContractError("layer graph extents must be positive multiples of " + std::to_string(mult));
  }
  LayerGraph graph;
  graph.time_steps = cfg.time_steps;
  GraphBuilder b(graph);
  const auto stages = cfg.stage_depths_enc.size();

  Shape f = b.conv("stem", {3, height, width}, cfg.base_channels, 3, 1, true, false, true);
  std::vector<Shape> skips;
  for (std::size_t s = 0; s < stages; ++s) {
    for (std::size_t i = 0; i < cfg.stage_depths_enc[s]; ++i) {
      b.srb("enc" + std::to_string(s) + ".srb" + std::to_string(i), f, cfg.use_mau);
    }
    if (s + 1 < stages) {
      skips.push_back(f);
      f = b.scu("down" + std::to_string(s), f, f[0] * 2, 2);
    }
  }
  for (std::size_t d = 0; d + 1 < stages; ++d) {
    const auto name = "up" + std::to_string(d);
    b.simple(name + ".lif", LayerKind::kLif, f, f, 0, true);
    f = b.upsample(name + ".conv", f, f[0] / 2);
    b.simple(name + ".bn", LayerKind::kTdbn, f, f, 2 * f[0], true);
    b.simple(name + ".skip", LayerKind::kAdd, f, f, 0, true);
    for (std::size_t i = 0; i < cfg.stage_depths_dec[d]; ++i) {
      b.srb("dec" + std::to_string(d) + ".srb" + std::to_string(i), f, cfg.use_mau);
    }
  }
  b.simple("time_mean", LayerKind::kPool, f, f, 0, false);
  if (cfg.use_frb) b.frb("frb", f);
  auto out = b.conv("head", f, 3, 3, 1, true, false, false);
  b.simple("global_residual", LayerKind::kAdd, out, out, 0, false);
  return graph;
}

}  // namespace spikerain
