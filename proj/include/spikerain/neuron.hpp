#pragma once

#include <cstddef>

#include "spikerain/tensor.hpp"

namespace spikerain {

/// Leaky integrate-and-fire parameters.
///
/// Membrane update per time step:
///   H = U_prev + (1/tau) * (X - (U_prev - v_reset))
///   S = step(H - v_threshold)            (step(0) == 1)
///   U = (beta * H) * (1 - S) + v_reset * S
///
/// During backward dS/dH is replaced by alpha * sig * (1 - sig) with
/// sig = 1 / (1 + exp(-alpha * (H - v_threshold))).
struct LifConfig {
  double tau = 2.0;
  double v_threshold = 1.0;
  double v_reset = 0.0;
  double beta = 0.5;
  double alpha_surrogate = 4.0;
  /// Replaces the forward step with the surrogate sigmoid so the whole
  /// network is smooth. Only meant for finite-difference gradient checks.
  bool smooth_forward = false;

  void validate() const;
};

struct NeuronState {
  Tensor u;

  static NeuronState fresh(const Shape& shape, const LifConfig& cfg);
};

struct LifStepResult {
  Tensor spike;
  Tensor membrane;  // H, before threshold
  NeuronState state;
};

/// One LIF update on plain values (not recorded on the tape).
LifStepResult lif_step(const Tensor& x, const NeuronState& state, const LifConfig& cfg);

/// alpha * sig(x) * (1 - sig(x)) with sig(x) = 1 / (1 + exp(-alpha x)).
Tensor surrogate_grad(const Tensor& x, double alpha);
double surrogate_grad(double x, double alpha);

/// Running totals of emitted spikes, used for measured sparsity.
struct SpikeTally {
  double spikes = 0.0;
  std::size_t sites = 0;  // neuron outputs summed over all time steps
  std::size_t non_binary = 0;  // outputs outside {0,1}; nonzero only with smooth_forward

  double rate() const { return sites == 0 ? 0.0 : spikes / static_cast<double>(sites); }
  SpikeTally& operator+=(const SpikeTally& o) {
    spikes += o.spikes;
    sites += o.sites;
    non_binary += o.non_binary;
    return *this;
  }
};

/// Runs LIF over the leading time axis of x_seq [T,...] from a fresh state and
/// returns the spike sequence. Differentiable through the surrogate.
Tensor lif_unroll(const Tensor& x_seq, const LifConfig& cfg, SpikeTally* tally = nullptr);

/// Repeats a static image across T time steps: [N,C,H,W] -> [T,N,C,H,W].
Tensor direct_encode(const Tensor& image, std::size_t time_steps);

}  // namespace spikerain
