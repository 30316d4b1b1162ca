#include "spikerain/neuron.hpp"

#include <cmath>
#include <string>

#include "spikerain/ops.hpp"

namespace spikerain {

namespace {

double sig(double x, double alpha) { return 1.0 / (1.0 + std::exp(-alpha * x)); }

double fire(double h, const LifConfig& cfg) {
  if (cfg.smooth_forward) return sig(h - cfg.v_threshold, cfg.alpha_surrogate);
  return h - cfg.v_threshold >= 0.0 ? 1.0 : 0.0;
}

}  // namespace

void LifConfig::validate() const {
  if (!(tau > 0.0)) throw ContractError("lif tau must be > 0, got " + std::to_string(tau));
  if (!(alpha_surrogate > 0.0)) throw ContractError("lif alpha must be > 0");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("lif beta must lie in [0,1]");
  if (!(v_threshold > v_reset)) throw ContractError("lif v_threshold must exceed v_reset");
}

NeuronState NeuronState::fresh(const Shape& shape, const LifConfig& cfg) {
  return {Tensor(shape, cfg.v_reset)};
}

LifStepResult lif_step(const Tensor& x, const NeuronState& state, const LifConfig& cfg) {
  cfg.validate();
  if (x.shape() != state.u.shape()) {
    throw DimensionError("lif_step input " + shape_str(x.shape()) + " does not match state " +
                         shape_str(state.u.shape()));
  }
  const double inv_tau = 1.0 / cfg.tau;
  const auto xd = x.data();
  const auto ud = state.u.data();
  std::vector<double> h(xd.size()), s(xd.size()), u(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    h[i] = ud[i] + inv_tau * (xd[i] - (ud[i] - cfg.v_reset));
    s[i] = fire(h[i], cfg);
    u[i] = (cfg.beta * h[i]) * (1.0 - s[i]) + cfg.v_reset * s[i];
  }
  return {Tensor(x.shape(), std::move(s)), Tensor(x.shape(), std::move(h)),
          NeuronState{Tensor(x.shape(), std::move(u))}};
}

double surrogate_grad(double x, double alpha) {
  const double s = sig(x, alpha);
  return alpha * s * (1.0 - s);
}

Tensor surrogate_grad(const Tensor& x, double alpha) {
  if (!(alpha > 0.0)) throw ContractError("surrogate alpha must be > 0");
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = surrogate_grad(xd[i], alpha);
  return Tensor(x.shape(), std::move(out));
}

Tensor lif_unroll(const Tensor& x_seq, const LifConfig& cfg, SpikeTally* tally) {
  cfg.validate();
  if (x_seq.dim() < 1 || x_seq.size(0) == 0) {
    throw ContractError("lif_unroll needs at least one time step, got " + shape_str(x_seq.shape()));
  }
  const auto steps = x_seq.size(0);
  const auto sites = x_seq.numel() / steps;
  const double inv_tau = 1.0 / cfg.tau;
  const auto xd = x_seq.data();

  auto membrane = std::make_shared<std::vector<double>>(x_seq.numel());
  std::vector<double> spikes(x_seq.numel());
  std::vector<double> u(sites, cfg.v_reset);
  double fired = 0.0;
  std::size_t non_binary = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    const auto off = t * sites;
    for (std::size_t i = 0; i < sites; ++i) {
      const double h = u[i] + inv_tau * (xd[off + i] - (u[i] - cfg.v_reset));
      const double s = fire(h, cfg);
      u[i] = (cfg.beta * h) * (1.0 - s) + cfg.v_reset * s;
      (*membrane)[off + i] = h;
      spikes[off + i] = s;
      fired += s;
      non_binary += (s != 0.0 && s != 1.0);
    }
  }
  if (tally) {
    tally->spikes += fired;
    tally->sites += x_seq.numel();
    tally->non_binary += non_binary;
  }
  auto saved_spikes = std::make_shared<std::vector<double>>(spikes);

  return detail::make_result(
      x_seq.shape(), std::move(spikes), {&x_seq},
      [x_seq, cfg, steps, sites, inv_tau, membrane, saved_spikes](std::span<const double> g) {
        if (!x_seq.requires_grad()) return;
        std::vector<double> gx(x_seq.numel());
        std::vector<double> gu(sites, 0.0);  // dL/dU_t flowing back from step t+1
        for (std::size_t t = steps; t-- > 0;) {
          const auto off = t * sites;
          for (std::size_t i = 0; i < sites; ++i) {
            const double h = (*membrane)[off + i];
            const double s = (*saved_spikes)[off + i];
            const double ds = surrogate_grad(h - cfg.v_threshold, cfg.alpha_surrogate);
            const double du_dh = cfg.beta * (1.0 - s) + (cfg.v_reset - cfg.beta * h) * ds;
            const double gh = g[off + i] * ds + gu[i] * du_dh;
            gx[off + i] = gh * inv_tau;
            gu[i] = gh * (1.0 - inv_tau);
          }
        }
        x_seq.impl()->accumulate_grad(gx);
      });
}

Tensor direct_encode(const Tensor& image, std::size_t time_steps) {
  if (time_steps == 0) throw ContractError("direct_encode needs T >= 1");
  return repeat_leading(image, time_steps);
}

}  // namespace spikerain
