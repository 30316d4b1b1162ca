#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "spikerain/network.hpp"

namespace spikerain {

/// Unit costs in joules. Dense layers pay e_flop per multiply-accumulate,
/// spike-driven layers pay e_sop per synaptic op (s * T * A), and every LIF
/// output evaluation pays e_sign.
struct EnergyModel {
  double e_flop = 12.5e-12;
  double e_sop = 77e-15;
  double e_sign = 3.7e-12;
  double sparsity = 0.1642;
  std::size_t time_steps = 0;  // 0: take T from the graph

  void validate() const;
};

struct EnergyRow {
  std::size_t id = 0;
  std::string name;
  LayerKind kind = LayerKind::kConv;
  std::uint64_t macs = 0;
  double flops = 0.0;
  double sops = 0.0;
  double signs = 0.0;
  double joules = 0.0;
};

struct EnergyReport {
  std::vector<EnergyRow> rows;
  std::size_t time_steps = 0;
  double sparsity = 0.0;
  double flops = 0.0;
  double sops = 0.0;
  double signs = 0.0;
  double joules = 0.0;

  double flops_g() const { return flops * 1e-9; }
  double sops_g() const { return sops * 1e-9; }
  double energy_uj() const { return joules * 1e6; }
  /// Dense FLOPs plus SOPs, everything priced as a FLOP.
  double flop_equivalent_g() const { return (flops + sops) * 1e-9; }
  double dense_equivalent_uj(const EnergyModel& m) const { return (flops + sops) * m.e_flop * 1e6; }
};

EnergyReport profile(const LayerGraph& graph, const EnergyModel& model);

/// Energy of a workload given only its dense FLOP count (1 MAC == 1 FLOP).
double dense_energy_uj(double flops_g, const EnergyModel& model = {});

struct SweepRow {
  std::size_t time_steps = 0;
  double flops_g = 0.0;
  double sops_g = 0.0;
  double signs = 0.0;
  double energy_uj = 0.0;
  double dense_equivalent_uj = 0.0;
};

std::vector<SweepRow> timestep_sweep(const NetworkConfig& cfg, const std::vector<std::size_t>& steps,
                                     std::size_t height, std::size_t width, EnergyModel model);

/// Spike rate of a freshly initialised network on uniform random input.
double measure_sparsity(const NetworkConfig& cfg, std::size_t height, std::size_t width,
                        std::uint64_t seed);

enum class EnergyUnit { kMicroJoule, kMilliJoule, kJoule };

EnergyUnit parse_energy_unit(const std::string& s);
double from_joules(double joules, EnergyUnit unit);
std::string unit_label(EnergyUnit unit);

/// Tab-separated table, one row per layer followed by a TOTAL row.
void write_report_table(std::ostream& os, const EnergyReport& report, EnergyUnit unit);
/// JSON document with rows and totals.
void write_report_json(std::ostream& os, const EnergyReport& report, const EnergyModel& model);

}  // namespace spikerain
