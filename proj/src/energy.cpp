#include "spikerain/energy.hpp"

#include <iomanip>
#include <json.hpp>
#include <random>

namespace spikerain {

void EnergyModel::validate() const {
  if (!(e_flop > 0.0) || !(e_sop > 0.0) || !(e_sign > 0.0)) {
    throw ContractError("energy unit costs must be > 0");
  }
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw ContractError("sparsity must lie in [0,1]");
}

EnergyReport profile(const LayerGraph& graph, const EnergyModel& model) {
  model.validate();
  EnergyReport report;
  report.time_steps = model.time_steps ? model.time_steps : graph.time_steps;
  report.sparsity = model.sparsity;
  const double steps = static_cast<double>(report.time_steps);

  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const auto& d = graph.layers[i];
    EnergyRow row{i, d.name, d.kind, d.macs};
    const bool weighted = d.kind == LayerKind::kConv || d.kind == LayerKind::kUpsample;
    if (weighted) {
      if (d.macs == 0) throw ContractError("layer '" + d.name + "' carries no MAC count");
      if (d.in_shape.size() == 3 && d.out_shape.size() == 3 && conv_macs(d) != d.macs) {
        throw ContractError("layer '" + d.name + "' MAC count disagrees with its shapes");
      }
      const double a = static_cast<double>(d.macs);
      if (d.spiking_input) {
        row.sops = model.sparsity * steps * a;
      } else {
        row.flops = d.temporal ? steps * a : a;
      }
    } else if (d.kind == LayerKind::kLif) {
      if (d.out_shape.empty()) throw ContractError("lif layer '" + d.name + "' has no output shape");
      row.signs = static_cast<double>(shape_numel(d.out_shape)) * steps;
    }
    row.joules = model.e_flop * row.flops + model.e_sop * row.sops + model.e_sign * row.signs;
    report.flops += row.flops;
    report.sops += row.sops;
    report.signs += row.signs;
    report.rows.push_back(std::move(row));
  }
  report.joules = model.e_flop * report.flops + model.e_sop * report.sops + model.e_sign * report.signs;
  return report;
}

double dense_energy_uj(double flops_g, const EnergyModel& model) {
  model.validate();
  return flops_g * 1e9 * model.e_flop * 1e6;
}

std::vector<SweepRow> timestep_sweep(const NetworkConfig& cfg, const std::vector<std::size_t>& steps,
                                     std::size_t height, std::size_t width, EnergyModel model) {
  std::vector<SweepRow> rows;
  for (auto t : steps) {
    auto c = cfg;
    c.time_steps = t;
    model.time_steps = t;
    const auto report = profile(export_layer_graph(c, height, width), model);
    rows.push_back({t, report.flops_g(), report.sops_g(), report.signs, report.energy_uj(),
                    report.dense_equivalent_uj(model)});
  }
  return rows;
}

double measure_sparsity(const NetworkConfig& cfg, std::size_t height, std::size_t width,
                        std::uint64_t seed) {
  Esdnet net(cfg);
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor x({1, 3, height, width});
  for (auto& v : x.mutable_data()) v = u(rng);
  NoGradGuard guard;
  SpikeTally tally;
  net.forward(x, true, &tally);
  return tally.rate();
}

EnergyUnit parse_energy_unit(const std::string& s) {
  if (s == "uJ" || s == "uj") return EnergyUnit::kMicroJoule;
  if (s == "mJ" || s == "mj") return EnergyUnit::kMilliJoule;
  if (s == "J" || s == "j") return EnergyUnit::kJoule;
  throw ContractError("unknown energy unit '" + s + "' (expected uJ, mJ or J)");
}

double from_joules(double joules, EnergyUnit unit) {
  switch (unit) {
    case EnergyUnit::kMicroJoule: return joules * 1e6;
    case EnergyUnit::kMilliJoule: return joules * 1e3;
    case EnergyUnit::kJoule: return joules;
  }
  return joules;
}

std::string unit_label(EnergyUnit unit) {
  switch (unit) {
    case EnergyUnit::kMicroJoule: return "uJ";
    case EnergyUnit::kMilliJoule: return "mJ";
    case EnergyUnit::kJoule: return "J";
  }
  return "J";
}

void write_report_table(std::ostream& os, const EnergyReport& report, EnergyUnit unit) {
  const auto label = unit_label(unit);
  os << "id\tname\tkind\tmacs\tflops\tsops\tsigns\tenergy_" << label << '\n';
  os << std::setprecision(8);
  for (const auto& r : report.rows) {
    os << r.id << '\t' << r.name << '\t' << to_string(r.kind) << '\t' << r.macs << '\t' << r.flops
       << '\t' << r.sops << '\t' << r.signs << '\t' << from_joules(r.joules, unit) << '\n';
  }
  os << "TOTAL\t-\t-\t-\t" << report.flops << '\t' << report.sops << '\t' << report.signs << '\t'
     << from_joules(report.joules, unit) << '\n';
}

void write_report_json(std::ostream& os, const EnergyReport& report, const EnergyModel& model) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"id", r.id},       {"name", r.name},   {"kind", to_string(r.kind)},
                    {"macs", r.macs},   {"flops", r.flops}, {"sops", r.sops},
                    {"signs", r.signs}, {"joules", r.joules}});
  }
  nlohmann::json doc{
      {"time_steps", report.time_steps},
      {"sparsity", report.sparsity},
      {"model", {{"e_flop", model.e_flop}, {"e_sop", model.e_sop}, {"e_sign", model.e_sign}}},
      {"rows", rows},
      {"totals",
       {{"flops_g", report.flops_g()},
        {"sops_g", report.sops_g()},
        {"signs", report.signs},
        {"energy_uJ", report.energy_uj()},
        {"flop_equivalent_g", report.flop_equivalent_g()},
        {"dense_equivalent_uJ", report.dense_equivalent_uj(model)}}}};
  os << doc.dump(2) << '\n';
}

}  // namespace spikerain
