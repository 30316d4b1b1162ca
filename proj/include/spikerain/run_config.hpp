#pragma once

#include <filesystem>
#include <string>

#include "spikerain/data.hpp"
#include "spikerain/energy.hpp"
#include "spikerain/network.hpp"
#include "spikerain/trainer.hpp"

namespace spikerain {

struct DataConfig {
  std::string dir;  // directory of rainy/ + clean/ pairs; empty -> synthetic
  std::size_t synthetic_pairs = 200;
  std::size_t synthetic_size = 64;
  std::uint64_t synthetic_seed = 0;
  RainSynthConfig rain;
};

struct OutputConfig {
  std::string dir = "run";
};

/// Everything one `train` invocation needs. Serialized as `section.key = value`
/// lines; `#` starts a comment. Unknown keys are rejected.
struct RunConfig {
  NetworkConfig net;
  TrainConfig train;
  EnergyModel energy;
  DataConfig data;
  OutputConfig output;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_text(const RunConfig& cfg);

}  // namespace spikerain
