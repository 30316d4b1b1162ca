#include "spikerain/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace spikerain {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ContractError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ContractError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_uint(key, trim(item)));
  return out;
}

// Shortest text that parses back to the same double.
std::string fmt(double d) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), d);
  return std::string(buf, r.ptr);
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SR_DOUBLE(KEY, MEMBER)                                                          \
  Field {                                                                               \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = to_double(KEY, v); },      \
        [](const RunConfig& c) { return fmt(c.MEMBER); }                                \
  }
#define SR_UINT(KEY, MEMBER)                                                            \
  Field {                                                                               \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = to_uint(KEY, v); },        \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }                     \
  }
#define SR_BOOL(KEY, MEMBER)                                                            \
  Field {                                                                               \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = to_bool(KEY, v); },        \
        [](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SR_UINT("net.time_steps", net.time_steps),
      SR_UINT("net.base_channels", net.base_channels),
      Field{"net.enc_depths",
            [](RunConfig& c, const std::string& v) { c.net.stage_depths_enc = to_list("net.enc_depths", v); },
            [](const RunConfig& c) { return fmt_list(c.net.stage_depths_enc); }},
      Field{"net.dec_depths",
            [](RunConfig& c, const std::string& v) { c.net.stage_depths_dec = to_list("net.dec_depths", v); },
            [](const RunConfig& c) { return fmt_list(c.net.stage_depths_dec); }},
      SR_BOOL("net.use_mau", net.use_mau),
      SR_BOOL("net.use_tdbn", net.use_tdbn),
      SR_BOOL("net.use_frb", net.use_frb),
      SR_UINT("net.seed", net.seed),
      SR_DOUBLE("lif.tau", net.lif.tau),
      SR_DOUBLE("lif.v_threshold", net.lif.v_threshold),
      SR_DOUBLE("lif.v_reset", net.lif.v_reset),
      SR_DOUBLE("lif.beta", net.lif.beta),
      SR_DOUBLE("lif.alpha", net.lif.alpha_surrogate),
      SR_DOUBLE("train.lr_init", train.lr_init),
      SR_DOUBLE("train.lr_final", train.lr_final),
      SR_UINT("train.batch_size", train.batch_size),
      SR_UINT("train.epochs", train.epochs),
      SR_UINT("train.max_steps", train.max_steps),
      SR_UINT("train.patch_size", train.patch_size),
      SR_DOUBLE("train.adam_beta1", train.adam_beta1),
      SR_DOUBLE("train.adam_beta2", train.adam_beta2),
      SR_DOUBLE("train.adam_eps", train.adam_eps),
      SR_DOUBLE("train.grad_clip", train.grad_clip),
      Field{"train.non_finite",
            [](RunConfig& c, const std::string& v) {
              if (v == "skip") c.train.non_finite = NonFinitePolicy::kSkip;
              else if (v == "abort") c.train.non_finite = NonFinitePolicy::kAbort;
              else throw ContractError("config key 'train.non_finite': expected skip or abort");
            },
            [](const RunConfig& c) {
              return std::string(c.train.non_finite == NonFinitePolicy::kSkip ? "skip" : "abort");
            }},
      SR_DOUBLE("train.val_fraction", train.val_fraction),
      SR_UINT("train.eval_interval", train.eval_interval),
      SR_DOUBLE("train.target_ssim", train.target_ssim),
      SR_UINT("train.seed", train.seed),
      SR_DOUBLE("energy.e_flop", energy.e_flop),
      SR_DOUBLE("energy.e_sop", energy.e_sop),
      SR_DOUBLE("energy.e_sign", energy.e_sign),
      SR_DOUBLE("energy.sparsity", energy.sparsity),
      Field{"data.dir", [](RunConfig& c, const std::string& v) { c.data.dir = v; },
            [](const RunConfig& c) { return c.data.dir; }},
      SR_UINT("data.synthetic_pairs", data.synthetic_pairs),
      SR_UINT("data.synthetic_size", data.synthetic_size),
      SR_UINT("data.synthetic_seed", data.synthetic_seed),
      SR_UINT("rain.streak_count", data.rain.streak_count),
      SR_DOUBLE("rain.streak_length_px", data.rain.streak_length_px),
      SR_DOUBLE("rain.angle_deg", data.rain.angle_deg),
      SR_DOUBLE("rain.angle_jitter_deg", data.rain.angle_jitter_deg),
      SR_DOUBLE("rain.intensity", data.rain.intensity),
      SR_DOUBLE("rain.blur_sigma", data.rain.gaussian_blur_sigma),
      Field{"output.dir", [](RunConfig& c, const std::string& v) { c.output.dir = v; },
            [](const RunConfig& c) { return c.output.dir; }},
  };
  return table;
}

#undef SR_DOUBLE
#undef SR_UINT
#undef SR_BOOL

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) {
      throw ContractError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    it->set(cfg, value);
  }
  cfg.net.validate();
  cfg.train.validate();
  cfg.energy.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace spikerain
