#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "spikerain/checkpoint.hpp"
#include "spikerain/data.hpp"
#include "spikerain/energy.hpp"
#include "spikerain/metrics.hpp"
#include "spikerain/run_config.hpp"
#include "spikerain/trainer.hpp"

using namespace spikerain;
namespace fs = std::filesystem;

namespace {

// Exit codes. Every failure also prints one `error: <kind>: <message>` line.
enum Exit : int { kOk = 0, kUsage = 2, kIo = 3, kInvalid = 4, kNumeric = 5, kInternal = 70 };

int fail(const std::string& kind, const std::string& msg, int code) {
  std::string flat = msg;
  for (auto& c : flat) {
    if (c == '\n') c = ' ';
  }
  std::cerr << "error: " << kind << ": " << flat << '\n';
  return code;
}

std::pair<std::size_t, std::size_t> parse_hw(const std::string& s) {
  const auto x = s.find_first_of("xX");
  if (x == std::string::npos) throw ContractError("--hw expects HxW, got '" + s + "'");
  try {
    std::size_t used = 0;
    const auto h = std::stoul(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    const auto rest = s.substr(x + 1);
    const auto w = std::stoul(rest, &used);
    if (used != rest.size()) throw std::invalid_argument(s);
    if (h == 0 || w == 0) throw std::invalid_argument(s);
    return {h, w};
  } catch (const std::logic_error&) {
    throw ContractError("--hw expects HxW with positive integers, got '" + s + "'");
  }
}

std::vector<fs::path> pngs_in(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Esdnet load_model(const fs::path& ckpt_path, std::size_t time_steps) {
  const auto ckpt = load_checkpoint(ckpt_path);
  auto cfg = parse_run_config(ckpt.meta);
  if (time_steps) cfg.net.time_steps = time_steps;
  Esdnet net(cfg.net);
  restore_into(net.named_tensors(), ckpt);
  return net;
}

// --- train -----------------------------------------------------------------

int cmd_train(const std::string& config_path) {
  const auto cfg = load_run_config(config_path);
  std::vector<ImagePair> data;
  if (!cfg.data.dir.empty()) {
    data = load_pair_directory(cfg.data.dir);
  } else {
    data = synthetic_pairs(cfg.data.synthetic_pairs, cfg.data.synthetic_size, cfg.data.synthetic_size,
                           cfg.data.synthetic_seed, cfg.data.rain);
  }
  const fs::path out = cfg.output.dir;
  fs::create_directories(out);
  std::cout << "train: " << data.size() << " pairs, "
            << Esdnet(cfg.net).trainable_parameter_count() << " parameters\n";

  const auto result = train(cfg.net, cfg.train, data, [](const LossPoint& p) {
    if (p.step % 50 == 0) std::cout << "step " << p.step << " lr " << p.lr << " loss " << p.loss << '\n';
  });

  const auto meta = to_text(cfg);
  save_checkpoint(out / "best.ckpt", result.best_model.named_tensors(), meta);
  save_checkpoint(out / "last.ckpt", result.model.named_tensors(), meta);
  {
    std::ofstream f(out / "loss_curve.tsv");
    write_loss_curve(f, result.curve);
  }
  {
    std::ofstream f(out / "epochs.tsv");
    f << "epoch\ttrain_loss\teval_loss\teval_psnr_y\teval_ssim_y\theld_out\n" << std::setprecision(10);
    for (const auto& e : result.epochs) {
      f << e.epoch << '\t' << e.train_loss << '\t' << e.eval_loss << '\t' << e.eval_psnr_y << '\t'
        << e.eval_ssim_y << '\t' << (e.held_out ? 1 : 0) << '\n';
    }
  }
  {
    std::ofstream f(out / "config.txt");
    f << meta;
  }
  std::cout << "steps " << result.steps << " skipped " << result.skipped_steps << " final_batch_ssim "
            << result.final_batch_ssim << '\n';
  if (!result.epochs.empty()) {
    const auto& e = result.epochs.back();
    std::cout << "eval psnr_y " << e.eval_psnr_y << " ssim_y " << e.eval_ssim_y
              << (e.held_out ? " (held out)" : " (training split)") << '\n';
  }
  std::cout << "wrote " << (out / "best.ckpt").string() << '\n';
  return kOk;
}

// --- infer -----------------------------------------------------------------

int cmd_infer(const std::string& ckpt, const std::string& in, const std::string& out, std::size_t tile,
              std::optional<std::size_t> overlap, std::size_t time_steps) {
  const auto net = load_model(ckpt, time_steps);
  const TileOptions opts{tile, overlap.value_or(tile / 2), net.config().spatial_multiple()};
  NoGradGuard guard;
  const ImageModel model = [&](const Tensor& x) { return net.forward(x, false); };
  auto run = [&](const fs::path& src, const fs::path& dst) {
    save_image(sliding_window_infer(model, load_image(src), opts), dst);
    std::cout << src.string() << " -> " << dst.string() << '\n';
  };
  if (fs::is_directory(in)) {
    fs::create_directories(out);
    for (const auto& p : pngs_in(in)) run(p, fs::path(out) / p.filename());
  } else {
    if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
    run(in, out);
  }
  return kOk;
}

// --- energy ----------------------------------------------------------------

struct EnergyArgs {
  std::string config;
  std::string hw;
  std::vector<std::size_t> sweep;
  std::string units = "uJ";
  std::vector<double> flops_g;
  std::optional<double> sparsity;
  bool measure = false;
  std::uint64_t measure_seed = 0;
  std::string json;
  bool layers = false;
};

int cmd_energy(const EnergyArgs& a) {
  const auto unit = parse_energy_unit(a.units);
  const auto label = unit_label(unit);
  std::cout << std::setprecision(8);

  // Dense accounting from raw FLOP counts needs no network.
  if (!a.flops_g.empty()) {
    EnergyModel m;
    if (!a.config.empty()) m = load_run_config(a.config).energy;
    std::cout << "flops_g\tenergy_" << label << '\n';
    for (double f : a.flops_g) {
      if (!(f >= 0.0)) throw ContractError("--flops-g values must be >= 0");
      std::cout << f << '\t' << from_joules(dense_energy_uj(f, m) * 1e-6, unit) << '\n';
    }
    if (a.config.empty()) return kOk;
  }
  if (a.config.empty()) throw ContractError("energy needs --config (or --flops-g for dense accounting)");
  if (a.hw.empty()) throw ContractError("energy needs --hw HxW");
  const auto cfg = load_run_config(a.config);
  const auto [h, w] = parse_hw(a.hw);
  auto model = cfg.energy;
  if (a.sparsity) model.sparsity = *a.sparsity;
  if (a.measure) {
    model.sparsity = measure_sparsity(cfg.net, h, w, a.measure_seed);
    std::cout << "# measured spike rate " << model.sparsity << '\n';
  }
  model.validate();

  if (!a.sweep.empty()) {
    const auto rows = timestep_sweep(cfg.net, a.sweep, h, w, model);
    std::cout << "T\tflops_g\tsops_g\tsigns\tenergy_" << label << "\tdense_equivalent_" << label << '\n';
    for (const auto& r : rows) {
      std::cout << r.time_steps << '\t' << r.flops_g << '\t' << r.sops_g << '\t' << r.signs << '\t'
                << from_joules(r.energy_uj * 1e-6, unit) << '\t'
                << from_joules(r.dense_equivalent_uj * 1e-6, unit) << '\n';
    }
    if (rows.size() >= 2) {
      const double dt = static_cast<double>(rows[1].time_steps) - static_cast<double>(rows[0].time_steps);
      const double c1 = (rows[1].energy_uj - rows[0].energy_uj) / dt;
      const double c0 = rows[0].energy_uj - c1 * static_cast<double>(rows[0].time_steps);
      std::cout << "# energy_uJ(T) = " << c0 << " + " << c1 << " * T\n";
    }
    return kOk;
  }

  const auto report = profile(export_layer_graph(cfg.net, h, w), model);
  if (a.layers) {
    write_report_table(std::cout, report, unit);
  } else {
    std::cout << "T\tsparsity\tflops_g\tsops_g\tsigns\tenergy_" << label << "\tflop_equivalent_g\tdense_equivalent_"
              << label << '\n'
              << report.time_steps << '\t' << report.sparsity << '\t' << report.flops_g() << '\t'
              << report.sops_g() << '\t' << report.signs << '\t' << from_joules(report.joules, unit) << '\t'
              << report.flop_equivalent_g() << '\t'
              << from_joules(report.dense_equivalent_uj(model) * 1e-6, unit) << '\n';
  }
  if (!a.json.empty()) {
    std::ofstream f(a.json);
    if (!f) throw IoError("cannot open '" + a.json + "' for writing");
    write_report_json(f, report, model);
  }
  return kOk;
}

// --- metrics ---------------------------------------------------------------

int cmd_metrics(const std::string& pred_dir, const std::string& gt_dir, const std::string& out) {
  const auto preds = pngs_in(pred_dir);
  if (preds.empty()) throw IoError("no .png files in '" + pred_dir + "'");
  std::ofstream file;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw IoError("cannot open '" + out + "' for writing");
  }
  std::ostream& os = out.empty() ? std::cout : file;
  double psnr_sum = 0.0, ssim_sum = 0.0;
  std::size_t finite = 0;
  for (const auto& p : preds) {
    const auto gt_path = fs::path(gt_dir) / p.filename();
    if (!fs::exists(gt_path)) throw IoError("no ground truth for '" + p.filename().string() + "' in '" + gt_dir + "'");
    const auto pred = load_image(p);
    const auto gt = load_image(gt_path);
    if (pred.shape() != gt.shape()) {
      throw DimensionError("'" + p.filename().string() + "' is " + shape_str(pred.shape()) + " but ground truth is " +
                           shape_str(gt.shape()));
    }
    const auto id = p.stem().string();
    const double ps = psnr_y(pred, gt);
    const double ss = ssim_y(pred, gt);
    write_metric_record(os, {"psnr_y", ps, id});
    write_metric_record(os, {"ssim_y", ss, id});
    if (std::isfinite(ps)) {
      psnr_sum += ps;
      ++finite;
    }
    ssim_sum += ss;
  }
  write_metric_record(os, {"psnr_y", finite ? psnr_sum / static_cast<double>(finite)
                                            : std::numeric_limits<double>::infinity(),
                           "mean"});
  write_metric_record(os, {"ssim_y", ssim_sum / static_cast<double>(preds.size()), "mean"});
  return kOk;
}

// --- synth -----------------------------------------------------------------

int cmd_synth(const std::string& out, std::size_t n, std::uint64_t seed, const std::string& size, double intensity) {
  const auto [h, w] = parse_hw(size);
  RainSynthConfig rain;
  rain.intensity = intensity;
  rain.validate();
  const auto pairs = synthetic_pairs(n, h, w, seed, rain);
  save_pair_directory(pairs, out);
  std::cout << "wrote " << pairs.size() << " pairs to " << out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking encoder-decoder image deraining: training, inference, metrics and energy accounting"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config, ckpt, in, out, pred, gt, metrics_out;
  std::size_t tile = 64, time_steps = 0, n = 8;
  std::optional<std::size_t> overlap;
  std::uint64_t seed = 0;
  std::string synth_size = "64x64";
  double intensity = 0.6;
  EnergyArgs ea;

  auto* train_cmd = app.add_subcommand("train", "Train a model from a run configuration");
  train_cmd->add_option("--config", config, "Run configuration file")->required();

  auto* infer_cmd = app.add_subcommand("infer", "Derain an image (or a directory of PNGs) with a checkpoint");
  infer_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  infer_cmd->add_option("--in", in, "Input PNG or directory")->required();
  infer_cmd->add_option("--out", out, "Output PNG or directory")->required();
  infer_cmd->add_option("--tile", tile, "Tile size")->capture_default_str();
  infer_cmd->add_option("--overlap", overlap, "Tile overlap (default tile/2)");
  infer_cmd->add_option("--time-steps", time_steps, "Override the checkpoint's time steps");

  auto* energy_cmd = app.add_subcommand("energy", "Static FLOP/SOP/energy profile");
  energy_cmd->add_option("--config", ea.config, "Run configuration file (net and energy sections)");
  energy_cmd->add_option("--hw", ea.hw, "Input extent HxW");
  energy_cmd->add_option("--sweep-T", ea.sweep, "Comma-separated time steps to sweep")->delimiter(',');
  energy_cmd->add_option("--units", ea.units, "uJ, mJ or J")->capture_default_str();
  energy_cmd->add_option("--flops-g", ea.flops_g, "Dense accounting for raw GFLOP counts")->delimiter(',');
  energy_cmd->add_option("--sparsity", ea.sparsity, "Override the spike rate s");
  energy_cmd->add_flag("--measured-sparsity", ea.measure, "Use the spike rate measured on random input");
  energy_cmd->add_option("--measure-seed", ea.measure_seed, "Seed for the sparsity measurement");
  energy_cmd->add_option("--json", ea.json, "Also write the report as JSON");
  energy_cmd->add_flag("--layers", ea.layers, "Print the per-layer table");

  auto* metrics_cmd = app.add_subcommand("metrics", "PSNR/SSIM on Y between two directories of PNGs");
  metrics_cmd->add_option("--pred", pred, "Predictions directory")->required();
  metrics_cmd->add_option("--gt", gt, "Ground-truth directory")->required();
  metrics_cmd->add_option("--out", metrics_out, "Write records here instead of stdout");

  auto* synth_cmd = app.add_subcommand("synth", "Write synthetic rainy/clean pairs");
  synth_cmd->add_option("--out", out, "Output directory")->required();
  synth_cmd->add_option("--n", n, "Number of pairs")->capture_default_str();
  synth_cmd->add_option("--seed", seed, "Seed")->capture_default_str();
  synth_cmd->add_option("--size", synth_size, "Image extent HxW")->capture_default_str();
  synth_cmd->add_option("--intensity", intensity, "Rain intensity in [0,1]")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kUsage);
  }

  try {
    if (*train_cmd) return cmd_train(config);
    if (*infer_cmd) return cmd_infer(ckpt, in, out, tile, overlap, time_steps);
    if (*energy_cmd) return cmd_energy(ea);
    if (*metrics_cmd) return cmd_metrics(pred, gt, metrics_out);
    if (*synth_cmd) return cmd_synth(out, n, seed, synth_size, intensity);
  } catch (const IoError& e) {
    return fail("io", e.what(), kIo);
  } catch (const DimensionError& e) {
    return fail("dimension", e.what(), kInvalid);
  } catch (const ContractError& e) {
    return fail("contract", e.what(), kInvalid);
  } catch (const NonFiniteGradient& e) {
    return fail("numeric", e.what(), kNumeric);
  } catch (const fs::filesystem_error& e) {
    return fail("io", e.what(), kIo);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kInternal);
  }
  return kInternal;
}
