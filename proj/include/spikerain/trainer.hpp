#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikerain/data.hpp"
#include "spikerain/network.hpp"

namespace spikerain {

enum class NonFinitePolicy { kSkip, kAbort };

struct TrainConfig {
  double lr_init = 1e-3;
  double lr_final = 1e-7;
  std::size_t batch_size = 12;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // nonzero caps (and defines) the schedule length
  std::size_t patch_size = 64;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  NonFinitePolicy non_finite = NonFinitePolicy::kSkip;
  double val_fraction = 0.0;
  std::size_t eval_interval = 1;  // epochs between evaluations (the last epoch always evaluates)
  double target_ssim = 0.0;  // stop once a step's batch SSIM reaches this; 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

/// lr_final + (lr_init - lr_final) * (1 + cos(pi * step / total)) / 2, with
/// step clamped to total.
double cosine_lr(std::size_t step, std::size_t total, const TrainConfig& cfg);

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update over `params` using their tape gradients.
/// Returns false (and leaves everything untouched) when a gradient is not
/// finite under NonFinitePolicy::kSkip; throws under kAbort.
bool adam_step(const ParamList& params, AdamState& state, double lr, const TrainConfig& cfg);

struct LossPoint {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_psnr_y = 0.0;
  double eval_ssim_y = 0.0;
  bool held_out = false;  // false: evaluated on the training split
};

struct TrainResult {
  Esdnet model;
  Esdnet best_model;
  std::vector<LossPoint> curve;
  std::vector<EpochRecord> epochs;
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
  double final_batch_ssim = 0.0;  // 1 - loss of the last optimizer step's batch
};

using TrainObserver = std::function<void(const LossPoint&)>;

/// Minimizes the SSIM loss over shuffled mini-batches of random patches.
TrainResult train(const NetworkConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::vector<ImagePair>& dataset, const TrainObserver& observer = {});

/// Stacks [3,H,W] images into [N,3,H,W].
Tensor stack_images(const std::vector<Tensor>& images);

void write_loss_curve(std::ostream& os, const std::vector<LossPoint>& curve);

}  // namespace spikerain
