#include "spikerain/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>

#include "spikerain/metrics.hpp"

namespace spikerain {

void TrainConfig::validate() const {
  if (!(lr_final <= lr_init)) throw ContractError("lr_final must not exceed lr_init");
  if (!(lr_final >= 0.0)) throw ContractError("learning rates must be >= 0");
  if (batch_size == 0) throw ContractError("batch_size must be >= 1");
  if (patch_size == 0 || patch_size % 4 != 0) throw ContractError("patch_size must be a positive multiple of 4");
  if (epochs == 0 && max_steps == 0) throw ContractError("need epochs or max_steps");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ContractError("val_fraction must lie in [0,1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ContractError("adam betas must lie in [0,1)");
  }
}

double cosine_lr(std::size_t step, std::size_t total, const TrainConfig& cfg) {
  if (total == 0) throw ContractError("cosine_lr needs total >= 1");
  if (step >= total) return cfg.lr_final;
  if (step == 0) return cfg.lr_init;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total);
  return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + std::cos(phase));
}

bool adam_step(const ParamList& params, AdamState& state, double lr, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam state does not match parameter list");
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        if (cfg.non_finite == NonFinitePolicy::kAbort) {
          throw NonFiniteGradient("non-finite gradient in '" + p.name + "'");
        }
        std::cerr << "warning: non-finite gradient in '" << p.name << "', step skipped\n";
        return false;
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto tensor = params[k].tensor;
    if (!tensor.has_grad()) continue;
    const auto g = tensor.grad();
    auto w = tensor.mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
  }
  return true;
}

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw ContractError("cannot stack zero images");
  const auto& s = images.front().shape();
  std::vector<double> data;
  data.reserve(images.size() * images.front().numel());
  for (const auto& im : images) {
    if (im.shape() != s) throw DimensionError("stack_images: shape " + shape_str(im.shape()) + " vs " + shape_str(s));
    data.insert(data.end(), im.data().begin(), im.data().end());
  }
  Shape out{images.size()};
  out.insert(out.end(), s.begin(), s.end());
  return Tensor(std::move(out), std::move(data));
}

namespace {

Tensor crop(const Tensor& img, std::size_t y0, std::size_t x0, std::size_t ph, std::size_t pw) {
  const auto h = img.size(1);
  const auto w = img.size(2);
  std::vector<double> out(3 * ph * pw);
  const auto d = img.data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < ph; ++y) {
      const double* row = d.data() + (c * h + y0 + y) * w + x0;
      std::copy(row, row + pw, out.begin() + static_cast<std::ptrdiff_t>((c * ph + y) * pw));
    }
  }
  return Tensor({3, ph, pw}, std::move(out));
}

void clip_gradients(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;
  const double f = max_norm / norm;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (auto& g : p.tensor.impl()->grad) g *= f;
  }
}

EpochRecord evaluate(const Esdnet& net, const std::vector<const ImagePair*>& pairs, std::size_t multiple) {
  NoGradGuard guard;
  EpochRecord r;
  for (const auto* p : pairs) {
    const auto h = p->rainy.size(1) / multiple * multiple;
    const auto w = p->rainy.size(2) / multiple * multiple;
    auto rainy = stack_images({crop(p->rainy, 0, 0, h, w)});
    auto clean = stack_images({crop(p->clean, 0, 0, h, w)});
    auto pred = net.forward(rainy, false);
    r.eval_loss += ssim_loss(pred, clean).item();
    r.eval_psnr_y += psnr_y(pred, clean);
    r.eval_ssim_y += ssim_y(pred, clean);
  }
  const double n = static_cast<double>(pairs.size());
  r.eval_loss /= n;
  r.eval_psnr_y /= n;
  r.eval_ssim_y /= n;
  return r;
}

}  // namespace

TrainResult train(const NetworkConfig& model_cfg, const TrainConfig& cfg,
                  const std::vector<ImagePair>& dataset, const TrainObserver& observer) {
  cfg.validate();
  model_cfg.validate();
  if (dataset.empty()) throw ContractError("training needs a non-empty dataset");

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(dataset.size())));
  n_val = std::min(n_val, dataset.size() - 1);
  std::vector<const ImagePair*> val, train_set;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_val ? val : train_set).push_back(&dataset[order[i]]);
  }

  const auto multiple = model_cfg.spatial_multiple();
  std::size_t patch = cfg.patch_size;
  for (const auto* p : train_set) patch = std::min({patch, p->rainy.size(1), p->rainy.size(2)});
  patch = patch / multiple * multiple;
  if (patch == 0) throw ContractError("training images are smaller than the network's spatial multiple");

  TrainResult result{Esdnet(model_cfg), Esdnet(model_cfg), {}, {}, 0, 0, 0.0};
  auto& net = result.model;
  const auto params = net.trainable_parameters();
  AdamState adam;

  const auto steps_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  const auto total = cfg.max_steps ? cfg.max_steps : cfg.epochs * steps_per_epoch;
  const auto& eval_pairs = val.empty() ? train_set : val;
  double best_ssim = -std::numeric_limits<double>::infinity();
  bool stop = false;
  std::size_t epoch = 0;

  while (!stop && result.steps < total) {
    std::vector<std::size_t> idx(train_set.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t b0 = 0; b0 < idx.size() && !stop && result.steps < total; b0 += cfg.batch_size) {
      std::vector<Tensor> rainy, clean;
      for (std::size_t k = b0; k < std::min(idx.size(), b0 + cfg.batch_size); ++k) {
        const auto& p = *train_set[idx[k]];
        const auto y0 = std::uniform_int_distribution<std::size_t>(0, p.rainy.size(1) - patch)(rng);
        const auto x0 = std::uniform_int_distribution<std::size_t>(0, p.rainy.size(2) - patch)(rng);
        rainy.push_back(crop(p.rainy, y0, x0, patch, patch));
        clean.push_back(crop(p.clean, y0, x0, patch, patch));
      }
      const auto rainy_batch = stack_images(rainy);
      const auto clean_batch = stack_images(clean);
      const auto loss = ssim_loss(net.forward(rainy_batch, true), clean_batch);
      backward(loss);
      if (cfg.grad_clip > 0.0) clip_gradients(params, cfg.grad_clip);
      const double lr = cosine_lr(result.steps, total, cfg);
      if (!adam_step(params, adam, lr, cfg)) ++result.skipped_steps;
      for (const auto& p : params) p.tensor.impl()->grad.clear();
      Tape::active().clear();

      const LossPoint point{result.steps, epoch, lr, loss.item()};
      result.curve.push_back(point);
      if (observer) observer(point);
      epoch_loss += point.loss;
      ++epoch_batches;
      ++result.steps;
      result.final_batch_ssim = 1.0 - point.loss;
      if (cfg.target_ssim > 0.0 && result.final_batch_ssim >= cfg.target_ssim) stop = true;
    }
    const bool last = stop || result.steps >= total;
    if (!last && (epoch + 1) % std::max<std::size_t>(cfg.eval_interval, 1) != 0) {
      ++epoch;
      continue;
    }
    auto record = evaluate(net, eval_pairs, multiple);
    record.epoch = epoch;
    record.train_loss = epoch_batches ? epoch_loss / static_cast<double>(epoch_batches) : 0.0;
    record.held_out = !val.empty();
    if (record.eval_ssim_y > best_ssim) {
      best_ssim = record.eval_ssim_y;
      result.best_model = net.clone();
    }
    result.epochs.push_back(record);
    ++epoch;
  }
  return result;
}

void write_loss_curve(std::ostream& os, const std::vector<LossPoint>& curve) {
  os << "step\tepoch\tlr\tloss\n" << std::setprecision(12);
  for (const auto& p : curve) os << p.step << '\t' << p.epoch << '\t' << p.lr << '\t' << p.loss << '\n';
}

}  // namespace spikerain
