#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "enformer/core/rng.hpp"
#include "enformer/data/augment.hpp"
#include "enformer/data/dataset.hpp"
#include "enformer/models/assembly.hpp"
#include "enformer/train/checkpoint.hpp"
#include "enformer/train/loss.hpp"
#include "enformer/train/optimizer.hpp"
#include "enformer/train/schedule.hpp"

namespace enformer {

struct TrainConfig {
  double max_lr = 1e-4;
  double weight_decay = 0.0;
  int64_t epochs = 200;
  int64_t batch_size = 16;
  uint64_t seed = 42;
  double val_threshold = 0.5;
  int64_t image_size = 352;
  bool augment = true;
  OneCycleConfig schedule;    // defaults are assumptions, recorded in the run manifest
  std::string out_dir;        // checkpoints + history land here; empty = keep in memory only
  std::string config_hash;    // fingerprint stamped into checkpoints
};

struct EpochRecord {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double val_dice = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int64_t best_epoch = -1;
  double best_val_dice = 0.0;
  std::string best_path, last_path, history_path;
};

// Dice of the thresholded probability map against a binary mask. Pixels count
// as foreground when p >= threshold; both maps empty counts as a perfect 1.
// This is the same dice the evaluation module reports per threshold.
template <typename T>
double dice_at_threshold(const Tensor<T>& prob, const Tensor<T>& mask, double threshold) {
  if (prob.numel() != mask.numel())
    throw std::invalid_argument("dice_at_threshold: prediction and mask sizes differ");
  int64_t inter = 0, psum = 0, gsum = 0;
  for (int64_t i = 0; i < prob.numel(); ++i) {
    int p = static_cast<double>(prob[i]) >= threshold ? 1 : 0;
    int g = mask[i] > T(0.5) ? 1 : 0;
    inter += p & g;
    psum += p;
    gsum += g;
  }
  if (psum + gsum == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(psum + gsum);
}

// Per-image dice at a fixed threshold, averaged over the validation set.
template <typename T>
double validate(ModelAssembly<T>& model, const std::vector<ModelSample<T>>& val,
                double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw std::invalid_argument("validation threshold must lie strictly inside (0,1)");
  if (val.empty()) throw std::invalid_argument("validation set is empty");
  model.set_training(false);
  double acc = 0.0;
  for (const auto& s : val) {
    Tensor<T> img({1, 3, s.image.dim(1), s.image.dim(2)});
    std::copy(s.image.vec().begin(), s.image.vec().end(), img.vec().begin());
    Tensor<T> out = model.forward(Var<T>(std::move(img), false)).value();
    acc += dice_at_threshold(out, s.mask, threshold);
  }
  return acc / static_cast<double>(val.size());
}

namespace detail {

template <typename T>
inline void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream os(path + ".tmp", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write history: " + path);
  os << "epoch,train_loss,val_dice,lr\n";
  os.precision(17);
  for (const auto& r : history)
    os << r.epoch << "," << r.train_loss << "," << r.val_dice << "," << r.lr << "\n";
  os.close();
  rename_over(path + ".tmp", path);
  (void)sizeof(T);
}

}  // namespace detail

// Runs the optimization loop: shuffled batches, per-epoch augmentation drawn
// from one seeded stream, one-cycle schedule over all steps, validation after
// every epoch, best checkpoint by validation dice.
template <typename T>
class Trainer {
 public:
  Trainer(ModelAssembly<T>& model, TrainConfig cfg)
      : model_(model),
        cfg_(std::move(cfg)),
        rng_(cfg_.seed),
        opt_(model.named_params(), AdamWConfig{cfg_.max_lr, 0.9, 0.999, 1e-8, cfg_.weight_decay}) {}

  AdamW<T>& optimizer() { return opt_; }
  Rng& rng() { return rng_; }

  // One optimizer step on an already-stacked batch. Returns the batch loss.
  double step(Tensor<T> images, Tensor<T> masks, double lr) {
    model_.set_training(true);
    model_.zero_grad();
    Var<T> pred = model_.forward(Var<T>(std::move(images), false));
    Var<T> loss = combined_loss(pred, Var<T>(std::move(masks), false));
    double out = static_cast<double>(loss.value()[0]);
    backward(loss);
    opt_.set_lr(lr);
    opt_.step();
    return out;
  }

  TrainResult fit(const std::vector<RawSample>& train_set,
                  const std::vector<RawSample>& val_set) {
    if (train_set.empty()) throw std::invalid_argument("training set is empty");
    if (val_set.empty()) throw std::invalid_argument("validation set is empty");

    std::vector<ModelSample<T>> val;
    val.reserve(val_set.size());
    for (const auto& raw : val_set) val.push_back(normalize_resize<T>(raw, cfg_.image_size));

    const int64_t n = static_cast<int64_t>(train_set.size());
    const int64_t steps_per_epoch = (n + cfg_.batch_size - 1) / cfg_.batch_size;
    const int64_t total_steps = cfg_.epochs * steps_per_epoch;

    TrainResult result;
    if (!cfg_.out_dir.empty()) {
      std::filesystem::create_directories(cfg_.out_dir);
      result.best_path = cfg_.out_dir + "/best.ckpt";
      result.last_path = cfg_.out_dir + "/last.ckpt";
      result.history_path = cfg_.out_dir + "/history.csv";
    }

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    int64_t gstep = 0;
    for (int64_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      rng_.shuffle(order.begin(), order.end());
      double loss_sum = 0.0;
      double lr = cfg_.max_lr;
      for (int64_t b = 0; b < steps_per_epoch; ++b) {
        std::vector<ModelSample<T>> batch;
        int64_t lo = b * cfg_.batch_size;
        int64_t hi = std::min(n, lo + cfg_.batch_size);
        batch.reserve(static_cast<size_t>(hi - lo));
        for (int64_t i = lo; i < hi; ++i) {
          const auto& raw = train_set[static_cast<size_t>(order[static_cast<size_t>(i)])];
          batch.push_back(cfg_.augment
                              ? normalize_resize<T>(augment(raw, rng_), cfg_.image_size)
                              : normalize_resize<T>(raw, cfg_.image_size));
        }
        lr = one_cycle_lr(gstep, total_steps, cfg_.max_lr, cfg_.schedule);
        double l = step(stack_images(batch), stack_masks(batch), lr);
        if (!std::isfinite(l))
          throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(b));
        loss_sum += l;
        ++gstep;
      }
      double val_dice = validate(model_, val, cfg_.val_threshold);
      result.history.push_back(
          {epoch, loss_sum / static_cast<double>(steps_per_epoch), val_dice, lr});
      if (val_dice > result.best_val_dice || result.best_epoch < 0) {
        result.best_epoch = epoch;
        result.best_val_dice = val_dice;
        if (!result.best_path.empty()) save(result.best_path, epoch, val_dice);
      }
      if (!result.history_path.empty()) detail::write_history_csv<T>(result.history_path, result.history);
    }
    if (!result.last_path.empty())
      save(result.last_path, cfg_.epochs, result.history.back().val_dice);
    return result;
  }

 private:
  void save(const std::string& path, int64_t epoch, double val_dice) {
    CheckpointMeta meta;
    meta.epoch = epoch;
    meta.val_dice = val_dice;
    meta.config_hash = cfg_.config_hash;
    meta.seed = cfg_.seed;
    meta.rng_state = rng_.serialize();
    save_checkpoint(path, model_, &opt_, meta);
  }

  ModelAssembly<T>& model_;
  TrainConfig cfg_;
  Rng rng_;
  AdamW<T> opt_;
};

}  // namespace enformer
