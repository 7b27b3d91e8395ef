#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "voxdiff/diffusion.hpp"
#include "voxdiff/optimizer.hpp"
#include "voxdiff/phantom.hpp"
#include "voxdiff/unet.hpp"

namespace voxdiff {

struct TrainConfig {
  int epochs = 200;
  Dims3 patch{16, 16, 16};
  int batch_size = 4;
  int patches_per_volume = 1;  // per training pair, per epoch
  AdamConfig adam{};
  std::uint64_t seed = 0;
  int checkpoint_every = 10;  // epochs between validation + checkpoint

  /// 2,500 epochs on 64^3 patches.
  static TrainConfig paper_scale();
  static TrainConfig desk_scale() { return {}; }

  void validate() const;
};

struct EpochRecord {
  int epoch;  // 1-based
  double train_loss;
  std::optional<double> val_loss;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Everything besides the network weights needed to continue a run.
struct TrainState {
  int epoch = 0;  // completed epochs
  OptimizerState<float> optimizer;
  bool clipping = false;  // latched on after a non-finite gradient retry
  std::optional<double> initial_val;
  std::optional<double> best_val;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
};

struct TrainOptions {
  /// When set: `loss.csv`, `best/`, `last/` (every checkpoint) and `final/`.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const std::string&)> log;
};

/// Validation grid {1, T/4, T/2, 3T/4, T} (integer division, duplicates removed).
std::vector<int> validation_steps(int T);

/// Mean epsilon-prediction loss over centred patches of `pairs` at the
/// validation grid, with noise fixed by (seed, pair index, step).
double validation_loss(const UNet<float>& net, const std::vector<PairedSample>& pairs,
                       const NoiseSchedule& sched, const TrainConfig& cfg);

/// Runs epochs state.epoch + 1 .. cfg.epochs. Each epoch's randomness is
/// derived from (cfg.seed, epoch) alone, so a run resumed from a checkpoint
/// follows the same trajectory as an uninterrupted one.
void train(UNet<float>& net, const std::vector<PairedSample>& train_pairs,
           const std::vector<PairedSample>& val_pairs, const NoiseSchedule& sched,
           const TrainConfig& cfg, TrainState& state, const TrainOptions& options = {});

/// Directory with `unet.cfg`, `params.prm`, `optimizer.prm` and
/// `trainer_state.txt`.
void save_checkpoint(const std::filesystem::path& dir, const UNet<float>& net,
                     const NoiseSchedule& sched, const TrainState& state);

/// Network configuration recorded in a checkpoint.
UNetConfig read_checkpoint_config(const std::filesystem::path& dir);

/// Number of diffusion steps the checkpoint was trained with.
int checkpoint_schedule_length(const std::filesystem::path& dir);

/// Loads weights into `net` and returns the trainer state. Throws
/// CheckpointMismatch for a different architecture, schedule length or
/// format version, and for missing or corrupt files.
TrainState load_checkpoint(const std::filesystem::path& dir, UNet<float>& net, const NoiseSchedule& sched);

/// Loads only the weights (inference).
void load_weights(const std::filesystem::path& dir, UNet<float>& net);

/// `epoch,train_loss,val_loss`, val empty on epochs without validation.
std::string loss_csv(const std::vector<EpochRecord>& history);

}  // namespace voxdiff
