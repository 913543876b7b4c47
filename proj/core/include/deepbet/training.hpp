#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepbet/augment.hpp"
#include "deepbet/network.hpp"
#include "deepbet/optimizer.hpp"
#include "deepbet/pipeline.hpp"

namespace deepbet {

struct TrainConfig {
  double lr = 0.001;
  double lambda_focal = 0.2;
  double focal_gamma = 2.0;
  /// Network samples per optimizer step.
  int batch_size = 1;
  std::int64_t epochs = 1;
  /// Optimizer steps per epoch; 0 means one pass over the training items.
  std::int64_t steps_per_epoch = 0;
  int lookahead_k = 6;
  double lookahead_alpha = 0.5;
  double weight_decay = 0.01;
  double flat_fraction = 0.75;
  /// Learning-rate factors for the encoder, decoder and head groups.
  std::array<double, 3> lr_multipliers{1.0, 1.0, 1.0};
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  bool augment = true;
  /// Written after every epoch when non-empty.
  std::filesystem::path checkpoint;
  /// CSV of step,epoch,lr,loss when non-empty.
  std::filesystem::path loss_log;

  void validate() const;
  LossConfig loss() const;
  RangerConfig ranger() const;
};

/// One training stream. Items are shuffled per epoch; `batch` builds the
/// network input and target for the given items (each item contributes
/// samples_per_item samples).
struct TrainSource {
  std::int64_t size = 0;
  int samples_per_item = 1;
  std::function<std::pair<nn::Tensor<float>, nn::Tensor<float>>(std::span<const std::int64_t> items, int batch,
                                                                Rng& rng)>
      batch;
};

struct LossRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  NetworkWeights weights;
  std::vector<LossRecord> log;
  std::vector<double> epoch_loss;  // mean loss per epoch
  std::int64_t clipped_steps = 0;
};

using EpochCallback = std::function<void(std::int64_t epoch, double mean_loss)>;

/// Trains from initial weights (built from net_cfg and the seed when
/// `initial` is null). Deterministic given the seed and the source.
TrainResult train(const NetworkConfig& net_cfg, const TrainConfig& cfg, const TrainSource& source,
                  const NetworkWeights* initial = nullptr, const EpochCallback& on_epoch = {});

/// Image/mask pairs, loaded on demand.
struct Dataset {
  std::int64_t size = 0;
  std::function<std::pair<Volume, ProbabilityMask>(std::int64_t)> load;
  std::function<std::string(std::int64_t)> id;
};

Dataset phantom_dataset(std::vector<std::uint64_t> seeds, Dims dims);

/// Pairs `<name>_img.nii[.gz]` / `<name>_mask.nii[.gz]` in a directory,
/// sorted by name.
Dataset directory_dataset(const std::filesystem::path& dir);

/// Preprocessed, RAS-canonical training volumes held in memory (masks
/// quantized to 1/255).
class PreparedSet {
 public:
  PreparedSet(const Dataset& data, const PreprocessConfig& cfg);

  std::int64_t size() const { return static_cast<std::int64_t>(images_.size()); }
  const Volume& image(std::int64_t i) const { return images_[i]; }
  Volume mask(std::int64_t i) const;

 private:
  std::vector<Volume> images_;
  std::vector<std::vector<std::uint8_t>> masks_;
};

/// Whole volume resampled to the stage-1 size, then augmented.
TrainSource stage1_source(const PreparedSet& set, const PipelineConfig& pipe, const AugmentConfig& aug, bool augment);

/// Ground-truth box plus a randomly jittered margin, resampled to the
/// stage-2 size.
TrainSource stage2_source(const PreparedSet& set, const PipelineConfig& pipe, const AugmentConfig& aug, bool augment);

/// Five-slice stacks along one view of the stage-2 crop; the target is the
/// center mask slice. Slice merge acts on the seven-slice slab.
TrainSource view_source(const PreparedSet& set, View view, const PipelineConfig& pipe, const AugmentConfig& aug,
                        bool augment);

}  // namespace deepbet
