#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "deepbet/augment.hpp"
#include "deepbet/network.hpp"
#include "deepbet/pipeline.hpp"
#include "deepbet/training.hpp"

namespace deepbet {

/// Every knob the tools expose. Sections of the config file:
/// [preprocess] [augment] [network] [train] [pipeline].
struct RunConfig {
  AugmentConfig augment;
  NetworkConfig network_3d = NetworkConfig::linknet_3d();
  NetworkConfig network_2d = NetworkConfig::linknet_2d();
  TrainConfig train_3d;
  TrainConfig train_2d;
  /// Epochs for the stage-2 and per-view runs; train_3d.epochs is stage 1.
  std::int64_t stage2_epochs = 1;
  std::int64_t epochs_2d = 1;
  /// Start stage 2 from the trained stage-1 weights.
  bool stage2_warm_start = false;
  PipelineConfig pipeline;  // pipeline.preprocess is the [preprocess] section

  void validate() const;

  static RunConfig desk();
  static RunConfig paper();
  /// "desk" or "paper".
  static RunConfig profile(const std::string& name);
};

/// Applies `key = value` lines under [section] headers on top of `cfg`.
/// Unknown sections or keys are errors (ErrorCode::kConfig).
void apply_ini(RunConfig& cfg, const std::string& text);
void apply_ini_file(RunConfig& cfg, const std::filesystem::path& path);

/// Single override, key written as "section.key".
void set_option(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

/// All known "section.key" names in file order.
std::vector<std::string> option_names();

/// Current values as a config file that apply_ini reads back unchanged.
std::string to_ini(const RunConfig& cfg);

using ProgressFn = std::function<void(const std::string& role, std::int64_t epoch, double mean_loss)>;

/// Trains every network the pipeline mode needs: stage1 and stage2 for 3D;
/// stage1 plus one 2D net per configured view for 2D. `both_modes` trains
/// all of them, sharing stage1. With a log_dir, each network writes
/// <role>_loss.csv and a <role>_checkpoint.dbw there after every epoch.
WeightsSet train_pipeline(const RunConfig& cfg, const PreparedSet& data, const ProgressFn& progress = {},
                          bool both_modes = false, const std::filesystem::path& log_dir = {});

}  // namespace deepbet
