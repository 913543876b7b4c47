#pragma once

#include <array>
#include <vector>

#include "deepbet/network.hpp"
#include "deepbet/postprocess.hpp"
#include "deepbet/preprocess.hpp"
#include "deepbet/volume.hpp"
#include "deepbet/weights_io.hpp"

namespace deepbet {

enum class PredictMode { k3D, k2D };

/// Slicing direction; the value is the RAS voxel axis held fixed per slice.
enum class View { kSagittal = 0, kCoronal = 1, kAxial = 2 };

const char* view_name(View v);

struct PipelineConfig {
  int stage1_size = 128;
  int stage2_size = 256;
  double margin_fraction = 0.10;
  double binarize_threshold = 0.5;
  /// Threshold on the stage-1 probabilities for the crop box.
  double stage1_threshold = 0.5;
  int multi_slice_n = 5;
  std::vector<View> views{View::kSagittal, View::kCoronal, View::kAxial};
  PredictMode mode = PredictMode::k3D;
  /// Slices per 2D forward pass.
  int slice_batch = 16;
  PreprocessConfig preprocess;

  void validate() const;

  static PipelineConfig desk();
  static PipelineConfig paper();
};

/// Network probabilities (sigmoid of the logits) for a single volume.
Volume predict_volume(const LinkNet<float>& net, const Volume& v);

/// Resamples to stage1_size^3 and predicts; the mask lives on that grid.
ProbabilityMask predict_stage1(const Volume& v, const NetworkWeights& w, const PipelineConfig& cfg);

/// Tightest box around voxels >= threshold. Throws NoForeground.
BoundingBox minimal_bbox(const Volume& m, double threshold);

/// Grows each axis by round-half-up(margin_fraction * edge) on both sides,
/// clamped to [0, dims).
BoundingBox expand_bbox(const BoundingBox& b, double margin_fraction, const Dims& dims);

/// Box on a grid of `from` dims mapped to the grid of `to` dims covering the
/// same extent (outward rounding).
BoundingBox map_box(const BoundingBox& b, const Dims& from, const Dims& to);

/// Crop of v at box resampled to size^3.
Volume crop_resample(const Volume& v, const BoundingBox& box, int size);

/// Stage-2 3D prediction embedded into v's grid (zero outside box).
ProbabilityMask predict_stage2_3d(const Volume& v, const BoundingBox& box, const NetworkWeights& w,
                                  const PipelineConfig& cfg);

/// Indices of the n slices centered at i along an axis of length len, with
/// edge replication.
std::vector<std::int64_t> slice_window(std::int64_t i, std::int64_t len, int n);

/// Network input for slice i: channels are slices i-2..i+2 along the view
/// axis; spatial axes are the two remaining axes in ascending order.
nn::Tensor<float> slice_stack(const Volume& v, View view, std::int64_t i, int n = 5);

/// Per-slice 2D predictions stacked back into a volume of v's dims.
Volume predict_slices_2d(const Volume& v, const NetworkWeights& w, View view, int slice_batch = 16);

/// Voxelwise (lower) median over the clamped window of n slices along axis.
Volume multi_slice_aggregate(const Volume& stack, int n, int axis);

/// Voxelwise median of three volumes.
Volume multi_view_aggregate(const Volume& a, const Volume& b, const Volume& c);

/// 2D path on the crop: per-view slices, multi-slice median, then the
/// median over views; embedded into v's grid.
ProbabilityMask predict_stage2_2d(const Volume& v, const BoundingBox& box, const WeightsSet& w,
                                  const PipelineConfig& cfg);

struct ExtractResult {
  BinaryMask mask;            // on the input grid, input orientation
  Volume masked_image;        // input * mask
  ProbabilityMask probability;  // before binarization, input orientation
  BoundingBox box;            // crop box on the canonical (RAS) grid
};

/// Full prediction: orientation, preprocessing, stage 1, crop, stage 2
/// (3D or 2D), binarization, largest component, hole filling.
ExtractResult extract(const Volume& v, const WeightsSet& w, const PipelineConfig& cfg);

/// Stage-1 probabilities upsampled to the input grid, then the same
/// binarization and cleanup. Baseline for the two-stage comparison.
ExtractResult extract_single_stage(const Volume& v, const WeightsSet& w, const PipelineConfig& cfg);

/// Binarize at threshold, keep the largest component, fill holes.
BinaryMask finalize_mask(const Volume& probability, double threshold);

}  // namespace deepbet
