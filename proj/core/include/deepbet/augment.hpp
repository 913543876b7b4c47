#pragma once

#include <array>
#include <utility>

#include <Eigen/Core>

#include "deepbet/rng.hpp"
#include "deepbet/volume.hpp"

namespace deepbet {

/// Training-time augmentation knobs. Each transform fires with its own
/// probability; artifact strengths are drawn uniformly from the ranges.
struct AugmentConfig {
  double p_flip = 0.5;
  double p_rotate = 0.5;
  double p_zoom = 0.5;
  double p_warp = 0.5;
  double p_lighting = 0.5;
  double p_bias = 0.5;
  double p_motion = 0.5;
  double p_noise = 0.5;
  double p_blur = 0.5;
  double p_ghosting = 0.5;
  double p_slice_merge = 0.5;

  double max_rotate_deg = 15.0;
  double max_lighting = 0.5;
  double max_warp = 0.1;
  std::array<double, 2> zoom_range{1.0, 1.1};
  int bias_order = 4;
  double bias_magnitude = 0.3;
  std::array<int, 2> ghost_count_range{4, 10};
  std::array<double, 2> ghost_intensity_range{0.2, 0.6};
  std::array<double, 2> noise_std_range{0.0, 0.1};
  std::array<double, 2> blur_sigma_range{0.0, 1.0};
  std::array<double, 2> motion_severity_range{0.0, 3.0};
  double slice_merge_alpha_max = 0.5;
  bool slice_merge_normalized = false;

  void validate() const;
};

/// Everything sampled for one spatial transform. Identity when all flags
/// are off.
struct SpatialParams {
  bool flip = false;
  Eigen::Vector3d rotation_axis = Eigen::Vector3d::UnitZ();
  double rotation_deg = 0.0;
  double zoom = 1.0;
  Eigen::Vector3d warp = Eigen::Vector3d::Zero();

  bool resamples() const { return rotation_deg != 0.0 || zoom != 1.0 || !warp.isZero(); }
  bool is_identity() const { return !flip && !resamples(); }
};

SpatialParams draw_spatial(const AugmentConfig& cfg, Rng& rng);

/// Applies flip (left-right, axis 0), rotation about the center, zoom and a
/// projective tilt w = 1 + warp . u in center-normalized coordinates u.
/// Samples outside the grid take `fill`.
Volume apply_spatial(const Volume& v, const SpatialParams& p, float fill);

/// Same draw, applied to both; the mask is interpolated trilinearly.
std::pair<Volume, Volume> spatial_transform(const Volume& img, const Volume& mask,
                                            const AugmentConfig& cfg, Rng& rng);

/// img' = mean + contrast * (img - mean) + brightness.
Volume apply_lighting(const Volume& img, double brightness, double contrast);
Volume intensity_transform(const Volume& img, const AugmentConfig& cfg, Rng& rng);

/// Random polynomial log-field of total degree <= order scaled to
/// max |P| == magnitude over the grid.
std::vector<double> random_log_field(const Dims& dims, int order, double magnitude, Rng& rng);
Volume apply_log_field(const Volume& img, std::span<const double> log_field);
Volume simulate_bias_field(const Volume& img, Rng& rng, int order, double magnitude);

/// Whether DFT bin k (of n) along the ghosting axis is attenuated.
bool ghost_line_attenuated(long k, long n, int n_ghosts);

/// 1D DFT along `axis`; lines with |signed frequency| a nonzero multiple of
/// n_ghosts are scaled by (1 - intensity); inverse DFT; real part.
Volume add_ghosting(const Volume& img, int n_ghosts, int axis, double intensity);
Volume random_ghosting(const Volume& img, const AugmentConfig& cfg, Rng& rng);

/// Gaussian noise with std = relative_std * std(img).
Volume add_noise(const Volume& img, Rng& rng, double relative_std);

/// Separable Gaussian blur, sigma in voxels, mirrored boundaries.
Volume blur(const Volume& img, double sigma);

/// Two rigid integer translations (|shift| <= severity per axis) composited
/// in k-space: bins along `axis` are assigned center-out to the original and
/// then each displaced copy at the two split points.
struct MotionParams {
  int axis = 2;
  std::array<Eigen::Vector3i, 2> shifts{Eigen::Vector3i::Zero(), Eigen::Vector3i::Zero()};
  std::array<double, 2> split{0.5, 0.75};
};
MotionParams draw_motion(Rng& rng, double severity);
Volume apply_motion(const Volume& img, const MotionParams& p);
Volume motion(const Volume& img, Rng& rng, double severity);

/// Interior slices along `axis`: x_i <- (1 - a) x_i + a (x_{i+1} + x_{i-1}),
/// or with a/2 per neighbor when `normalized`. Boundary slices unchanged.
Volume slice_merge_with_alpha(const Volume& stack, double alpha, int axis, bool normalized = false);

/// Draws one alpha in [0, alpha_max] and applies it to both stacks.
std::pair<Volume, Volume> slice_merge(const Volume& img_stack, const Volume& mask_stack, Rng& rng,
                                      double alpha_max, int axis, bool normalized = false);

/// Full 3D training augmentation: spatial, lighting, bias, motion, ghosting,
/// noise, blur (each gated by its probability). Slice merge is separate.
std::pair<Volume, Volume> augment_pair(const Volume& img, const Volume& mask, const AugmentConfig& cfg,
                                       Rng& rng);

}  // namespace deepbet
