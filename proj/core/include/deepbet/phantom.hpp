#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "deepbet/volume.hpp"

namespace deepbet {

/// Synthetic head: a lobed ellipsoidal brain (grey matter around a white
/// matter core) inside a dark CSF rim, a skull shell and a scalp layer.
/// Geometry, contrasts and noise are drawn from `seed`.
struct PhantomSpec {
  std::uint64_t seed = 0;
  Dims dims{64, 64, 64};
  /// Field of view along the longest axis in mm (isotropic voxels).
  double fov_mm = 192.0;
  /// Noise std as a fraction of grey-matter intensity, drawn from this range.
  std::array<double, 2> noise_range{0.01, 0.04};
  /// Max |log| amplitude of a multiplicative order-2 bias field; 0 disables.
  double bias_magnitude = 0.0;
  /// Random rotation up to this angle about a random principal axis.
  double max_rotation_deg = 0.0;
};

/// Geometry actually drawn for a phantom.
struct PhantomInfo {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  // voxel coordinates
  Eigen::Vector3d radii = Eigen::Vector3d::Zero();   // voxels
  double transition_width = 0.0;                     // sigmoid scale, voxels
  double gm_intensity = 0.0;
  double wm_intensity = 0.0;
  double csf_intensity = 0.0;
  double skull_intensity = 0.0;
  double scalp_intensity = 0.0;
};

struct Phantom {
  Volume image;
  ProbabilityMask mask;
  PhantomInfo info;
};

/// Deterministic in the PhantomSpec. Throws SpecInfeasible when the scalp would
/// reach the volume border.
Phantom generate(const PhantomSpec& spec);

/// Training phantoms use even seeds, held-out phantoms odd seeds.
inline bool is_held_out(std::uint64_t seed) { return seed % 2 == 1; }

struct PhantomSample {
  std::uint64_t seed = 0;
  Volume image;
  ProbabilityMask mask;
};

/// Phantoms for seeds base_seed, base_seed + 1, ..., base_seed + n - 1.
std::vector<PhantomSample> generate_set(std::int64_t n, std::uint64_t base_seed, Dims dims);

/// The n-th seed (from 0) of the training or held-out split at or after base.
std::uint64_t split_seed(std::uint64_t base_seed, std::int64_t n, bool held_out);

}  // namespace deepbet
