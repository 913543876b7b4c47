#pragma once

#include <array>
#include <functional>

#include <Eigen/Core>

#include "deepbet/volume.hpp"

namespace deepbet {

enum class Interp { kTrilinear, kNearest };

/// Axis permutation + flips taking a volume's voxel axes to RAS order.
/// Output axis i reads input axis source_axis[i], reversed when flip[i].
struct Orientation {
  std::array<int, 3> source_axis{0, 1, 2};
  std::array<bool, 3> flip{false, false, false};

  bool is_identity() const;
  Orientation inverse() const;
  bool operator==(const Orientation&) const = default;
};

/// Orientation that brings the affine's dominant directions to +R, +A, +S.
Orientation ras_orientation(const Affine& affine);

/// Reorders voxels per `o` and updates the affine so every voxel keeps its
/// world coordinate.
Volume apply_orientation(const Volume& v, const Orientation& o);

Volume canonicalize_orientation(const Volume& v);

/// Axis-aligned resampling onto target_dims voxels covering the same world
/// extent. Voxel centers are aligned with the half-voxel convention: output
/// index j maps to input coordinate (j + 0.5) * n_in / n_out - 0.5, clamped
/// to the input grid.
Volume resample(const Volume& v, const Dims& target_dims, Interp mode = Interp::kTrilinear);

Volume crop(const Volume& v, const BoundingBox& box);

/// Places `mask` at `box` inside a zero volume of full_dims. The result's
/// affine is the mask affine shifted back by box.lo.
Volume embed(const Volume& mask, const BoundingBox& box, const Dims& full_dims);

/// Maps an output voxel index to a (fractional) input voxel index.
using IndexMap = std::function<Eigen::Vector3d(const Eigen::Vector3d&)>;

/// Pulls values through `out_to_in` with trilinear interpolation. Samples
/// falling outside the input grid take `fill`.
std::vector<float> sample_mapped(const Volume& v, const IndexMap& out_to_in, float fill = 0.0f);

/// Trilinear value at a fractional index; `fill` outside the grid.
float sample_trilinear(const Volume& v, const Eigen::Vector3d& idx, float fill = 0.0f);

/// Rotation by `degrees` about voxel axis `axis` through the volume center,
/// in spacing-scaled coordinates. Geometry (affine) is left unchanged.
Volume rotate_about_center(const Volume& v, int axis, double degrees, float fill = 0.0f);

/// Reverses the data along one axis, keeping the affine.
Volume flip_axis(const Volume& v, int axis);

}  // namespace deepbet
