#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "deepbet/error.hpp"

namespace deepbet {

using Dims = std::array<std::int64_t, 3>;
using Spacing = std::array<double, 3>;
using Affine = Eigen::Matrix4d;

/// Storage type a volume was read from or should be written as.
enum class DType : std::uint8_t { kU8, kI16, kF32 };

inline std::int64_t voxel_count(const Dims& d) { return d[0] * d[1] * d[2]; }

/// 3D scalar grid in x-fastest order with a voxel-index to world-mm affine.
///
/// Volumes are immutable once constructed; transforms build new ones. The
/// constructor validates the type invariants (positive dims, matching data
/// length, positive spacing, invertible affine).
class Volume {
 public:
  Volume(Dims dims, std::vector<float> data, Spacing spacing, Affine affine,
         DType dtype = DType::kF32);

  /// Zero-filled volume with diagonal affine built from spacing.
  static Volume zeros(Dims dims, Spacing spacing = {1.0, 1.0, 1.0});

  /// Same geometry, new values.
  Volume with_data(std::vector<float> data) const;

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  const Affine& affine() const noexcept { return affine_; }
  DType dtype() const noexcept { return dtype_; }

  std::span<const float> data() const noexcept { return data_; }
  std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }

  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return x + dims_[0] * (y + dims_[1] * z);
  }
  float at(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return data_[static_cast<std::size_t>(index(x, y, z))];
  }

  /// World position (mm) of a voxel index.
  Eigen::Vector3d world(double x, double y, double z) const;

 private:
  Dims dims_;
  std::vector<float> data_;
  Spacing spacing_;
  Affine affine_;
  DType dtype_;
};

/// A Volume whose values lie in [0, 1].
using ProbabilityMask = Volume;

/// Per-axis half-open voxel interval [lo, hi).
struct BoundingBox {
  std::array<std::int64_t, 3> lo{0, 0, 0};
  std::array<std::int64_t, 3> hi{0, 0, 0};

  Dims extent() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= lo[0] && x < hi[0] && y >= lo[1] && y < hi[1] && z >= lo[2] && z < hi[2];
  }
  bool operator==(const BoundingBox&) const = default;
};

/// Throws BoxOutOfRange unless 0 <= lo < hi <= dims on every axis.
void validate_box(const BoundingBox& box, const Dims& dims);

Affine diagonal_affine(const Spacing& spacing);

/// Spacing implied by the column norms of the affine's linear part.
Spacing spacing_from_affine(const Affine& affine);

}  // namespace deepbet
