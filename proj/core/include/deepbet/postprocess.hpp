#pragma once

#include <cstdint>
#include <vector>

#include "deepbet/volume.hpp"

namespace deepbet {

/// Binary voxel mask in x-fastest order, one byte per voxel (0 or 1).
struct BinaryMask {
  Dims dims{0, 0, 0};
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  explicit BinaryMask(Dims d) : dims(d), bits(static_cast<std::size_t>(voxel_count(d)), 0) {}

  std::int64_t size() const { return static_cast<std::int64_t>(bits.size()); }
  std::int64_t count() const;
  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const { return x + dims[0] * (y + dims[1] * z); }
  bool operator==(const BinaryMask&) const = default;

  /// Float volume (0/1) with the geometry of `like`.
  Volume to_volume(const Volume& like) const;
};

/// Voxels with value >= threshold.
BinaryMask binarize(const Volume& v, double threshold);

/// Keeps the largest 26-connected foreground component. Equal sizes are
/// resolved in favor of the component whose lowest voxel index is smallest.
BinaryMask largest_component(const BinaryMask& m);

/// Sets background voxels that are not 6-connected to the volume border.
BinaryMask fill_holes(const BinaryMask& m);

}  // namespace deepbet
