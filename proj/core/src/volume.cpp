#include "deepbet/volume.hpp"

#include <cmath>
#include <string>

#include <Eigen/LU>

namespace deepbet {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::kCorruptHeader: return "CorruptHeader";
    case ErrorCode::kTruncatedData: return "TruncatedData";
    case ErrorCode::kRangeOverflow: return "RangeOverflow";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kDegenerateAffine: return "DegenerateAffine";
    case ErrorCode::kBoxOutOfRange: return "BoxOutOfRange";
    case ErrorCode::kZeroVariance: return "ZeroVariance";
    case ErrorCode::kNonPositiveIntensities: return "NonPositiveIntensities";
    case ErrorCode::kSingularFit: return "SingularFit";
    case ErrorCode::kTooFewSlices: return "TooFewSlices";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kNoForeground: return "NoForeground";
    case ErrorCode::kSpecInfeasible: return "SpecInfeasible";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kConfig: return "ConfigError";
  }
  return "Unknown";
}

Volume::Volume(Dims dims, std::vector<float> data, Spacing spacing, Affine affine,
               DType dtype)
    : dims_(dims), data_(std::move(data)), spacing_(spacing), affine_(affine), dtype_(dtype) {
  for (auto d : dims_) {
    if (d <= 0) throw Error(ErrorCode::kShapeMismatch, "volume dims must be positive");
  }
  if (static_cast<std::int64_t>(data_.size()) != voxel_count(dims_)) {
    throw Error(ErrorCode::kShapeMismatch,
                "data length " + std::to_string(data_.size()) + " != product(dims)");
  }
  for (auto s : spacing_) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw Error(ErrorCode::kInvalidArgument, "spacing must be positive");
    }
  }
  const double det = affine_.topLeftCorner<3, 3>().determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12) {
    throw Error(ErrorCode::kDegenerateAffine, "affine linear part is singular");
  }
}

Volume Volume::zeros(Dims dims, Spacing spacing) {
  return Volume(dims, std::vector<float>(static_cast<std::size_t>(voxel_count(dims)), 0.0f),
                spacing, diagonal_affine(spacing));
}

Volume Volume::with_data(std::vector<float> data) const {
  return Volume(dims_, std::move(data), spacing_, affine_, dtype_);
}

Eigen::Vector3d Volume::world(double x, double y, double z) const {
  const Eigen::Vector4d p = affine_ * Eigen::Vector4d(x, y, z, 1.0);
  return p.head<3>();
}

void validate_box(const BoundingBox& box, const Dims& dims) {
  for (int a = 0; a < 3; ++a) {
    if (box.lo[a] < 0 || box.lo[a] >= box.hi[a] || box.hi[a] > dims[a]) {
      throw Error(ErrorCode::kBoxOutOfRange,
                  "axis " + std::to_string(a) + ": [" + std::to_string(box.lo[a]) + ", " +
                      std::to_string(box.hi[a]) + ") not within [0, " +
                      std::to_string(dims[a]) + "]");
    }
  }
}

Affine diagonal_affine(const Spacing& spacing) {
  Affine a = Affine::Identity();
  for (int i = 0; i < 3; ++i) a(i, i) = spacing[i];
  return a;
}

Spacing spacing_from_affine(const Affine& affine) {
  Spacing s{};
  for (int i = 0; i < 3; ++i) s[i] = affine.block<3, 1>(0, i).norm();
  return s;
}

}  // namespace deepbet
