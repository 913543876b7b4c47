#pragma once

#include <array>
#include <span>
#include <vector>

#include "deepbet/volume.hpp"

namespace deepbet {

struct PreprocessConfig {
  double q_lo = 0.005;
  double q_hi = 0.995;
  double target_mean = 0.449;
  double target_std = 0.229;
  int bias_order = 4;
  bool bias_enabled = true;

  void validate() const;
};

/// Empirical quantile: the order statistic at rank round(q * (n - 1)),
/// found by exact selection. Clipping to it is idempotent.
double quantile(std::span<const float> values, double q);

Volume clip_intensities(const Volume& v, double q_lo, double q_hi);

/// Affine map to the target moments (population statistics over all voxels).
/// Throws ZeroVariance when the input std is <= 1e-8.
Volume normalize(const Volume& v, double target_mean, double target_std);

/// Otsu threshold over a 256-bin histogram; foreground is value > threshold.
double otsu_threshold(std::span<const float> values);

/// Monomials x^i y^j z^k with i + j + k <= order on coordinates scaled to
/// [-1, 1] per axis.
class PolynomialBasis {
 public:
  PolynomialBasis(const Dims& dims, int order);

  std::size_t size() const { return exponents_.size(); }
  const std::vector<std::array<int, 3>>& exponents() const { return exponents_; }

  /// Fills `row` with every basis function at voxel (x, y, z).
  void evaluate(std::int64_t x, std::int64_t y, std::int64_t z, std::span<double> row) const;

  /// Dense evaluation of sum_k coeffs[k] * basis_k over the whole grid.
  std::vector<double> field(std::span<const double> coeffs) const;

 private:
  Dims dims_;
  int order_;
  std::vector<std::array<int, 3>> exponents_;
  // powers_[axis][i * (order + 1) + p] = coordinate_i ^ p
  std::array<std::vector<double>, 3> powers_;
};

struct BiasEstimate {
  /// Fitted log-field, shifted to zero mean over the foreground. Off the
  /// foreground it is clamped to the range seen on it.
  std::vector<double> log_field;
  std::vector<std::uint8_t> foreground;
  double threshold = 0.0;
};

/// Least-squares polynomial fit over the Otsu foreground, matched to
/// log-intensity differences between neighbouring voxels. Voxels near tissue
/// edges are left out so piecewise-constant anatomy does not enter the fit.
BiasEstimate estimate_bias_field(const Volume& v, int order);

/// Divides out exp(fitted log-field). Mean foreground log-intensity is kept.
Volume correct_bias(const Volume& v, int order);

/// bias (optional) -> clip -> normalize.
Volume preprocess(const Volume& v, const PreprocessConfig& cfg);

}  // namespace deepbet
