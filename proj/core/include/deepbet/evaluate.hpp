#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepbet/postprocess.hpp"
#include "deepbet/volume.hpp"

namespace deepbet {

/// 2|a & b| / (|a| + |b|), and 1 when both masks are empty.
double dice(const BinaryMask& a, const BinaryMask& b);

/// Median of a non-empty sample (mean of the middle pair for even sizes).
double median(std::vector<double> values);

/// {0.1, 0.2, ..., 0.9}
std::vector<double> default_threshold_grid();

/// Grid threshold for binarizing the ground truth that maximizes the median
/// Dice against the predictions; ties go to the lowest threshold.
double calibrate_threshold(std::span<const ProbabilityMask> gt, std::span<const BinaryMask> pred,
                           std::span<const double> grid);

struct DiceEntry {
  std::string id;
  double dice = 0.0;
  bool operator==(const DiceEntry&) const = default;
};

struct DiceReport {
  std::vector<DiceEntry> samples;
  double threshold = 0.5;
  double images_per_minute = 0.0;
  std::string hardware;
  int threads = 1;

  double median_dice() const;
  double min_dice() const;
  double max_dice() const;

  /// `id,dice,threshold` rows followed by "# key=value" summary comments.
  std::string to_csv() const;
  static DiceReport from_csv(std::string_view text);
};

/// CPU model and logical core count from /proc/cpuinfo.
std::string hardware_descriptor();

struct BenchmarkResult {
  double images_per_minute = 0.0;   // median over repetitions
  std::vector<double> rates;        // one per repetition
  std::string hardware;
  int threads = 1;
};

/// Times `extract` over all volumes once per repetition (the caller has
/// already loaded inputs and weights).
BenchmarkResult benchmark(const std::function<void(const Volume&)>& extract, std::span<const Volume> volumes,
                          int repetitions, int threads = 1);

struct RotationPoint {
  double angle_deg = 0.0;
  double dice = 0.0;
};

/// Rotates image and ground truth about the sagittal (x) axis through the
/// volume center, extracts, and scores against the rotated truth
/// binarized at `threshold`.
std::vector<RotationPoint> rotation_sweep(const Volume& image, const ProbabilityMask& gt,
                                          const std::function<BinaryMask(const Volume&)>& extract,
                                          std::span<const double> angles_deg, double threshold = 0.5);

}  // namespace deepbet
