#include "deepbet/evaluate.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "deepbet/geometry.hpp"
#include "deepbet/parallel.hpp"

namespace deepbet {

double dice(const BinaryMask& a, const BinaryMask& b) {
  if (a.dims != b.dims) throw Error(ErrorCode::kShapeMismatch, "dice inputs differ in dims");
  std::int64_t na = 0;
  std::int64_t nb = 0;
  std::int64_t both = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    na += a.bits[i];
    nb += b.bits[i];
    both += a.bits[i] & b.bits[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 9; ++i) g.push_back(i / 10.0);
  return g;
}

double calibrate_threshold(std::span<const ProbabilityMask> gt, std::span<const BinaryMask> pred,
                           std::span<const double> grid) {
  if (gt.size() != pred.size() || gt.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "calibration needs matching, non-empty lists");
  }
  if (grid.empty()) throw Error(ErrorCode::kInvalidArgument, "empty threshold grid");
  double best_t = grid[0];
  double best = -1.0;
  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  for (double t : sorted) {
    std::vector<double> scores;
    for (std::size_t i = 0; i < gt.size(); ++i) scores.push_back(dice(binarize(gt[i], t), pred[i]));
    const double m = median(scores);
    if (m > best) {
      best = m;
      best_t = t;
    }
  }
  return best_t;
}

double DiceReport::median_dice() const {
  std::vector<double> d;
  for (const auto& s : samples) d.push_back(s.dice);
  return median(d);
}

double DiceReport::min_dice() const {
  if (samples.empty()) throw Error(ErrorCode::kInvalidArgument, "empty report");
  double m = samples.front().dice;
  for (const auto& s : samples) m = std::min(m, s.dice);
  return m;
}

double DiceReport::max_dice() const {
  if (samples.empty()) throw Error(ErrorCode::kInvalidArgument, "empty report");
  double m = samples.front().dice;
  for (const auto& s : samples) m = std::max(m, s.dice);
  return m;
}

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kCorruptHeader, "bad number in report: " + std::string(s));
  }
  return v;
}

}  // namespace

std::string DiceReport::to_csv() const {
  std::string out = "id,dice,threshold\n";
  for (const auto& s : samples) {
    if (s.id.find_first_of(",\n") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "sample id contains a delimiter: " + s.id);
    }
    out += s.id + "," + format_double(s.dice) + "," + format_double(threshold) + "\n";
  }
  if (!samples.empty()) {
    out += "# median=" + format_double(median_dice()) + "\n";
    out += "# min=" + format_double(min_dice()) + "\n";
    out += "# max=" + format_double(max_dice()) + "\n";
  }
  out += "# threshold=" + format_double(threshold) + "\n";
  out += "# images_per_minute=" + format_double(images_per_minute) + "\n";
  out += "# threads=" + std::to_string(threads) + "\n";
  out += "# hardware=" + hardware + "\n";
  return out;
}

DiceReport DiceReport::from_csv(std::string_view text) {
  DiceReport r;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "id,dice,threshold") {
    throw Error(ErrorCode::kCorruptHeader, "report lacks the id,dice,threshold header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.starts_with("# ")) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const std::string value = line.substr(eq + 1);
      if (key == "threshold") r.threshold = parse_double(value);
      if (key == "images_per_minute") r.images_per_minute = parse_double(value);
      if (key == "threads") r.threads = static_cast<int>(parse_double(value));
      if (key == "hardware") r.hardware = value;
      continue;
    }
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) throw Error(ErrorCode::kCorruptHeader, "bad row: " + line);
    r.samples.push_back({line.substr(0, c1), parse_double(std::string_view(line).substr(c1 + 1, c2 - c1 - 1))});
    r.threshold = parse_double(std::string_view(line).substr(c2 + 1));
  }
  return r;
}

std::string hardware_descriptor() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  std::string model = "unknown CPU";
  int cores = 0;
  while (std::getline(in, line)) {
    if (line.starts_with("model name")) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
    }
    if (line.starts_with("processor")) ++cores;
  }
  if (cores == 0) cores = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return model + " (" + std::to_string(cores) + " logical cores)";
}

BenchmarkResult benchmark(const std::function<void(const Volume&)>& extract, std::span<const Volume> volumes,
                          int repetitions, int threads) {
  if (volumes.empty() || repetitions < 1) throw Error(ErrorCode::kInvalidArgument, "nothing to benchmark");
  BenchmarkResult r;
  r.hardware = hardware_descriptor();
  r.threads = threads;
  for (int rep = 0; rep < repetitions; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    parallel_for(static_cast<std::int64_t>(volumes.size()), threads,
                 [&](std::int64_t i) { extract(volumes[static_cast<std::size_t>(i)]); });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.rates.push_back(60.0 * static_cast<double>(volumes.size()) / std::max(secs, 1e-9));
  }
  r.images_per_minute = median(r.rates);
  return r;
}

std::vector<RotationPoint> rotation_sweep(const Volume& image, const ProbabilityMask& gt,
                                          const std::function<BinaryMask(const Volume&)>& extract,
                                          std::span<const double> angles_deg, double threshold) {
  std::vector<RotationPoint> out;
  for (double angle : angles_deg) {
    const Volume rotated = angle == 0.0 ? image : rotate_about_center(image, 0, angle, 0.0f);
    const Volume truth = angle == 0.0 ? gt : rotate_about_center(gt, 0, angle, 0.0f);
    out.push_back({angle, dice(extract(rotated), binarize(truth, threshold))});
  }
  return out;
}

}  // namespace deepbet
