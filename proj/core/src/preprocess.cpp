#include "deepbet/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "deepbet/augment.hpp"

namespace deepbet {

namespace {

// Jump in smoothed log intensity between neighbours that marks a tissue edge.
constexpr double kEdgeJump = 0.04;
constexpr int kEdgeMargin = 4;

// Voxels within `margin` (6-connected steps) of a tissue edge or of the
// foreground border.
std::vector<std::uint8_t> near_edges(const Volume& v, const std::vector<std::uint8_t>& fg, int margin) {
  const Dims& d = v.dims();
  std::vector<float> logs(fg.size());
  const auto src = v.data();
  float floor_log = std::numeric_limits<float>::infinity();
  for (std::size_t i = 0; i < fg.size(); ++i) {
    if (fg[i]) floor_log = std::min(floor_log, std::log(src[i]));
  }
  for (std::size_t i = 0; i < fg.size(); ++i) logs[i] = fg[i] ? std::log(src[i]) : floor_log;
  const Volume smooth = blur(v.with_data(std::move(logs)), 1.0);
  const auto sm = smooth.data();
  std::vector<std::uint8_t> edge(fg.size(), 0);
  for (std::int64_t z = 0; z < d[2]; ++z) {
    for (std::int64_t y = 0; y < d[1]; ++y) {
      for (std::int64_t x = 0; x < d[0]; ++x) {
        const auto i = static_cast<std::size_t>(v.index(x, y, z));
        for (int axis = 0; axis < 3 && !edge[i]; ++axis) {
          std::array<std::int64_t, 3> q{x, y, z};
          if (++q[axis] >= d[axis]) continue;
          const auto j = static_cast<std::size_t>(v.index(q[0], q[1], q[2]));
          if (fg[i] != fg[j] || std::abs(sm[j] - sm[i]) > kEdgeJump) edge[i] = edge[j] = 1;
        }
      }
    }
  }
  for (int step = 0; step < margin; ++step) {
    std::vector<std::uint8_t> grown(edge);
    for (std::int64_t z = 0; z < d[2]; ++z) {
      for (std::int64_t y = 0; y < d[1]; ++y) {
        for (std::int64_t x = 0; x < d[0]; ++x) {
          const auto i = static_cast<std::size_t>(v.index(x, y, z));
          if (!edge[i]) continue;
          for (int axis = 0; axis < 3; ++axis) {
            for (int dir : {-1, 1}) {
              std::array<std::int64_t, 3> q{x, y, z};
              q[axis] += dir;
              if (q[axis] < 0 || q[axis] >= d[axis]) continue;
              grown[static_cast<std::size_t>(v.index(q[0], q[1], q[2]))] = 1;
            }
          }
        }
      }
    }
    edge = std::move(grown);
  }
  return edge;
}

}  // namespace

void PreprocessConfig::validate() const {
  if (!(q_lo >= 0.0 && q_lo < q_hi && q_hi <= 1.0)) {
    throw Error(ErrorCode::kConfig, "preprocess: need 0 <= q_lo < q_hi <= 1");
  }
  if (!(target_std > 0.0)) throw Error(ErrorCode::kConfig, "preprocess: target_std must be > 0");
  if (bias_order < 0) throw Error(ErrorCode::kConfig, "preprocess: bias_order must be >= 0");
}

double quantile(std::span<const float> values, double q) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "quantile of empty set");
  std::vector<float> v(values.begin(), values.end());
  const auto k = static_cast<std::size_t>(std::lround(std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

Volume clip_intensities(const Volume& v, double q_lo, double q_hi) {
  const auto src = v.data();
  const double lo = q_lo <= 0.0 ? *std::min_element(src.begin(), src.end()) : quantile(src, q_lo);
  const double hi = q_hi >= 1.0 ? *std::max_element(src.begin(), src.end()) : quantile(src, q_hi);
  std::vector<float> out(src.begin(), src.end());
  const auto flo = static_cast<float>(lo);
  const auto fhi = static_cast<float>(hi);
  for (auto& x : out) x = std::clamp(x, flo, fhi);
  return v.with_data(std::move(out));
}

Volume normalize(const Volume& v, double target_mean, double target_std) {
  const auto src = v.data();
  double sum = 0.0;
  for (float x : src) sum += x;
  const double mean = sum / static_cast<double>(src.size());
  double ss = 0.0;
  for (float x : src) ss += (x - mean) * (x - mean);
  const double std = std::sqrt(ss / static_cast<double>(src.size()));
  if (!(std > 1e-8)) throw Error(ErrorCode::kZeroVariance, "cannot normalize a constant volume");
  const double scale = target_std / std;
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    out[i] = static_cast<float>((src[i] - mean) * scale + target_mean);
  }
  return v.with_data(std::move(out));
}

double otsu_threshold(std::span<const float> values) {
  constexpr int kBins = 256;
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double mn = *mn_it;
  const double mx = *mx_it;
  if (!(mx > mn)) return mn;
  const double width = (mx - mn) / kBins;
  std::vector<double> hist(kBins, 0.0);
  for (float x : values) {
    const int b = std::min(kBins - 1, static_cast<int>((x - mn) / width));
    hist[b] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];
  double w0 = 0.0;
  double sum0 = 0.0;
  double best = -1.0;
  int best_bin = 0;
  for (int b = 0; b < kBins - 1; ++b) {
    w0 += hist[b];
    sum0 += b * hist[b];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return mn + (best_bin + 1) * width;
}

PolynomialBasis::PolynomialBasis(const Dims& dims, int order) : dims_(dims), order_(order) {
  if (order < 0) throw Error(ErrorCode::kInvalidArgument, "polynomial order must be >= 0");
  for (int total = 0; total <= order; ++total) {
    for (int i = total; i >= 0; --i) {
      for (int j = total - i; j >= 0; --j) exponents_.push_back({i, j, total - i - j});
    }
  }
  for (int a = 0; a < 3; ++a) {
    const std::int64_t n = dims[a];
    auto& pw = powers_[a];
    pw.assign(static_cast<std::size_t>(n * (order + 1)), 1.0);
    for (std::int64_t i = 0; i < n; ++i) {
      const double c = n > 1 ? 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0 : 0.0;
      for (int p = 1; p <= order; ++p) pw[i * (order + 1) + p] = pw[i * (order + 1) + p - 1] * c;
    }
  }
}

void PolynomialBasis::evaluate(std::int64_t x, std::int64_t y, std::int64_t z, std::span<double> row) const {
  const int k = order_ + 1;
  const double* px = &powers_[0][x * k];
  const double* py = &powers_[1][y * k];
  const double* pz = &powers_[2][z * k];
  for (std::size_t t = 0; t < exponents_.size(); ++t) {
    const auto& e = exponents_[t];
    row[t] = px[e[0]] * py[e[1]] * pz[e[2]];
  }
}

std::vector<double> PolynomialBasis::field(std::span<const double> coeffs) const {
  std::vector<double> out(static_cast<std::size_t>(voxel_count(dims_)));
  std::vector<double> row(exponents_.size());
  std::size_t k = 0;
  for (std::int64_t z = 0; z < dims_[2]; ++z) {
    for (std::int64_t y = 0; y < dims_[1]; ++y) {
      for (std::int64_t x = 0; x < dims_[0]; ++x) {
        evaluate(x, y, z, row);
        double acc = 0.0;
        for (std::size_t t = 0; t < row.size(); ++t) acc += coeffs[t] * row[t];
        out[k++] = acc;
      }
    }
  }
  return out;
}

BiasEstimate estimate_bias_field(const Volume& v, int order) {
  if (order < 0) throw Error(ErrorCode::kInvalidArgument, "bias order must be >= 0");
  const auto src = v.data();
  BiasEstimate est;
  est.threshold = otsu_threshold(src);
  est.foreground.assign(src.size(), 0);
  std::size_t n_fg = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] > est.threshold) {
      est.foreground[i] = 1;
      ++n_fg;
    }
  }
  if (n_fg == 0) throw Error(ErrorCode::kSingularFit, "no foreground voxels above Otsu threshold");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (est.foreground[i] && !(src[i] > 0.0f)) {
      throw Error(ErrorCode::kNonPositiveIntensities, "foreground voxel with intensity <= 0");
    }
  }

  const PolynomialBasis basis(v.dims(), order);
  const auto m = static_cast<Eigen::Index>(basis.size());
  const Dims& d = v.dims();
  std::vector<double> logs(src.size(), 0.0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (est.foreground[i]) logs[i] = std::log(static_cast<double>(src[i]));
  }
  // Differences between neighbouring foreground voxels away from tissue
  // edges: the piecewise-constant anatomy cancels and only the field's
  // slope is left. Small inputs fall back to thinner margins.
  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd atb = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd r0(m), r1(m);
  std::int64_t used = 0;
  const std::int64_t wanted = 20 * m;
  for (int margin = kEdgeMargin; order > 0 && used < wanted && margin >= -1; --margin) {
    const auto excluded = margin >= 0 ? near_edges(v, est.foreground, margin)
                                      : std::vector<std::uint8_t>(src.size(), 0);
    ata.setZero();
    atb.setZero();
    used = 0;
    for (std::int64_t z = 0; z < d[2]; ++z) {
      for (std::int64_t y = 0; y < d[1]; ++y) {
        for (std::int64_t x = 0; x < d[0]; ++x) {
          const auto i = static_cast<std::size_t>(v.index(x, y, z));
          if (!est.foreground[i] || excluded[i]) continue;
          bool have_row = false;
          for (int axis = 0; axis < 3; ++axis) {
            std::array<std::int64_t, 3> q{x, y, z};
            if (++q[axis] >= d[axis]) continue;
            const auto j = static_cast<std::size_t>(v.index(q[0], q[1], q[2]));
            if (!est.foreground[j] || excluded[j]) continue;
            if (!have_row) {
              basis.evaluate(x, y, z, std::span<double>(r0.data(), static_cast<std::size_t>(m)));
              have_row = true;
            }
            basis.evaluate(q[0], q[1], q[2], std::span<double>(r1.data(), static_cast<std::size_t>(m)));
            r1 -= r0;
            ata.selfadjointView<Eigen::Lower>().rankUpdate(r1);
            atb += r1 * (logs[j] - logs[i]);
            ++used;
          }
        }
      }
    }
  }
  ata = ata.selfadjointView<Eigen::Lower>();
  // The constant term has no difference; pin it to zero.
  ata(0, 0) = 1.0;
  if (used < m - 1) throw Error(ErrorCode::kSingularFit, "too few foreground neighbour pairs for the fit");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(ata);
  qr.setThreshold(1e-10);
  if (qr.rank() < m) {
    throw Error(ErrorCode::kSingularFit, "design matrix rank " + std::to_string(qr.rank()) + " < " +
                                             std::to_string(m));
  }
  const Eigen::VectorXd coeffs = qr.solve(atb);
  est.log_field = basis.field(std::span<const double>(coeffs.data(), static_cast<std::size_t>(m)));

  double fg_mean = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (est.foreground[i]) fg_mean += est.log_field[i];
  }
  fg_mean /= static_cast<double>(n_fg);
  // The polynomial is only constrained on the foreground; outside it the
  // field is held within the range it takes there.
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!est.foreground[i]) continue;
    lo = std::min(lo, est.log_field[i]);
    hi = std::max(hi, est.log_field[i]);
  }
  for (auto& f : est.log_field) f = std::clamp(f, lo, hi) - fg_mean;
  return est;
}

Volume correct_bias(const Volume& v, int order) {
  const BiasEstimate est = estimate_bias_field(v, order);
  const auto src = v.data();
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    out[i] = static_cast<float>(src[i] * std::exp(-est.log_field[i]));
  }
  return v.with_data(std::move(out));
}

Volume preprocess(const Volume& v, const PreprocessConfig& cfg) {
  cfg.validate();
  Volume cur = cfg.bias_enabled ? correct_bias(v, cfg.bias_order) : v;
  cur = clip_intensities(cur, cfg.q_lo, cfg.q_hi);
  return normalize(cur, cfg.target_mean, cfg.target_std);
}

}  // namespace deepbet
