#include "deepbet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "deepbet/fft.hpp"
#include "deepbet/geometry.hpp"
#include "deepbet/preprocess.hpp"

namespace deepbet {
namespace {

void check_range(const std::array<double, 2>& r, const char* name) {
  if (!(r[0] >= 0.0 && r[1] >= r[0])) {
    throw Error(ErrorCode::kConfig, std::string("augment: bad range ") + name);
  }
}

double mean_of(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(std::span<const float> v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (float x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

std::int64_t axis_stride(const Dims& d, int axis) {
  return axis == 0 ? 1 : (axis == 1 ? d[0] : d[0] * d[1]);
}

}  // namespace

void AugmentConfig::validate() const {
  for (double p : {p_flip, p_rotate, p_zoom, p_warp, p_lighting, p_bias, p_motion, p_noise, p_blur,
                   p_ghosting, p_slice_merge}) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::kConfig, "augment: probability outside [0,1]");
  }
  if (max_rotate_deg < 0 || max_lighting < 0 || max_lighting >= 1.0 || max_warp < 0) {
    throw Error(ErrorCode::kConfig, "augment: maxima must be non-negative (max_lighting < 1)");
  }
  if (!(zoom_range[0] > 0.0 && zoom_range[1] >= zoom_range[0])) {
    throw Error(ErrorCode::kConfig, "augment: bad zoom_range");
  }
  if (bias_order < 0 || bias_magnitude < 0) throw Error(ErrorCode::kConfig, "augment: bad bias settings");
  if (!(ghost_count_range[0] >= 1 && ghost_count_range[1] >= ghost_count_range[0])) {
    throw Error(ErrorCode::kConfig, "augment: bad ghost_count_range");
  }
  check_range(ghost_intensity_range, "ghost_intensity_range");
  if (ghost_intensity_range[1] > 1.0) throw Error(ErrorCode::kConfig, "augment: ghost intensity > 1");
  check_range(noise_std_range, "noise_std_range");
  check_range(blur_sigma_range, "blur_sigma_range");
  check_range(motion_severity_range, "motion_severity_range");
  if (!(slice_merge_alpha_max >= 0.0 && slice_merge_alpha_max <= 0.5)) {
    throw Error(ErrorCode::kConfig, "augment: slice_merge_alpha_max must lie in [0, 0.5]");
  }
}

SpatialParams draw_spatial(const AugmentConfig& cfg, Rng& rng) {
  SpatialParams p;
  p.flip = rng.bernoulli(cfg.p_flip);
  if (rng.bernoulli(cfg.p_rotate)) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() < 1e-12) axis = Eigen::Vector3d::UnitZ();
    p.rotation_axis = axis.normalized();
    p.rotation_deg = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg);
  }
  if (rng.bernoulli(cfg.p_zoom)) p.zoom = rng.uniform(cfg.zoom_range[0], cfg.zoom_range[1]);
  if (rng.bernoulli(cfg.p_warp)) {
    for (int a = 0; a < 3; ++a) p.warp(a) = rng.uniform(-cfg.max_warp, cfg.max_warp);
  }
  return p;
}

Volume apply_spatial(const Volume& v, const SpatialParams& p, float fill) {
  if (p.is_identity()) return v;
  if (!p.resamples()) return flip_axis(v, 0);

  const Dims& d = v.dims();
  const Eigen::Vector3d sp(v.spacing()[0], v.spacing()[1], v.spacing()[2]);
  const Eigen::Vector3d center(0.5 * static_cast<double>(d[0] - 1), 0.5 * static_cast<double>(d[1] - 1),
                               0.5 * static_cast<double>(d[2] - 1));
  const Eigen::Vector3d half_mm = center.cwiseProduct(sp).cwiseMax(1e-9);
  const double radius = half_mm.maxCoeff();
  const Eigen::Matrix3d rinv =
      Eigen::AngleAxisd(-p.rotation_deg * std::numbers::pi / 180.0, p.rotation_axis).toRotationMatrix();
  const double inv_zoom = 1.0 / p.zoom;

  auto map = [&](const Eigen::Vector3d& out_idx) -> Eigen::Vector3d {
    // Output index -> isotropic normalized coordinates.
    Eigen::Vector3d u = (out_idx - center).cwiseProduct(sp) / radius;
    const double w = 1.0 + p.warp.dot(u);
    Eigen::Vector3d q = rinv * (u * inv_zoom) / (std::abs(w) > 1e-6 ? w : 1e-6);
    if (p.flip) q(0) = -q(0);
    return center + (q * radius).cwiseQuotient(sp);
  };
  return v.with_data(sample_mapped(v, map, fill));
}

std::pair<Volume, Volume> spatial_transform(const Volume& img, const Volume& mask, const AugmentConfig& cfg,
                                            Rng& rng) {
  if (img.dims() != mask.dims()) throw Error(ErrorCode::kShapeMismatch, "image/mask dims differ");
  const SpatialParams p = draw_spatial(cfg, rng);
  const auto src = img.data();
  const float fill = src.empty() ? 0.0f : *std::min_element(src.begin(), src.end());
  return {apply_spatial(img, p, fill), apply_spatial(mask, p, 0.0f)};
}

Volume apply_lighting(const Volume& img, double brightness, double contrast) {
  if (brightness == 0.0 && contrast == 1.0) return img;
  const auto src = img.data();
  const double m = mean_of(src);
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    out[i] = static_cast<float>(m + contrast * (src[i] - m) + brightness);
  }
  return img.with_data(std::move(out));
}

Volume intensity_transform(const Volume& img, const AugmentConfig& cfg, Rng& rng) {
  if (!rng.bernoulli(cfg.p_lighting) || cfg.max_lighting == 0.0) return img;
  const double b = rng.uniform(-0.5 * cfg.max_lighting, 0.5 * cfg.max_lighting);
  const double log_c = std::log(1.0 - cfg.max_lighting);
  const double c = std::exp(rng.uniform(log_c, -log_c));
  return apply_lighting(img, b, c);
}

std::vector<double> random_log_field(const Dims& dims, int order, double magnitude, Rng& rng) {
  const PolynomialBasis basis(dims, order);
  std::vector<double> coeffs(basis.size());
  for (auto& c : coeffs) c = rng.uniform(-1.0, 1.0);
  std::vector<double> field = basis.field(coeffs);
  double peak = 0.0;
  for (double f : field) peak = std::max(peak, std::abs(f));
  const double s = peak > 0.0 ? magnitude / peak : 0.0;
  for (auto& f : field) f *= s;
  return field;
}

Volume apply_log_field(const Volume& img, std::span<const double> log_field) {
  const auto src = img.data();
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<float>(src[i] * std::exp(log_field[i]));
  return img.with_data(std::move(out));
}

Volume simulate_bias_field(const Volume& img, Rng& rng, int order, double magnitude) {
  if (magnitude == 0.0) return img;
  const auto field = random_log_field(img.dims(), order, magnitude, rng);
  return apply_log_field(img, field);
}

bool ghost_line_attenuated(long k, long n, int n_ghosts) {
  const long f = std::abs(fft::signed_frequency(k, n));
  return f != 0 && f % n_ghosts == 0;
}

Volume add_ghosting(const Volume& img, int n_ghosts, int axis, double intensity) {
  if (intensity == 0.0) return img;
  if (n_ghosts < 1) throw Error(ErrorCode::kInvalidArgument, "n_ghosts must be >= 1");
  const Dims& d = img.dims();
  const auto src = img.data();
  std::vector<fft::Complex> buf(src.begin(), src.end());
  fft::transform_axis(buf, d, axis, false);
  const double gain = 1.0 - intensity;
  const std::int64_t n = d[axis];
  for (std::int64_t z = 0; z < d[2]; ++z) {
    for (std::int64_t y = 0; y < d[1]; ++y) {
      for (std::int64_t x = 0; x < d[0]; ++x) {
        const std::int64_t c[3] = {x, y, z};
        if (ghost_line_attenuated(static_cast<long>(c[axis]), static_cast<long>(n), n_ghosts)) {
          buf[static_cast<std::size_t>(img.index(x, y, z))] *= gain;
        }
      }
    }
  }
  fft::transform_axis(buf, d, axis, true);
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(buf[i].real());
  return img.with_data(std::move(out));
}

Volume random_ghosting(const Volume& img, const AugmentConfig& cfg, Rng& rng) {
  const int n = cfg.ghost_count_range[0] +
                static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.ghost_count_range[1] - cfg.ghost_count_range[0] + 1)));
  const int axis = static_cast<int>(rng.below(3));
  const double intensity = rng.uniform(cfg.ghost_intensity_range[0], cfg.ghost_intensity_range[1]);
  return add_ghosting(img, n, axis, intensity);
}

Volume add_noise(const Volume& img, Rng& rng, double relative_std) {
  if (relative_std == 0.0) return img;
  const auto src = img.data();
  const double s = relative_std * std_of(src);
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<float>(src[i] + s * rng.normal());
  return img.with_data(std::move(out));
}

Volume blur(const Volume& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= ksum;

  const Dims& d = img.dims();
  std::vector<float> cur(img.data().begin(), img.data().end());
  std::vector<float> next(cur.size());
  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t n = d[axis];
    const std::int64_t stride = axis_stride(d, axis);
    // Mirror index: d c b a | a b c d | d c b a
    auto mirror = [n](std::int64_t i) {
      if (n == 1) return std::int64_t{0};
      const std::int64_t period = 2 * n;
      i %= period;
      if (i < 0) i += period;
      return i < n ? i : period - 1 - i;
    };
    for (std::int64_t z = 0; z < d[2]; ++z) {
      for (std::int64_t y = 0; y < d[1]; ++y) {
        for (std::int64_t x = 0; x < d[0]; ++x) {
          const std::int64_t c[3] = {x, y, z};
          const std::int64_t pos = c[axis];
          const std::int64_t base = img.index(x, y, z) - pos * stride;
          double acc = 0.0;
          for (int t = -radius; t <= radius; ++t) {
            acc += kernel[static_cast<std::size_t>(t + radius)] * cur[static_cast<std::size_t>(base + mirror(pos + t) * stride)];
          }
          next[static_cast<std::size_t>(img.index(x, y, z))] = static_cast<float>(acc);
        }
      }
    }
    std::swap(cur, next);
  }
  return img.with_data(std::move(cur));
}

MotionParams draw_motion(Rng& rng, double severity) {
  MotionParams p;
  p.axis = static_cast<int>(rng.below(3));
  const int s = static_cast<int>(std::floor(severity));
  for (auto& shift : p.shifts) {
    for (int a = 0; a < 3; ++a) {
      shift(a) = s > 0 ? static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * s + 1))) - s : 0;
    }
  }
  double t0 = rng.uniform(0.15, 0.85);
  double t1 = rng.uniform(0.15, 0.85);
  if (t1 < t0) std::swap(t0, t1);
  p.split = {t0, t1};
  return p;
}

Volume apply_motion(const Volume& img, const MotionParams& p) {
  if (p.shifts[0].isZero() && p.shifts[1].isZero()) return img;
  const Dims& d = img.dims();
  const auto src = img.data();
  std::vector<fft::Complex> spec(src.begin(), src.end());
  fft::transform_3d(spec, d, false);

  const double kmax = std::max(1.0, static_cast<double>(d[p.axis] / 2));
  for (std::int64_t z = 0; z < d[2]; ++z) {
    for (std::int64_t y = 0; y < d[1]; ++y) {
      for (std::int64_t x = 0; x < d[0]; ++x) {
        const long f[3] = {fft::signed_frequency(static_cast<long>(x), static_cast<long>(d[0])),
                           fft::signed_frequency(static_cast<long>(y), static_cast<long>(d[1])),
                           fft::signed_frequency(static_cast<long>(z), static_cast<long>(d[2]))};
        const double t = std::abs(static_cast<double>(f[p.axis])) / kmax;
        if (t < p.split[0]) continue;
        const Eigen::Vector3i& s = t < p.split[1] ? p.shifts[0] : p.shifts[1];
        double phase = 0.0;
        for (int a = 0; a < 3; ++a) {
          phase += static_cast<double>(f[a]) * s(a) / static_cast<double>(d[a]);
        }
        spec[static_cast<std::size_t>(img.index(x, y, z))] *= std::polar(1.0, -2.0 * std::numbers::pi * phase);
      }
    }
  }
  fft::transform_3d(spec, d, true);
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(spec[i].real());
  return img.with_data(std::move(out));
}

Volume motion(const Volume& img, Rng& rng, double severity) {
  if (severity <= 0.0) return img;
  return apply_motion(img, draw_motion(rng, severity));
}

Volume slice_merge_with_alpha(const Volume& stack, double alpha, int axis, bool normalized) {
  const Dims& d = stack.dims();
  if (d[axis] < 3) throw Error(ErrorCode::kTooFewSlices, "slice merge needs >= 3 slices along axis");
  if (alpha == 0.0) return stack;
  const auto src = stack.data();
  std::vector<float> out(src.begin(), src.end());
  const std::int64_t stride = axis_stride(d, axis);
  const double wn = normalized ? 0.5 * alpha : alpha;
  for (std::int64_t z = 0; z < d[2]; ++z) {
    for (std::int64_t y = 0; y < d[1]; ++y) {
      for (std::int64_t x = 0; x < d[0]; ++x) {
        const std::int64_t c[3] = {x, y, z};
        if (c[axis] == 0 || c[axis] == d[axis] - 1) continue;
        const std::int64_t i = stack.index(x, y, z);
        out[static_cast<std::size_t>(i)] =
            static_cast<float>((1.0 - alpha) * src[i] + wn * (src[i + stride] + src[i - stride]));
      }
    }
  }
  return stack.with_data(std::move(out));
}

std::pair<Volume, Volume> slice_merge(const Volume& img_stack, const Volume& mask_stack, Rng& rng,
                                      double alpha_max, int axis, bool normalized) {
  if (img_stack.dims() != mask_stack.dims()) throw Error(ErrorCode::kShapeMismatch, "stack dims differ");
  if (img_stack.dims()[axis] < 3) throw Error(ErrorCode::kTooFewSlices, "slice merge needs >= 3 slices");
  const double alpha = rng.uniform(0.0, alpha_max);
  return {slice_merge_with_alpha(img_stack, alpha, axis, normalized),
          slice_merge_with_alpha(mask_stack, alpha, axis, normalized)};
}

std::pair<Volume, Volume> augment_pair(const Volume& img, const Volume& mask, const AugmentConfig& cfg,
                                       Rng& rng) {
  auto [im, mk] = spatial_transform(img, mask, cfg, rng);
  im = intensity_transform(im, cfg, rng);
  if (rng.bernoulli(cfg.p_bias)) {
    // Bias acts multiplicatively on positive intensities: shift, scale, shift back.
    const auto src = im.data();
    const float lo = *std::min_element(src.begin(), src.end());
    const auto field = random_log_field(im.dims(), cfg.bias_order, rng.uniform(0.0, cfg.bias_magnitude), rng);
    std::vector<float> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      out[i] = static_cast<float>((src[i] - lo) * std::exp(field[i]) + lo);
    }
    im = im.with_data(std::move(out));
  }
  if (rng.bernoulli(cfg.p_motion)) {
    im = motion(im, rng, rng.uniform(cfg.motion_severity_range[0], cfg.motion_severity_range[1]));
  }
  if (rng.bernoulli(cfg.p_ghosting)) im = random_ghosting(im, cfg, rng);
  if (rng.bernoulli(cfg.p_noise)) {
    im = add_noise(im, rng, rng.uniform(cfg.noise_std_range[0], cfg.noise_std_range[1]));
  }
  if (rng.bernoulli(cfg.p_blur)) im = blur(im, rng.uniform(cfg.blur_sigma_range[0], cfg.blur_sigma_range[1]));
  return {std::move(im), std::move(mk)};
}

}  // namespace deepbet
