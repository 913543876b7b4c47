#include "deepbet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "deepbet/augment.hpp"
#include "deepbet/geometry.hpp"
#include "deepbet/rng.hpp"

namespace deepbet {
namespace {

constexpr int kLobeTerms = 7;
constexpr double kMaxModulation = 0.04;

// Low-order angular functions of a unit direction.
std::array<double, kLobeTerms> lobe_basis(const Eigen::Vector3d& u) {
  const double x = u.x();
  const double y = u.y();
  const double z = u.z();
  return {x * y, y * z, x * z, x * x - y * y, 3 * z * z - 1, y * (3 * x * x - y * y), z * (x * x - y * y)};
}

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

Phantom generate(const PhantomSpec& spec) {
  for (auto d : spec.dims) {
    if (d < 16) throw Error(ErrorCode::kSpecInfeasible, "phantom dims must be at least 16");
  }
  if (!(spec.fov_mm > 0)) throw Error(ErrorCode::kSpecInfeasible, "fov_mm must be positive");
  Rng rng(spec.seed);
  const Dims& dims = spec.dims;
  const double n = static_cast<double>(*std::min_element(dims.begin(), dims.end()));
  const double s = n / 64.0;

  PhantomInfo info;
  for (int a = 0; a < 3; ++a) info.center[a] = dims[a] / 2.0 - 0.5 + rng.uniform(-0.01, 0.01) * n;
  info.radii = {rng.uniform(0.28, 0.34) * n, rng.uniform(0.32, 0.38) * n, rng.uniform(0.26, 0.32) * n};

  std::array<double, kLobeTerms> coeff{};
  for (auto& c : coeff) c = rng.normal(0.0, 0.02);
  {
    // Cap the modulation amplitude over a Fibonacci sphere of directions.
    double peak = 0.0;
    const int m = 400;
    for (int i = 0; i < m; ++i) {
      const double zc = 1.0 - 2.0 * (i + 0.5) / m;
      const double r = std::sqrt(1.0 - zc * zc);
      const double phi = i * std::numbers::pi * (3.0 - std::sqrt(5.0));
      const auto f = lobe_basis({r * std::cos(phi), r * std::sin(phi), zc});
      double v = 0.0;
      for (int k = 0; k < kLobeTerms; ++k) v += coeff[k] * f[k];
      peak = std::max(peak, std::abs(v));
    }
    if (peak > kMaxModulation) {
      for (auto& c : coeff) c *= kMaxModulation / peak;
    }
  }

  info.transition_width = rng.uniform(0.30, 0.45);
  const double w = info.transition_width;
  const double t_csf = rng.uniform(0.6, 1.0) * s;
  const double t_skull = t_csf + rng.uniform(1.0, 1.6) * s;
  const double t_scalp = t_skull + rng.uniform(1.0, 1.6) * s;
  const double wm_depth = rng.uniform(2.0, 4.0) * s;

  const double scale = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
  info.gm_intensity = 550.0 * rng.uniform(0.85, 1.15) * scale;
  info.wm_intensity = info.gm_intensity * rng.uniform(1.3, 1.6);
  info.csf_intensity = info.gm_intensity * rng.uniform(0.10, 0.20);
  info.skull_intensity = info.gm_intensity * rng.uniform(0.45, 0.60);
  info.scalp_intensity = info.gm_intensity * rng.uniform(0.25, 0.40);
  const double noise_std = info.gm_intensity * rng.uniform(spec.noise_range[0], spec.noise_range[1]);

  const std::int64_t total = voxel_count(dims);
  std::vector<float> img(static_cast<std::size_t>(total));
  std::vector<float> mask(static_cast<std::size_t>(total));
  const Eigen::Vector3d inv_r2 = info.radii.cwiseInverse().cwiseAbs2();
  for (std::int64_t z = 0; z < dims[2]; ++z) {
    for (std::int64_t y = 0; y < dims[1]; ++y) {
      for (std::int64_t x = 0; x < dims[0]; ++x) {
        const Eigen::Vector3d p(static_cast<double>(x), static_cast<double>(y), static_cast<double>(z));
        const Eigen::Vector3d off = p - info.center;
        const double r = off.norm();
        double d;
        if (r < 1e-9) {
          d = -info.radii.minCoeff();
        } else {
          const Eigen::Vector3d u = off / r;
          const auto f = lobe_basis(u);
          double mod = 0.0;
          for (int k = 0; k < kLobeTerms; ++k) mod += coeff[k] * f[k];
          const double surface = (1.0 + mod) / std::sqrt(u.cwiseAbs2().dot(inv_r2));
          d = r - surface;
        }
        const bool border = x == 0 || y == 0 || z == 0 || x == dims[0] - 1 || y == dims[1] - 1 || z == dims[2] - 1;
        if (border && d <= t_scalp) {
          throw Error(ErrorCode::kSpecInfeasible, "head does not fit inside the volume");
        }
        const double brain = sigmoid(-d / w);
        const double tissue =
            info.gm_intensity + (info.wm_intensity - info.gm_intensity) * sigmoid((-d - wm_depth) / (2.0 * w));
        const double outside = info.csf_intensity +
                                (info.skull_intensity - info.csf_intensity) * sigmoid((d - t_csf) / w) +
                                (info.scalp_intensity - info.skull_intensity) * sigmoid((d - t_skull) / w) -
                                info.scalp_intensity * sigmoid((d - t_scalp) / w);
        const std::int64_t i = x + dims[0] * (y + dims[1] * z);
        img[i] = static_cast<float>(brain * tissue + (1.0 - brain) * outside);
        mask[i] = static_cast<float>(brain);
      }
    }
  }

  const double spacing = spec.fov_mm / static_cast<double>(*std::max_element(dims.begin(), dims.end()));
  const Spacing sp{spacing, spacing, spacing};
  Affine aff = diagonal_affine(sp);
  for (int a = 0; a < 3; ++a) aff(a, 3) = -spacing * (dims[a] - 1) / 2.0;
  Volume image(dims, std::move(img), sp, aff);
  Volume prob(dims, std::move(mask), sp, aff);

  if (spec.max_rotation_deg > 0) {
    const int axis = static_cast<int>(rng.below(3));
    const double angle = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg);
    image = rotate_about_center(image, axis, angle, 0.0f);
    prob = rotate_about_center(prob, axis, angle, 0.0f);
  }
  if (spec.bias_magnitude > 0) {
    image = apply_log_field(image, random_log_field(dims, 2, spec.bias_magnitude, rng));
  }
  std::vector<float> noisy(image.data().begin(), image.data().end());
  for (auto& v : noisy) v = static_cast<float>(std::abs(v + rng.normal(0.0, noise_std)));
  return {image.with_data(std::move(noisy)), std::move(prob), info};
}

std::vector<PhantomSample> generate_set(std::int64_t n, std::uint64_t base_seed, Dims dims) {
  std::vector<PhantomSample> out;
  out.reserve(static_cast<std::size_t>(std::max<std::int64_t>(0, n)));
  for (std::int64_t i = 0; i < n; ++i) {
    PhantomSpec spec;
    spec.seed = base_seed + static_cast<std::uint64_t>(i);
    spec.dims = dims;
    auto p = generate(spec);
    out.push_back({spec.seed, std::move(p.image), std::move(p.mask)});
  }
  return out;
}

std::uint64_t split_seed(std::uint64_t base_seed, std::int64_t n, bool held_out) {
  const std::uint64_t first = is_held_out(base_seed) == held_out ? base_seed : base_seed + 1;
  return first + 2 * static_cast<std::uint64_t>(n);
}

}  // namespace deepbet
