#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include "deepbet/error.hpp"
#include "deepbet/network.hpp"
#include "deepbet/postprocess.hpp"
#include "deepbet/rng.hpp"
#include "deepbet/volume.hpp"

namespace deepbet::test {

inline Volume random_volume(Dims d, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(voxel_count(d)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Volume(d, std::move(v), {1.0, 1.0, 1.0}, Affine::Identity());
}

inline Volume filled(Dims d, float value) {
  return Volume(d, std::vector<float>(static_cast<std::size_t>(voxel_count(d)), value), {1.0, 1.0, 1.0},
                Affine::Identity());
}

inline BinaryMask random_mask(Dims d, double p, Rng& rng) {
  BinaryMask m(d);
  for (auto& b : m.bits) b = rng.bernoulli(p) ? 1 : 0;
  return m;
}

inline double rms(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * static_cast<double>(a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

/// Code of the deepbet::Error thrown by f, if any.
template <typename F>
std::optional<ErrorCode> error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

/// Central-difference check of LinkNet<double>::gradients through the full
/// 3D network on a 4^3 input. Returns one relative error per sampled weight.
inline std::vector<double> gradient_check(int samples, std::uint64_t seed) {
  const NetworkConfig cfg = NetworkConfig::linknet_3d();
  Rng rng(seed);
  const NetworkWeights w = build_linknet(cfg, rng);
  std::vector<std::vector<double>> p;
  for (const auto& t : w.tensors) {
    p.emplace_back(t.values.begin(), t.values.end());
    for (auto& v : p.back()) v += 0.1 * rng.normal();
  }
  auto view = [&] {
    ParamView<double> v;
    for (const auto& q : p) v.emplace_back(q);
    return v;
  };
  nn::Tensor<double> x(1, 1, {4, 4, 4}), y(1, 1, {4, 4, 4});
  for (auto& v : x.data) v = rng.normal();
  for (auto& v : y.data) v = rng.bernoulli(0.5) ? 1.0 : rng.uniform();
  const LossConfig loss;
  const auto g = LinkNet<double>(cfg, view()).gradients(x, y, loss);
  std::vector<double> rel;
  for (int s = 0; s < samples; ++s) {
    const auto i = static_cast<std::size_t>(rng.below(p.size()));
    const auto j = static_cast<std::size_t>(rng.below(p[i].size()));
    const double h = 1e-6, orig = p[i][j];
    p[i][j] = orig + h;
    const double up = LinkNet<double>(cfg, view()).gradients(x, y, loss).loss;
    p[i][j] = orig - h;
    const double down = LinkNet<double>(cfg, view()).gradients(x, y, loss).loss;
    p[i][j] = orig;
    const double fd = (up - down) / (2 * h);
    const double an = g.grads[i][j];
    rel.push_back(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
  }
  return rel;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("deepbet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace deepbet::test
