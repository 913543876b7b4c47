#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "deepbet/phantom.hpp"
#include "support.hpp"

namespace deepbet {
namespace {

using test::error_code;

TEST(Phantom, SameSeedIsBitExact) {
  PhantomSpec s;
  s.seed = 42;
  s.dims = {48, 40, 44};
  s.bias_magnitude = 0.2;
  s.max_rotation_deg = 10;
  const Phantom a = generate(s), b = generate(s);
  EXPECT_TRUE(std::ranges::equal(a.image.data(), b.image.data()));
  EXPECT_TRUE(std::ranges::equal(a.mask.data(), b.mask.data()));
  EXPECT_EQ(a.image.affine(), b.image.affine());
  s.seed = 43;
  EXPECT_FALSE(std::ranges::equal(generate(s).image.data(), a.image.data()));
}

TEST(Phantom, DefaultSpecStatisticsOverSeeds) {
  std::vector<double> volumes;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    PhantomSpec s;
    s.seed = seed;
    const Phantom p = generate(s);
    double sum = 0;
    for (float m : p.mask.data()) {
      ASSERT_GE(m, 0.0f);
      ASSERT_LE(m, 1.0f);
      sum += m;
    }
    const double fraction = sum / static_cast<double>(p.mask.size());
    EXPECT_GE(fraction, 0.10) << seed;
    EXPECT_LE(fraction, 0.45) << seed;
    volumes.push_back(sum);
    for (float v : p.image.data()) ASSERT_TRUE(std::isfinite(v));
  }
  double mean = 0, var = 0;
  for (double v : volumes) mean += v / 100;
  for (double v : volumes) var += (v - mean) * (v - mean) / 100;
  EXPECT_GT(std::sqrt(var) / mean, 0.05);
}

TEST(Phantom, ContrastsAreOrdered) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    PhantomSpec s;
    s.seed = seed;
    s.dims = {32, 32, 32};
    const PhantomInfo i = generate(s).info;
    EXPECT_LT(i.scalp_intensity, i.skull_intensity);
    EXPECT_LT(i.skull_intensity, i.gm_intensity);
    EXPECT_LT(i.gm_intensity, i.wm_intensity);
    EXPECT_LT(i.csf_intensity, i.scalp_intensity);
  }
}

TEST(Phantom, MaskIsOneInsideZeroOutsideAndMonotoneAlongRays) {
  for (std::uint64_t seed : {2, 5, 11}) {
    PhantomSpec s;
    s.seed = seed;
    const Phantom p = generate(s);
    const Dims& d = p.mask.dims();
    const std::array<std::int64_t, 3> c{std::lround(p.info.center.x()), std::lround(p.info.center.y()),
                                        std::lround(p.info.center.z())};
    EXPECT_GT(p.mask.at(c[0], c[1], c[2]), 0.999f);
    EXPECT_LT(p.mask.at(0, 0, 0), 1e-3f);
    for (int axis = 0; axis < 3; ++axis) {
      for (int sign : {-1, 1}) {
        float prev = 1.0f;
        for (std::array<std::int64_t, 3> q = c; q[axis] >= 0 && q[axis] < d[axis]; q[axis] += sign) {
          const float m = p.mask.at(q[0], q[1], q[2]);
          EXPECT_LE(m, prev + 1e-6f) << seed << " axis " << axis;
          prev = m;
        }
        EXPECT_LT(prev, 1e-3f);
      }
    }
  }
}

TEST(Phantom, InfeasibleSpecs) {
  PhantomSpec s;
  s.dims = {8, 64, 64};
  EXPECT_EQ(error_code([&] { generate(s); }), ErrorCode::kSpecInfeasible);
  s = {};
  s.fov_mm = 0;
  EXPECT_EQ(error_code([&] { generate(s); }), ErrorCode::kSpecInfeasible);
}

TEST(PhantomSet, SeedsAndSplit) {
  EXPECT_TRUE(generate_set(0, 5, {32, 32, 32}).empty());
  const auto set = generate_set(6, 10, {32, 32, 32});
  std::set<std::uint64_t> seeds;
  for (const auto& p : set) {
    seeds.insert(p.seed);
    EXPECT_EQ(p.image.dims(), (Dims{32, 32, 32}));
  }
  EXPECT_EQ(seeds.size(), 6u);
  for (std::int64_t n = 0; n < 5; ++n) {
    EXPECT_FALSE(is_held_out(split_seed(10, n, false)));
    EXPECT_TRUE(is_held_out(split_seed(10, n, true)));
    EXPECT_TRUE(is_held_out(split_seed(11, n, true)));
    EXPECT_GE(split_seed(11, n, false), 11u);
  }
  EXPECT_NE(split_seed(10, 1, false), split_seed(10, 2, false));
}

}  // namespace
}  // namespace deepbet
