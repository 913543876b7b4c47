#include <gtest/gtest.h>

#include <algorithm>

#include "deepbet/evaluate.hpp"
#include "deepbet/geometry.hpp"
#include "deepbet/phantom.hpp"
#include "deepbet/pipeline.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace deepbet {
namespace {

using test::error_code;

BinaryMask from_bits(Dims d, std::initializer_list<int> on) {
  BinaryMask m(d);
  for (int i : on) m.bits[static_cast<std::size_t>(i)] = 1;
  return m;
}

// Radial probability ball, so thresholds give nested level sets.
Volume soft_ball(Dims d, double radius) {
  Volume v = test::filled(d, 0.0f);
  std::vector<float> p(static_cast<std::size_t>(v.size()));
  for (std::int64_t z = 0; z < d[2]; ++z)
    for (std::int64_t y = 0; y < d[1]; ++y)
      for (std::int64_t x = 0; x < d[0]; ++x) {
        const double cx = (d[0] - 1) / 2.0, cy = (d[1] - 1) / 2.0, cz = (d[2] - 1) / 2.0;
        const double r = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz));
        p[static_cast<std::size_t>(v.index(x, y, z))] = static_cast<float>(1.0 / (1.0 + std::exp((r - radius) / 1.5)));
      }
  return v.with_data(std::move(p));
}

TEST(Dice, SmallCases) {
  const Dims d{2, 2, 2};
  const auto a = from_bits(d, {0, 1, 2});
  const auto b = from_bits(d, {1, 2, 4, 5, 6});
  EXPECT_DOUBLE_EQ(dice(a, b), 0.5);
  EXPECT_DOUBLE_EQ(dice(a, a), 1.0);
  EXPECT_DOUBLE_EQ(dice(a, from_bits(d, {5, 6})), 0.0);
  EXPECT_DOUBLE_EQ(dice(BinaryMask(d), BinaryMask(d)), 1.0);
  EXPECT_EQ(error_code([&] { dice(a, BinaryMask({2, 2, 3})); }), ErrorCode::kShapeMismatch);
}

TEST(Dice, MatchesCountOracleOnRandomPairs) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = test::random_mask({8, 8, 8}, rng.uniform(0.0, 0.6), rng);
    const auto b = test::random_mask({8, 8, 8}, rng.uniform(0.0, 0.6), rng);
    const double d = dice(a, b);
    ASSERT_EQ(d, oracle::dice(a, b));
    ASSERT_EQ(d, dice(b, a));
    ASSERT_GE(d, 0.0);
    ASSERT_LE(d, 1.0);
    if (a != b && a.count() + b.count() > 0) ASSERT_LT(d, 1.0);
  }
}

TEST(Median, OddAndEven) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_THROW(median({}), Error);
}

TEST(Calibrate, SelfConsistentAtHalf) {
  std::vector<Volume> gt;
  std::vector<BinaryMask> pred;
  for (double r : {5.0, 6.5, 7.0}) {
    gt.push_back(soft_ball({20, 20, 20}, r));
    pred.push_back(binarize(gt.back(), 0.5));
  }
  const auto grid = default_threshold_grid();
  EXPECT_EQ(calibrate_threshold(gt, pred, grid), 0.5);
}

TEST(Calibrate, MatchesExhaustiveGrid) {
  Rng rng(2);
  const std::vector<double> grid{0.1, 0.5, 0.9};
  for (int trial = 0; trial < 20; ++trial) {
    const Volume gt = test::random_volume({6, 6, 6}, 100 + trial);
    const BinaryMask pred = test::random_mask({6, 6, 6}, rng.uniform(0.2, 0.8), rng);
    double best = -1, best_t = 0;
    for (double t : grid) {
      const double d = oracle::dice(binarize(gt, t), pred);
      if (d > best) best = d, best_t = t;
    }
    const std::vector<Volume> g{gt};
    const std::vector<BinaryMask> p{pred};
    EXPECT_EQ(calibrate_threshold(g, p, grid), best_t);
  }
}

TEST(Calibrate, NestedTruthIsUnimodal) {
  std::vector<Volume> gt;
  std::vector<BinaryMask> pred;
  for (double r : {5.0, 6.0, 7.5}) {
    gt.push_back(soft_ball({22, 22, 22}, r));
    pred.push_back(binarize(soft_ball({22, 22, 22}, r + 0.8), 0.5));
  }
  std::vector<double> curve;
  for (double t : default_threshold_grid()) {
    std::vector<double> s;
    for (std::size_t i = 0; i < gt.size(); ++i) s.push_back(dice(binarize(gt[i], t), pred[i]));
    curve.push_back(median(s));
  }
  const auto peak = std::max_element(curve.begin(), curve.end()) - curve.begin();
  for (std::ptrdiff_t i = 1; i <= peak; ++i) EXPECT_GE(curve[i], curve[i - 1]);
  for (std::size_t i = static_cast<std::size_t>(peak) + 1; i < curve.size(); ++i) EXPECT_LE(curve[i], curve[i - 1]);
  const auto grid = default_threshold_grid();
  EXPECT_EQ(calibrate_threshold(gt, pred, grid), grid[static_cast<std::size_t>(peak)]);
}

TEST(Report, CsvRoundTrip) {
  DiceReport r;
  r.samples = {{"sub-01", 0.987654321012345}, {"sub-02", 0.5}, {"p7", 1.0 / 3.0}};
  r.threshold = 0.4;
  r.images_per_minute = 17.25;
  r.hardware = "Some CPU @ 2.0GHz (4 logical cores)";
  r.threads = 2;
  const DiceReport back = DiceReport::from_csv(r.to_csv());
  EXPECT_EQ(back.samples, r.samples);
  EXPECT_EQ(back.threshold, r.threshold);
  EXPECT_EQ(back.images_per_minute, r.images_per_minute);
  EXPECT_EQ(back.hardware, r.hardware);
  EXPECT_EQ(back.threads, r.threads);
  EXPECT_EQ(r.median_dice(), 0.5);
  EXPECT_EQ(r.min_dice(), 1.0 / 3.0);
  EXPECT_EQ(r.max_dice(), 0.987654321012345);
  EXPECT_EQ(error_code([] { DiceReport::from_csv("a,b\n"); }), ErrorCode::kCorruptHeader);
  EXPECT_EQ(error_code([] { DiceReport::from_csv("id,dice,threshold\nx,zz,0.5\n"); }), ErrorCode::kCorruptHeader);
}

TEST(Benchmark, ReportsMedianAndWorkSlowsRate) {
  std::vector<Volume> vols{test::random_volume({32, 32, 32}, 1), test::random_volume({32, 32, 32}, 2)};
  auto work = [](int rounds) {
    return [rounds](const Volume& v) {
      volatile double s = 0;
      for (int r = 0; r < rounds; ++r)
        for (float x : v.data()) s = s + x * 1.0001;
    };
  };
  const auto a = benchmark(work(400), vols, 3);
  ASSERT_EQ(a.rates.size(), 3u);
  auto sorted = a.rates;
  std::ranges::sort(sorted);
  EXPECT_EQ(a.images_per_minute, sorted[1]);
  EXPECT_GT(sorted[0], 0.0);
  EXPECT_FALSE(a.hardware.empty());
  const auto b = benchmark(work(1600), vols, 3);
  EXPECT_LT(b.images_per_minute, a.images_per_minute);
}

TEST(Rotation, RoundTripKeepsMask) {
  for (std::uint64_t seed : {1, 3, 5, 7, 9}) {
    PhantomSpec s;
    s.seed = seed;
    s.dims = {64, 64, 64};
    const Volume gt = generate(s).mask;
    for (double angle : {40.0, -40.0}) {
      const Volume back = rotate_about_center(rotate_about_center(gt, 0, angle), 0, -angle);
      EXPECT_GE(dice(binarize(back, 0.5), binarize(gt, 0.5)), 0.98) << seed << " " << angle;
    }
  }
}

TEST(Rotation, ZeroAngleIsBaselineAndTableHasAllAngles) {
  PhantomSpec s;
  s.seed = 3;
  s.dims = {48, 48, 48};
  const Phantom p = generate(s);
  // Extractor that thresholds the image itself: deterministic and cheap.
  auto extract = [](const Volume& v) { return largest_component(binarize(v, 0.3 * quantile(v.data(), 0.99))); };
  const std::vector<double> angles{-40, -20, 0, 20, 40};
  const auto table = rotation_sweep(p.image, p.mask, extract, angles);
  ASSERT_EQ(table.size(), angles.size());
  for (std::size_t i = 0; i < angles.size(); ++i) EXPECT_EQ(table[i].angle_deg, angles[i]);
  EXPECT_EQ(table[2].dice, dice(extract(p.image), binarize(p.mask, 0.5)));
}

}  // namespace
}  // namespace deepbet
