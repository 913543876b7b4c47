#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deepbet/loss.hpp"
#include "deepbet/rng.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace deepbet {
namespace {

using test::error_code;

TEST(Loss, SaturatedPerfectPredictionIsNearZero) {
  const std::vector<double> t{1, 0, 0, 1, 1, 0, 1, 0};
  std::vector<double> z(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) z[i] = t[i] > 0 ? 60.0 : -60.0;
  EXPECT_LT(dice_focal_terms(z, t, LossConfig{}).total, 1e-3);
}

TEST(Loss, DiceOnlyMatchesDirectFormula) {
  Rng rng(3);
  LossConfig cfg;
  cfg.lambda_focal = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> z(8), t(8);
    for (auto& v : z) v = rng.normal(0.0, 2.0);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = i % 3 == 0 ? 1.0 : rng.uniform(0.0, 0.6);
    const auto terms = dice_focal_terms(z, t, cfg);
    EXPECT_NEAR(terms.total, oracle::gdl(z, t), 1e-6);
    EXPECT_NEAR(terms.gdl, oracle::gdl(z, t), 1e-6);
  }
}

TEST(Loss, FocalOfHalfOnForegroundIsClosedForm) {
  const std::vector<double> z(8, 0.0), t(8, 1.0);
  const auto terms = dice_focal_terms(z, t, LossConfig{});
  EXPECT_NEAR(terms.focal, 0.25 * std::log(2.0), 1e-12);
}

TEST(Loss, FocalMatchesDirectFormula) {
  Rng rng(4);
  for (double gamma : {0.0, 1.0, 2.0, 2.5}) {
    std::vector<double> z(27), t(27);
    for (auto& v : z) v = rng.normal(0.0, 3.0);
    for (auto& v : t) v = rng.uniform();
    LossConfig cfg;
    cfg.focal_gamma = gamma;
    EXPECT_NEAR(dice_focal_terms(z, t, cfg).focal, oracle::focal(z, t, gamma), 1e-10) << gamma;
  }
}

TEST(Loss, TermsStayInRange) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(64), t(64);
    for (auto& v : z) v = rng.normal(0.0, 5.0);
    for (auto& v : t) v = rng.bernoulli(0.3) ? 1.0 : rng.uniform(0.0, 0.2);
    const auto terms = dice_focal_terms(z, t, LossConfig{});
    EXPECT_GE(terms.gdl, 0.0);
    EXPECT_LE(terms.gdl, 1.0 + 1e-9);
    EXPECT_GE(terms.focal, 0.0);
    EXPECT_NEAR(terms.total, terms.gdl + 0.2 * terms.focal, 1e-12);
  }
}

TEST(Loss, PermutationInvariant) {
  Rng rng(6);
  std::vector<double> z(100), t(100);
  for (auto& v : z) v = rng.normal(0.0, 2.0);
  for (auto& v : t) v = rng.uniform();
  std::vector<std::size_t> perm(z.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  std::vector<double> zp(z.size()), tp(t.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    zp[i] = z[perm[i]];
    tp[i] = t[perm[i]];
  }
  EXPECT_NEAR(dice_focal_terms(z, t, LossConfig{}).total, dice_focal_terms(zp, tp, LossConfig{}).total, 1e-12);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  std::vector<double> z(27), t(27), g(27);
  for (auto& v : z) v = rng.normal(0.0, 2.0);
  for (auto& v : t) v = rng.bernoulli(0.4) ? 1.0 : rng.uniform(0.0, 0.3);
  LossConfig cfg;
  cfg.focal_gamma = 2.5;
  dice_focal_terms(z, t, cfg, g);
  const double h = 1e-6;
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    const double fd = (dice_focal_terms(zp, t, cfg).total - dice_focal_terms(zm, t, cfg).total) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-7 + 1e-5 * std::abs(fd)) << i;
  }
}

TEST(Loss, BatchIsMeanOfSamples) {
  Rng rng(8);
  nn::Tensor<double> z(3, 1, {2, 2, 2}), t(3, 1, {2, 2, 2});
  for (auto& v : z.data) v = rng.normal();
  for (auto& v : t.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  double expect = 0;
  for (std::int64_t b = 0; b < 3; ++b) {
    const std::vector<double> zs(z.sample(b), z.sample(b) + 8), ts(t.sample(b), t.sample(b) + 8);
    expect += dice_focal_terms(zs, ts, LossConfig{}).total / 3;
  }
  EXPECT_NEAR(generalized_dice_focal_loss(z, t, LossConfig{}), expect, 1e-12);
}

TEST(Loss, ShapeMismatch) {
  const nn::Tensor<float> a(1, 1, {2, 2, 2}), b(1, 1, {2, 2, 4});
  EXPECT_EQ(error_code([&] { generalized_dice_focal_loss(a, b, LossConfig{}); }), ErrorCode::kShapeMismatch);
}

}  // namespace
}  // namespace deepbet
