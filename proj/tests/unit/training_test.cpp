#include <gtest/gtest.h>

#include <fstream>

#include "deepbet/phantom.hpp"
#include "deepbet/training.hpp"
#include "support.hpp"

namespace deepbet {
namespace {

std::vector<std::uint64_t> train_seeds(int n) {
  std::vector<std::uint64_t> s;
  for (int i = 0; i < n; ++i) s.push_back(split_seed(100, i, false));
  return s;
}

const PreparedSet& small_set() {
  static const PreparedSet set(phantom_dataset(train_seeds(20), {32, 32, 32}), PreprocessConfig{});
  return set;
}

PipelineConfig pipe32() {
  PipelineConfig p = PipelineConfig::desk();
  p.stage1_size = 32;
  p.stage2_size = 32;
  return p;
}

TrainConfig quick(std::int64_t epochs) {
  TrainConfig c;
  c.lr = 0.01;
  c.epochs = epochs;
  c.seed = 3;
  return c;
}

TEST(Train, SmokeRunLowersLoss) {
  const auto src = stage1_source(small_set(), pipe32(), AugmentConfig{}, false);
  const auto r = train(NetworkConfig::linknet_3d(4), quick(30), src);
  ASSERT_EQ(r.epoch_loss.size(), 30u);
  EXPECT_EQ(r.log.size(), 30u * 20u);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
  for (const auto& rec : r.log) EXPECT_TRUE(std::isfinite(rec.loss));
}

TEST(Train, ZeroMultipliersKeepWeights) {
  const auto src = stage1_source(small_set(), pipe32(), AugmentConfig{}, true);
  TrainConfig c = quick(1);
  c.steps_per_epoch = 5;
  c.lr_multipliers = {0.0, 0.0, 0.0};
  Rng rng(c.seed);
  const NetworkWeights init = build_linknet(NetworkConfig::linknet_3d(4), rng);
  const auto r = train(NetworkConfig::linknet_3d(4), c, src);
  ASSERT_EQ(r.weights.tensors.size(), init.tensors.size());
  for (std::size_t i = 0; i < init.tensors.size(); ++i) EXPECT_EQ(r.weights.tensors[i].values, init.tensors[i].values);
}

TEST(Train, EncoderMultiplierFreezesOnlyEncoder) {
  const auto src = stage1_source(small_set(), pipe32(), AugmentConfig{}, false);
  TrainConfig c = quick(1);
  c.steps_per_epoch = 3;
  c.lr_multipliers = {0.0, 0.2, 1.0};
  Rng rng(c.seed);
  const NetworkWeights init = build_linknet(NetworkConfig::linknet_3d(4), rng);
  const auto r = train(NetworkConfig::linknet_3d(4), c, src);
  for (std::size_t i = 0; i < init.tensors.size(); ++i) {
    const auto& t = init.tensors[i];
    if (param_group(t.name) == ParamGroup::kEncoder) {
      EXPECT_EQ(r.weights.tensors[i].values, t.values) << t.name;
    } else if (t.name.ends_with(".weight")) {
      EXPECT_NE(r.weights.tensors[i].values, t.values) << t.name;
    }
  }
}

TEST(Train, SameSeedIsBitExact) {
  const auto src = stage1_source(small_set(), pipe32(), AugmentConfig{}, true);
  TrainConfig c = quick(2);
  c.steps_per_epoch = 4;
  const auto a = train(NetworkConfig::linknet_3d(4), c, src);
  const auto b = train(NetworkConfig::linknet_3d(4), c, src);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  c.seed = 4;
  EXPECT_NE(train(NetworkConfig::linknet_3d(4), c, src).weights, a.weights);
}

TEST(Train, WritesCheckpointAndLossLog) {
  const auto dir = test::scratch_dir("train_io");
  const auto src = stage1_source(small_set(), pipe32(), AugmentConfig{}, false);
  TrainConfig c = quick(2);
  c.steps_per_epoch = 3;
  c.checkpoint = dir / "ckpt.dbw";
  c.loss_log = dir / "loss.csv";
  std::vector<std::int64_t> seen;
  const auto r = train(NetworkConfig::linknet_3d(4), c, src, nullptr,
                       [&](std::int64_t e, double) { seen.push_back(e); });
  EXPECT_EQ(seen, (std::vector<std::int64_t>{0, 1}));
  EXPECT_EQ(load_weights(c.checkpoint), r.weights);
  std::ifstream in(c.loss_log);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,epoch,lr,loss");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 6);
}

TEST(Train, WarmStartUsesGivenWeights) {
  const auto src = stage1_source(small_set(), pipe32(), AugmentConfig{}, false);
  TrainConfig c = quick(1);
  c.steps_per_epoch = 1;
  c.lr_multipliers = {0.0, 0.0, 0.0};
  Rng rng(77);
  const NetworkWeights init = build_linknet(NetworkConfig::linknet_3d(4), rng);
  const auto r = train(NetworkConfig::linknet_3d(4), c, src, &init);
  for (std::size_t i = 0; i < init.tensors.size(); ++i) EXPECT_EQ(r.weights.tensors[i].values, init.tensors[i].values);
  Rng other(1);
  const NetworkWeights wrong = build_linknet(NetworkConfig::linknet_3d(8), other);
  EXPECT_THROW(train(NetworkConfig::linknet_3d(4), c, src, &wrong), Error);
}

TEST(Sources, ShapesFollowConfig) {
  const auto& set = small_set();
  Rng rng(5);
  const std::vector<std::int64_t> items{0, 1};
  {
    const auto src = stage2_source(set, pipe32(), AugmentConfig{}, true);
    const auto [x, y] = src.batch(std::span(items).first(1), 1, rng);
    EXPECT_EQ(x.spatial, (Dims{32, 32, 32}));
    EXPECT_EQ(y.spatial, x.spatial);
    for (float v : y.data) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  for (View view : {View::kSagittal, View::kCoronal, View::kAxial}) {
    const auto src = view_source(set, view, pipe32(), AugmentConfig{}, true);
    const auto [x, y] = src.batch(items, 8, rng);
    EXPECT_EQ(x.batch, 8);
    EXPECT_EQ(x.channels, 5);
    EXPECT_EQ(x.spatial, (Dims{32, 32, 1}));
    EXPECT_EQ(y.channels, 1);
    EXPECT_EQ(y.batch, 8);
  }
}

TEST(TrainConfig, Validates) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.flat_fraction = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.lr_multipliers = {1.0, -0.1, 1.0};
  EXPECT_THROW(c.validate(), Error);
}

}  // namespace
}  // namespace deepbet
