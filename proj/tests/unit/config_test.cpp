#include <gtest/gtest.h>

#include <fstream>

#include "deepbet/config.hpp"
#include "support.hpp"

namespace deepbet {
namespace {

using test::error_code;

TEST(RunConfig, IniRoundTripIsExact) {
  for (const char* name : {"desk", "paper"}) {
    RunConfig c = RunConfig::profile(name);
    c.pipeline.margin_fraction = 0.1 + 0.2;
    c.train_3d.lr_multipliers = {0.0, 1.0 / 3.0, 1.0};
    c.pipeline.views = {View::kAxial, View::kSagittal};
    c.network_2d.norm = NormType::kBatch;
    c.augment.ghost_count_range = {3, 9};
    const std::string text = to_ini(c);
    RunConfig back;
    apply_ini(back, text);
    EXPECT_EQ(to_ini(back), text) << name;
    EXPECT_EQ(back.pipeline.margin_fraction, 0.1 + 0.2);
    EXPECT_EQ(back.pipeline.views, c.pipeline.views);
    EXPECT_EQ(back.network_2d, c.network_2d);
  }
}

TEST(RunConfig, EveryOptionAppearsInIni) {
  const std::string text = to_ini(RunConfig::desk());
  std::string section;
  for (const auto& name : option_names()) {
    const auto dot = name.find('.');
    EXPECT_NE(text.find("[" + name.substr(0, dot) + "]"), std::string::npos) << name;
    EXPECT_NE(text.find("\n" + name.substr(dot + 1) + " = "), std::string::npos) << name;
  }
}

TEST(RunConfig, UnknownAndMalformedEntriesAreConfigErrors) {
  RunConfig c = RunConfig::desk();
  EXPECT_EQ(error_code([&] { apply_ini(c, "[pipeline]\nstage3_size = 64\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(error_code([&] { apply_ini(c, "[optimizer]\nlr = 0.1\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(error_code([&] { apply_ini(c, "lr = 0.1\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(error_code([&] { apply_ini(c, "[train]\nlr = fast\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(error_code([&] { apply_ini(c, "[train]\nlr_multipliers = 1, 2\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(error_code([&] { apply_ini(c, "[pipeline]\nviews = oblique\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(error_code([&] { apply_ini(c, "[pipeline]\nmode = 4d\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(error_code([&] { apply_ini(c, "[preprocess]\nbias_enabled = maybe\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(error_code([&] { set_option(c, "margin_fraction", "0.2"); }), ErrorCode::kConfig);
  EXPECT_EQ(error_code([&] { RunConfig::profile("laptop"); }), ErrorCode::kConfig);
  EXPECT_EQ(error_code([&] { apply_ini_file(c, "/nonexistent/deepbet.ini"); }), ErrorCode::kIoFailure);
}

TEST(RunConfig, LaterLayersWin) {
  const auto dir = test::scratch_dir("config_layers");
  {
    std::ofstream f(dir / "run.ini");
    f << "# comment\n[pipeline]\nmargin_fraction = 0.2\nstage1_size = 32\n\n[train]\nweight_decay = 0.05\n";
  }
  RunConfig c = RunConfig::desk();
  EXPECT_EQ(c.pipeline.stage1_size, 64);
  apply_ini_file(c, dir / "run.ini");
  EXPECT_EQ(c.pipeline.margin_fraction, 0.2);
  EXPECT_EQ(c.pipeline.stage1_size, 32);
  EXPECT_EQ(c.pipeline.stage2_size, 128);
  set_option(c, "pipeline.margin_fraction", "0.3");
  EXPECT_EQ(c.pipeline.margin_fraction, 0.3);
  // Shared training knobs follow [train] into the 2D runs.
  EXPECT_EQ(c.train_2d.weight_decay, 0.05);
  set_option(c, "train.lookahead_k", "4");
  EXPECT_EQ(c.train_2d.lookahead_k, 4);
}

TEST(RunConfig, ProfilesDiffer) {
  const RunConfig d = RunConfig::desk(), p = RunConfig::paper();
  EXPECT_EQ(d.pipeline.stage1_size, 64);
  EXPECT_EQ(d.pipeline.stage2_size, 128);
  EXPECT_EQ(p.pipeline.stage1_size, 128);
  EXPECT_EQ(p.pipeline.stage2_size, 256);
  EXPECT_EQ(p.train_3d.lr, 0.001);
  EXPECT_EQ(p.train_2d.batch_size, 32);
  EXPECT_EQ(p.train_2d.lr_multipliers, (std::array<double, 3>{0.0, 0.2, 1.0}));
  EXPECT_EQ(p.network_3d.base_channels, 16);
  EXPECT_EQ(p.network_2d.base_channels, 64);
  EXPECT_NO_THROW(d.validate());
  EXPECT_NO_THROW(p.validate());
  RunConfig bad = d;
  set_option(bad, "pipeline.stage2_size", "100");
  EXPECT_THROW(bad.validate(), Error);
}

TEST(TrainPipeline, TrainsEveryRole) {
  const PreparedSet set(phantom_dataset({0, 2, 4}, {32, 32, 32}), PreprocessConfig{});
  RunConfig c = RunConfig::desk();
  for (const char* kv : {"pipeline.stage1_size=32", "pipeline.stage2_size=32", "network.base_channels=4",
                         "network.base_channels_2d=4", "train.epochs=1", "train.stage2_epochs=1", "train.epochs_2d=1",
                         "train.steps_per_epoch=1", "train.steps_per_epoch_2d=1", "train.batch_size_2d=2"}) {
    const std::string s = kv;
    set_option(c, s.substr(0, s.find('=')), s.substr(s.find('=') + 1));
  }
  const auto dir = test::scratch_dir("train_pipeline");
  std::vector<std::string> roles;
  const WeightsSet w = train_pipeline(
      c, set, [&](const std::string& role, std::int64_t, double) { roles.push_back(role); }, true, dir);
  EXPECT_EQ(roles, (std::vector<std::string>{"stage1", "stage2", "sagittal", "coronal", "axial"}));
  for (const auto& r : roles) {
    EXPECT_EQ(w.count(r), 1u) << r;
    EXPECT_TRUE(std::filesystem::exists(dir / (r + "_loss.csv"))) << r;
    EXPECT_TRUE(std::filesystem::exists(dir / (r + "_checkpoint.dbw"))) << r;
  }
  EXPECT_EQ(load_config(w.at("axial").metadata).rank, Rank::k2D);
  set_option(c, "pipeline.mode", "3d");
  EXPECT_EQ(train_pipeline(c, set).size(), 2u);
}

}  // namespace
}  // namespace deepbet
