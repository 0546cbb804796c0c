#include <gtest/gtest.h>

#include <cmath>

#include "uda/config.hpp"
#include "uda/train.hpp"

using namespace uda;
using namespace uda::config;
using uda::train::TrainConfig;

TEST(KeyValueParse, CommentsWhitespaceAndErrors) {
  const auto kv = parse("# header\n  seed = 7  # trailing\n\nrecipe=cross_modality\n");
  EXPECT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv.at("seed"), "7");
  EXPECT_EQ(kv.at("recipe"), "cross_modality");
  EXPECT_THROW(parse("no equals sign"), ConfigError);
  EXPECT_THROW(parse(" = 3"), ConfigError);
  try {
    parse("a = 1\nbroken\n", "my.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("my.cfg:2"), std::string::npos);
  }
}

TEST(KeyValueParse, TypedAccessors) {
  const KeyValues kv{{"i", "42"}, {"d", "2.5e-05"}, {"b", "yes"}, {"l", "64, 128,1"}, {"bad", "4x"}};
  EXPECT_EQ(to_int(kv, "i"), 42);
  EXPECT_DOUBLE_EQ(to_double(kv, "d"), 2.5e-5);
  EXPECT_TRUE(to_bool(kv, "b"));
  EXPECT_EQ(to_int_list(kv, "l"), (std::vector<int>{64, 128, 1}));
  EXPECT_THROW(to_int(kv, "bad"), ConfigError);
  EXPECT_THROW(to_double(kv, "bad"), ConfigError);
  EXPECT_THROW(to_bool(kv, "bad"), ConfigError);
  EXPECT_THROW(to_int(kv, "missing"), ConfigError);
  const auto [k, v] = parse_assignment("lambda_adv1 = 0.5");
  EXPECT_EQ(k, "lambda_adv1");
  EXPECT_EQ(v, "0.5");
  EXPECT_THROW(parse_assignment("nokey"), ConfigError);
}

TEST(KeyValueParse, DumpRoundTrips) {
  const KeyValues kv{{"a", "1"}, {"b", "x y"}};
  EXPECT_EQ(parse(dump(kv)), kv);
  EXPECT_EQ(merge(kv, {{"a", "2"}}).at("a"), "2");
}

TEST(Precedence, CliOverFileOverPresetOverDefaults) {
  // Defaults only.
  const auto d = TrainConfig::resolve({}, {});
  EXPECT_EQ(d.batch_size, 16);
  EXPECT_DOUBLE_EQ(d.g_lr, 1e-3);
  // Preset overrides defaults.
  const auto p = TrainConfig::resolve({{"recipe", "cross_modality"}}, {});
  EXPECT_DOUBLE_EQ(p.g_lr, 2e-4);
  EXPECT_DOUBLE_EQ(p.g_lr_at(350), 2e-4);
  // File overrides preset.
  const auto f = TrainConfig::resolve({{"recipe", "cross_modality"}, {"g_lr", "0.0005"}}, {});
  EXPECT_DOUBLE_EQ(f.g_lr, 5e-4);
  // Command line overrides file, including the recipe choice.
  const auto c = TrainConfig::resolve({{"recipe", "cross_modality"}, {"g_lr", "0.0005"}, {"seed", "3"}},
                                      {{"g_lr", "0.0007"}, {"batch_size", "4"}});
  EXPECT_DOUBLE_EQ(c.g_lr, 7e-4);
  EXPECT_EQ(c.batch_size, 4);
  EXPECT_EQ(c.seed, 3u);
  const auto r = TrainConfig::resolve({{"recipe", "cross_modality"}}, {{"recipe", "multi_sequence"}});
  EXPECT_EQ(r.recipe, train::Recipe::multi_sequence);
  EXPECT_DOUBLE_EQ(r.g_lr, 1e-3);
}

TEST(Precedence, UnknownKeysAndBadValuesRejected) {
  EXPECT_THROW(TrainConfig::resolve({{"lamda_adv1", "1"}}, {}), ConfigError);
  EXPECT_THROW(TrainConfig::resolve({}, {{"recipe", "fast"}}), ConfigError);
  EXPECT_THROW(TrainConfig::resolve({}, {{"d_lr", "0"}}).validate(), ConfigError);
  EXPECT_THROW(TrainConfig::resolve({}, {{"use_emd", "maybe"}}).validate(), ConfigError);
}

TEST(Precedence, KeyValueSnapshotRoundTrips) {
  auto c = TrainConfig::resolve({}, {{"lambda_d2", "0.125"}, {"use_d1", "false"}, {"d_widths", "8,16,1"}});
  const auto kv = c.to_kv();
  const auto back = TrainConfig::from_kv(kv);
  EXPECT_EQ(back.to_kv(), kv);
  EXPECT_DOUBLE_EQ(back.lambda.disc[1], 0.125);
  EXPECT_FALSE(back.use_d[0]);
  EXPECT_EQ(back.d_widths, (std::vector<int>{8, 16, 1}));
}

TEST(Schedule, RecipeLearningRates) {
  EXPECT_DOUBLE_EQ(train::lr_at(0, "multi_sequence"), 0.001);
  EXPECT_NEAR(train::lr_at(99, "multi_sequence"), 0.001, 1e-15);
  EXPECT_NEAR(train::lr_at(100, "multi_sequence"), 0.0002, 1e-15);
  EXPECT_NEAR(train::lr_at(250, "multi_sequence"), 0.001 * 0.04, 1e-15);
  for (int e : {0, 1, 100, 599}) EXPECT_DOUBLE_EQ(train::lr_at(e, "cross_modality"), 0.0002);
  EXPECT_THROW(train::lr_at(0, "other"), ConfigError);
  const auto ms = TrainConfig::resolve({}, {});
  EXPECT_NEAR(ms.g_lr_at(100), 0.0002, 1e-15);
  EXPECT_DOUBLE_EQ(ms.d_lr, 2.5e-5);
}

TEST(Schedule, EmdActivationFollowsPointCritic) {
  auto c = TrainConfig::resolve({}, {});
  EXPECT_TRUE(c.emd_active());
  c.use_d[2] = false;
  EXPECT_FALSE(c.emd_active());
  c.use_emd = "true";
  EXPECT_TRUE(c.emd_active());
  c.use_d[2] = true;
  c.use_emd = "false";
  EXPECT_FALSE(c.emd_active());
  const auto w = c.effective_weights();
  EXPECT_EQ(w.adv[2], 1.0);
}
