// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include <string>

#include <gtest/gtest.h>

#include "qac/config.hpp"
#include "qac/error.hpp"

namespace qac {
namespace {

TEST(Config, ParsesSectionsOverDefaults) {
  const auto c = parse_config(
      "[model]\nhidden_dim = 32\n[pretrain]\nobjective = cotmae\ncontext = mixed\n"
      "[eval]\nmetrics = mrr@10, recall@50\n");
  EXPECT_EQ(c.model.hidden_dim, 32u);
  EXPECT_EQ(c.pretrain.objective, Objective::cotmae);
  EXPECT_EQ(c.pretrain.context, ContextMode::mixed);
  EXPECT_EQ(c.eval.metrics, (std::vector<std::string>{"mrr@10", "recall@50"}));
  EXPECT_EQ(c.queries.count, ExperimentConfig{}.queries.count);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config("[model]\nwidth = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("[nowhere]\nseed = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nhidden_dim = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("[pretrain]\nobjective = bert\n"), ConfigError);
  EXPECT_THROW(parse_config("[pretrain]\nlearning_rate = fast\n"), ConfigError);
}

TEST(Config, SetAppliesOverrides) {
  ExperimentConfig c;
  c.set("queries.count=9");
  c.set(" pretrain.mask_rate = 0.2");
  EXPECT_EQ(c.queries.count, 9u);
  EXPECT_DOUBLE_EQ(c.pretrain.encoder_mask_rate(), 0.2);
  c.set("pretrain.mask_rate=auto");
  EXPECT_FALSE(c.pretrain.mask_rate.has_value());
  EXPECT_THROW(c.set("queries.count"), ConfigError);
  EXPECT_THROW(c.set("count=3"), ConfigError);
  EXPECT_THROW(c.set("queries.colour=3"), ConfigError);
}

TEST(Config, MaskRateDependsOnObjective) {
  ExperimentConfig c;
  EXPECT_DOUBLE_EQ(c.pretrain.encoder_mask_rate(), 0.15);
  c.pretrain.objective = Objective::cotmae;
  EXPECT_DOUBLE_EQ(c.pretrain.encoder_mask_rate(), 0.30);
  EXPECT_DOUBLE_EQ(c.pretrain.decoder_masking(1).mask_rate, 0.45);
}

TEST(Config, DumpRoundTripsAndCanonicalIgnoresWorkdir) {
  ExperimentConfig c;
  c.set("finetune.learning_rate=3e-5");
  c.set("pretrain.context=passage");
  const auto again = parse_config(c.dump());
  EXPECT_EQ(again.dump(), c.dump());
  auto moved = c;
  moved.workdir = "elsewhere";
  moved.log_every = 7;
  EXPECT_NE(moved.dump(), c.dump());
  EXPECT_EQ(moved.canonical(), c.canonical());
  moved.seed = 1;
  EXPECT_NE(moved.canonical(), c.canonical());
}

TEST(Config, ValidationNamesTheField) {
  ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  c.pretrain.batch_size = 1;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("pretrain.batch_size"), std::string::npos);
  }
  c = {};
  c.queries.provider = QueryProvider::file;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.pretrain.temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace qac
