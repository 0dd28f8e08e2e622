// Copyright 2026 The medfuse Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include "medfuse/errors.hpp"
#include "medfuse/run_config.hpp"

namespace medfuse {
namespace {

std::string config_error(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

TEST(RunConfig, WriteThenParseIsIdentity) {
  RunConfig c;
  c.data.n_samples = 1234;
  c.data.noise_sigma = 1.0 / 3.0;
  c.mltm.learning_rate = 3e-7;
  c.mltm.cosine_decay = false;
  c.fusion.lambda = 0.1;
  c.fusion.alpha = 0.7;
  c.train.seed = 18446744073709551615ull;
  c.train.use_text = false;
  c.train.threshold = 0.35;
  const RunConfig back = parse_run_config(write_run_config(c));
  EXPECT_TRUE(back == c);
  EXPECT_EQ(back.train.seed, c.train.seed);
  EXPECT_EQ(back.data.noise_sigma, c.data.noise_sigma);
  EXPECT_EQ(back.mltm.learning_rate, c.mltm.learning_rate);
  EXPECT_FALSE(back.train.use_text);
}

TEST(RunConfig, EveryFieldIsWritten) {
  const RunConfig c;
  const std::string text = write_run_config(c);
  auto expect_keys = [&](const auto& section, const std::string& name) {
    const auto header = text.find("[" + name + "]");
    ASSERT_NE(header, std::string::npos) << name;
    visit_fields(section, [&](std::string_view key, const auto&) {
      EXPECT_NE(text.find("\n" + std::string(key) + " = ", header), std::string::npos) << name << "." << key;
    });
  };
  expect_keys(c.data, "data");
  expect_keys(c.mltm, "mltm");
  expect_keys(c.fusion, "fusion");
  expect_keys(c.train, "train");
}

TEST(RunConfig, MissingKeysKeepDefaultsAndCommentsAreIgnored) {
  const auto c = parse_run_config("# a comment\n[fusion]\n  lambda = 0.25  \n\n[train]\n# another\nepochs = 3\n");
  EXPECT_EQ(c.fusion.lambda, 0.25);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.batch_size, RunConfig{}.train.batch_size);
  EXPECT_EQ(c.mltm.d_model, RunConfig{}.mltm.d_model);
}

TEST(RunConfig, RejectionsNameTheKey) {
  EXPECT_NE(config_error("[fusion]\nbogus = 1\n").find("fusion.bogus"), std::string::npos);
  EXPECT_NE(config_error("[fusion]\nlambda = lots\n").find("fusion.lambda"), std::string::npos);
  EXPECT_NE(config_error("[train]\nepochs = 2\nepochs = 3\n").find("train.epochs"), std::string::npos);
  EXPECT_NE(config_error("[train]\nuse_text = maybe\n").find("train.use_text"), std::string::npos);
  EXPECT_NE(config_error("[model]\nx = 1\n").find("[model]"), std::string::npos);
  EXPECT_NE(config_error("epochs = 1\n").find("outside"), std::string::npos);
  EXPECT_NE(config_error("[train\n").find("line 1"), std::string::npos);
  EXPECT_NE(config_error("[train]\njust words\n").find("line 2"), std::string::npos);
}

TEST(RunConfig, ValidateNamesOutOfRangeField) {
  auto c = parse_run_config("[fusion]\nlambda = 1.5\n");
  try {
    c.validate();
    FAIL() << "lambda 1.5 accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("fusion.lambda"), std::string::npos) << e.what();
  }
}

TEST(RunConfig, HashTracksContent) {
  RunConfig a, b;
  EXPECT_EQ(run_config_hash(a), run_config_hash(b));
  EXPECT_EQ(run_config_hash(a).size(), 16u);
  b.fusion.gamma = 1.5;
  EXPECT_NE(run_config_hash(a), run_config_hash(b));
  set_run_config_field(a, "fusion.gamma", "1.5");
  EXPECT_EQ(run_config_hash(a), run_config_hash(b));
  EXPECT_THROW(set_run_config_field(a, "gamma", "1"), ConfigError);
}

}  // namespace
}  // namespace medfuse
