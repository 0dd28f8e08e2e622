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

#include <cmath>
#include <limits>

#include "medfuse/errors.hpp"
#include "medfuse/synth.hpp"
#include "medfuse/training.hpp"

namespace medfuse {
namespace {

using train::FeatureSet;
using train::TrainConfig;
using train::TrainState;

struct Fixture {
  synth::SynthOutput data;
  mltm::MltmParams lab_model;
  std::vector<int> train_idx, val_idx;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    synth::GenConfig gc;
    gc.vocab_size = 8;
    gc.num_labels = 3;
    gc.n_samples = 120;
    gc.d_text = 6;
    gc.min_support = 2;
    Rng rng(1);
    Fixture out{synth::synth_generate(gc, rng), {}, {}, {}};
    mltm::MltmConfig mc;
    mc.vocab_size = 8;
    mc.d_model = 4;
    mc.encoder_depth = 2;
    mc.decoder_depth = 1;
    mc.heads = 2;
    Rng mrng(2);
    out.lab_model = mltm::MltmParams(mc, mrng);
    out.train_idx = out.data.dataset.split_indices(false);
    out.val_idx = out.data.dataset.split_indices(true);
    return out;
  }();
  return f;
}

fusion::FusionConfig fusion_config() {
  fusion::FusionConfig c;
  c.d_model = 4;
  c.heads = 2;
  c.b_tokens = 8;
  c.num_labels = 3;
  c.estimator_hidden = 8;
  c.dense_hidden = 8;
  return c;
}

TrainConfig train_config(int epochs) {
  TrainConfig c;
  c.seed = 11;
  c.batch_size = 16;
  c.epochs = epochs;
  c.learning_rate = 3e-3;
  return c;
}

FeatureSet features(const TrainConfig& c, bool validation = false) {
  const auto& f = fixture();
  return train::build_features(f.data.dataset, validation ? f.val_idx : f.train_idx, &f.lab_model, &f.data.store, c,
                               8);
}

TrainState trained(const TrainConfig& c, const fusion::FusionConfig& fc = fusion_config()) {
  const auto feats = features(c);
  auto state = train::init_training(c, fc, feats.d_text, feats.d_lab);
  train::run_training(state, feats);
  return state;
}

TEST(Training, FeaturesRespectAblationToggles) {
  auto c = train_config(1);
  const auto full = features(c);
  EXPECT_EQ(full.samples, static_cast<int>(fixture().train_idx.size()));
  EXPECT_EQ(full.text_slots, 5);
  EXPECT_EQ(full.d_text, 6);
  EXPECT_EQ(full.d_lab, 4);
  c.use_text = false;
  const auto no_notes = features(c);
  for (int s = 0; s < no_notes.samples; ++s) {
    for (int k = 0; k < 4; ++k) EXPECT_FALSE(no_notes.text_valid[s * 5 + k]);
    EXPECT_EQ(no_notes.text_valid[s * 5 + 4], full.text_valid[s * 5 + 4]);
  }
  c.use_mltm = false;
  const auto labtext_only = train::build_features(fixture().data.dataset, fixture().train_idx, nullptr,
                                                  &fixture().data.store, c, 8);
  EXPECT_TRUE(labtext_only.lab.isZero());
  for (bool v : labtext_only.lab_valid) EXPECT_FALSE(v);
}

TEST(Training, MissingInputsAreConfigErrors) {
  auto c = train_config(1);
  const auto& f = fixture();
  EXPECT_THROW(train::build_features(f.data.dataset, f.train_idx, nullptr, &f.data.store, c, 8), ConfigError);
  EXPECT_THROW(train::build_features(f.data.dataset, f.train_idx, &f.lab_model, nullptr, c, 8), ConfigError);
}

TEST(Training, SingleSampleBatchesNeedLambdaZero) {
  auto c = train_config(1);
  c.batch_size = 1;
  auto fc = fusion_config();
  EXPECT_THROW(train::init_training(c, fc, 6, 4), ConfigError);
  fc.lambda = 0.0;
  EXPECT_NO_THROW(train::init_training(c, fc, 6, 4));
}

TEST(Training, RejectsOutOfRangeSettings) {
  auto fc = fusion_config();
  fc.lambda = 2.0;
  EXPECT_THROW(train::init_training(train_config(1), fc, 6, 4), ConfigError);
  auto c = train_config(1);
  c.threshold = 1.0;
  EXPECT_THROW(train::init_training(c, fusion_config(), 6, 4), ConfigError);
  fc = fusion_config();
  fc.a_tokens = 4;
  EXPECT_THROW(train::init_training(train_config(1), fc, 6, 4), ConfigError);
}

TEST(Training, IdenticalSeedsGiveIdenticalCheckpoints) {
  const auto c = train_config(2);
  const auto a = train::to_checkpoint(trained(c)).serialize();
  const auto b = train::to_checkpoint(trained(c)).serialize();
  EXPECT_TRUE(a == b);
  auto other = c;
  other.seed = 12;
  EXPECT_TRUE(a != train::to_checkpoint(trained(other)).serialize());
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  const auto full = train::to_checkpoint(trained(train_config(4))).serialize();

  const auto feats = features(train_config(4));
  auto first = train::init_training(train_config(2), fusion_config(), feats.d_text, feats.d_lab);
  train::run_training(first, feats);
  auto resumed = train::from_checkpoint(Checkpoint::parse(train::to_checkpoint(first).serialize()));
  EXPECT_EQ(resumed.epochs_done, 2);
  resumed.train.epochs = 4;
  train::run_training(resumed, feats);
  EXPECT_TRUE(train::to_checkpoint(resumed).serialize() == full);
}

TEST(Training, LambdaZeroIgnoresEstimatorInitialisation) {
  auto fc = fusion_config();
  fc.lambda = 0.0;
  auto c = train_config(2);
  c.estimator_seed = 101;
  const auto a = trained(c, fc);
  c.estimator_seed = 202;
  const auto b = trained(c, fc);
  EXPECT_NE(a.estimator.hidden.weight, b.estimator.hidden.weight);
  const auto val = features(c, true);
  EXPECT_EQ(train::predict_logits(a.model, val), train::predict_logits(b.model, val));
}

TEST(Training, LossesAreFiniteAndMiIsTracked) {
  const auto s = trained(train_config(3));
  ASSERT_EQ(s.history.size(), 3u);
  for (const auto& e : s.history) {
    EXPECT_TRUE(std::isfinite(e.focal));
    EXPECT_TRUE(std::isfinite(e.mi));
    EXPECT_TRUE(std::isfinite(e.loss));
    EXPECT_NE(e.mi, 0.0);
  }
}

TEST(Training, PlainVariantTrains) {
  auto c = train_config(2);
  c.use_disentangled_transformer = false;
  const auto s = trained(c);
  EXPECT_FALSE(s.model.config.disentangled);
  for (const auto& e : s.history) EXPECT_EQ(e.mi, 0.0);
  const auto report = train::evaluate(s.model, features(c, true), 0.5);
  EXPECT_GE(report.f1_macro, 0.0);
  EXPECT_LE(report.f1_macro, 1.0);
}

TEST(Training, NonFiniteLossAbortsBeforeUpdating) {
  const auto c = train_config(3);
  auto feats = features(c);
  for (int r = 0; r < feats.text.rows(); ++r) feats.text(r, 0) = std::numeric_limits<double>::quiet_NaN();
  auto state = train::init_training(c, fusion_config(), feats.d_text, feats.d_lab);
  const auto before = train::to_checkpoint(state);
  int epochs_seen = 0;
  EXPECT_THROW(train::run_training(state, feats, {.on_epoch = [&](const TrainState&) { ++epochs_seen; }}),
               NumericError);
  EXPECT_EQ(epochs_seen, 0);
  // the epoch shuffle has advanced the rng; every other entry is untouched
  const auto after = train::to_checkpoint(state);
  ASSERT_EQ(after.entries().size(), before.entries().size());
  for (std::size_t i = 0; i < before.entries().size(); ++i) {
    const auto& a = after.entries()[i];
    const auto& b = before.entries()[i];
    if (b.name == "rng") continue;
    EXPECT_TRUE(a.numbers == b.numbers && a.text == b.text && a.u64 == b.u64) << b.name;
  }
}

TEST(Training, RaisingThresholdNeverRaisesRecall) {
  const auto s = trained(train_config(2));
  const auto val = features(train_config(2), true);
  std::vector<double> previous(3, 1.0);
  for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const auto report = train::evaluate(s.model, val, tau);
    ASSERT_EQ(report.per_label.size(), 3u);
    for (std::size_t l = 0; l < 3; ++l) {
      EXPECT_LE(report.per_label[l].recall, previous[l]) << "tau " << tau << " label " << l;
      previous[l] = report.per_label[l].recall;
    }
  }
}

TEST(Training, EvaluateRejectsEmptySplit) {
  const auto s = trained(train_config(1));
  const auto& f = fixture();
  const auto empty = train::build_features(f.data.dataset, {}, &f.lab_model, &f.data.store, train_config(1), 8);
  EXPECT_THROW(train::evaluate(s.model, empty, 0.5), ConfigError);
}

}  // namespace
}  // namespace medfuse
