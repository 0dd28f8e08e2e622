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

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "medfuse/errors.hpp"
#include "medfuse/mltm.hpp"

namespace medfuse {
namespace {

using ad::Matrix;

ehr::LabPanel random_panel(int vocab, double observe_prob, Rng& rng) {
  ehr::LabPanel p(static_cast<std::size_t>(vocab));
  for (int i = 0; i < vocab; ++i) {
    if (rng.bernoulli(observe_prob)) p.set(static_cast<std::size_t>(i), rng.normal(), false);
  }
  return p;
}

mltm::MltmConfig small_config() {
  mltm::MltmConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.encoder_depth = 2;
  c.decoder_depth = 1;
  c.heads = 2;
  c.max_epochs = 3;
  c.batch_size = 16;
  return c;
}

TEST(Mltm, MaskedCountBoundaries) {
  EXPECT_EQ(mltm::masked_count(2, 0.75), 1);
  EXPECT_EQ(mltm::masked_count(3, 0.75), 2);
  EXPECT_EQ(mltm::masked_count(4, 0.75), 3);
  EXPECT_EQ(mltm::masked_count(10, 0.75), 8);  // 7.5 rounds up
  EXPECT_EQ(mltm::masked_count(32, 0.75), 24);
  EXPECT_EQ(mltm::masked_count(5, 0.01), 1);
  EXPECT_EQ(mltm::masked_count(5, 0.99), 4);
}

TEST(Mltm, SampleMaskSkipsSparsePanels) {
  Rng rng(3);
  ehr::LabPanel p(6);
  EXPECT_FALSE(mltm::sample_mask(p, 0.75, rng).has_value());
  p.set(2, 1.0, false);
  EXPECT_FALSE(mltm::sample_mask(p, 0.75, rng).has_value());
  p.set(4, -1.0, false);
  const auto m = mltm::sample_mask(p, 0.75, rng);
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(m->masked_idx.size(), 1u);
  EXPECT_EQ(m->visible_idx.size(), 1u);
}

TEST(Mltm, SampledMasksPartitionObservedItems) {
  Rng rng(11);
  int checked = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto panel = random_panel(32, rng.uniform(), rng);
    const auto m = mltm::sample_mask(panel, 0.75, rng);
    const int obs = static_cast<int>(panel.observed_count());
    if (obs < 2) {
      EXPECT_FALSE(m.has_value());
      continue;
    }
    ASSERT_TRUE(m.has_value());
    ++checked;
    const int expect = std::clamp(static_cast<int>(std::lround(0.75 * obs)), 1, obs - 1);
    EXPECT_EQ(static_cast<int>(m->masked_idx.size()), expect);
    EXPECT_EQ(m->observed_idx, panel.observed_indices());
    EXPECT_TRUE(std::is_sorted(m->masked_idx.begin(), m->masked_idx.end()));
    EXPECT_TRUE(std::is_sorted(m->visible_idx.begin(), m->visible_idx.end()));
    std::vector<int> joined = m->masked_idx;
    joined.insert(joined.end(), m->visible_idx.begin(), m->visible_idx.end());
    std::sort(joined.begin(), joined.end());
    EXPECT_EQ(joined, m->observed_idx);
  }
  EXPECT_GT(checked, 900);
}

TEST(Mltm, MaskingFrequencyIsUniformAcrossItems) {
  Rng rng(5);
  const auto panel = random_panel(32, 1.0, rng);
  std::vector<int> hits(32, 0);
  const int draws = 20000;
  for (int t = 0; t < draws; ++t) {
    const auto m = mltm::sample_mask(panel, 0.75, rng);
    for (int i : m->masked_idx) ++hits[i];
  }
  for (int i = 0; i < 32; ++i) EXPECT_NEAR(hits[i] / static_cast<double>(draws), 0.75, 0.02) << "item " << i;
}

TEST(Mltm, OutputsIgnoreMaskedValues) {
  Rng rng(7);
  const auto cfg = small_config();
  const mltm::MltmParams params(cfg, rng);
  for (int t = 0; t < 50; ++t) {
    const auto panel = random_panel(cfg.vocab_size, 0.7, rng);
    const auto m = mltm::sample_mask(panel, 0.75, rng);
    if (!m) continue;
    auto perturbed = panel;
    for (int i : m->masked_idx) perturbed.values[i] += 100.0 * rng.normal();
    const Matrix a = mltm::encode(params, panel, *m);
    const Matrix b = mltm::encode(params, perturbed, *m);
    EXPECT_EQ(a, b);
    EXPECT_EQ(mltm::decode(params, a, *m), mltm::decode(params, b, *m));
  }
}

TEST(Mltm, ReconstructionLossMatchesLoopOracle) {
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const auto panel = random_panel(16, 0.6, rng);
    const auto m = mltm::sample_mask(panel, 0.75, rng);
    if (!m) continue;
    std::vector<double> recon;
    for (std::size_t k = 0; k < m->observed_idx.size(); ++k) recon.push_back(rng.normal());
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < 16; ++i) {
      if (!panel.observed[i]) continue;
      const auto pos = std::find(m->observed_idx.begin(), m->observed_idx.end(), i) - m->observed_idx.begin();
      sum += (recon[pos] - panel.values[i]) * (recon[pos] - panel.values[i]);
      ++count;
    }
    EXPECT_NEAR(mltm::reconstruction_loss(recon, panel, *m), sum / count, 1e-12);
  }
}

TEST(Mltm, BatchedEmbeddingMatchesSinglePanels) {
  Rng rng(13);
  const auto cfg = small_config();
  const mltm::MltmParams params(cfg, rng);
  std::vector<ehr::LabPanel> panels;
  for (int t = 0; t < 20; ++t) panels.push_back(random_panel(cfg.vocab_size, 0.5, rng));
  panels.push_back(ehr::LabPanel(static_cast<std::size_t>(cfg.vocab_size)));
  const auto batched = mltm::embed_panels(params, panels, cfg.vocab_size);
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const auto single = mltm::embed_panel(params, panels[i], cfg.vocab_size);
    EXPECT_LT((batched[i].tokens - single.tokens).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(batched[i].valid, single.valid);
    const int obs = static_cast<int>(panels[i].observed_count());
    EXPECT_EQ(std::count(single.valid.begin(), single.valid.end(), true), obs);
    EXPECT_EQ(single.any_valid, obs > 0);
    for (int k = obs; k < cfg.vocab_size; ++k) EXPECT_TRUE(single.tokens.row(k).isZero());
  }
}

TEST(Mltm, EmbedPanelTruncatesToTokenBudget) {
  Rng rng(17);
  const auto cfg = small_config();
  const mltm::MltmParams params(cfg, rng);
  const auto panel = random_panel(cfg.vocab_size, 1.0, rng);
  const auto tokens = mltm::embed_panel(params, panel, 4);
  EXPECT_EQ(tokens.tokens.rows(), 4);
  EXPECT_EQ(std::count(tokens.valid.begin(), tokens.valid.end(), true), 4);
}

TEST(Mltm, PretrainingIsDeterministicAndReducesLoss) {
  Rng data_rng(19);
  std::vector<ehr::LabPanel> panels;
  // rank-1 structure so the visible items predict the masked ones
  for (int t = 0; t < 200; ++t) {
    ehr::LabPanel p(12);
    const double z = data_rng.normal();
    for (int i = 0; i < 12; ++i) p.set(static_cast<std::size_t>(i), z * (i % 3 == 0 ? 1.0 : -0.5), false);
    panels.push_back(p);
  }
  auto cfg = small_config();
  cfg.max_epochs = 8;
  cfg.learning_rate = 3e-3;
  Rng a(23), b(23);
  const auto ra = mltm::pretrain(panels, cfg, a);
  const auto rb = mltm::pretrain(panels, cfg, b);
  EXPECT_EQ(ra.loss_history, rb.loss_history);
  EXPECT_EQ(ra.params.position, rb.params.position);
  ASSERT_EQ(ra.loss_history.size(), 8u);
  EXPECT_LT(ra.loss_history.back(), ra.loss_history.front());
}

TEST(Mltm, CheckpointRoundTrip) {
  Rng rng(29);
  const auto cfg = small_config();
  const mltm::MltmParams params(cfg, rng);
  const auto path = std::filesystem::temp_directory_path() / "medfuse_test_mltm.ckpt";
  mltm::save_mltm(path, params, 4242);
  std::uint64_t seed = 0;
  const auto loaded = mltm::load_mltm(path, &seed);
  std::filesystem::remove(path);
  EXPECT_EQ(seed, 4242u);
  EXPECT_EQ(loaded.config, params.config);
  const auto panel = random_panel(cfg.vocab_size, 0.8, rng);
  const auto m = mltm::inference_mask(panel);
  EXPECT_EQ(mltm::encode(loaded, panel, m), mltm::encode(params, panel, m));
}

TEST(Mltm, ConfigValidation) {
  auto cfg = small_config();
  cfg.decoder_depth = cfg.encoder_depth;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.mask_ratio = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace medfuse
