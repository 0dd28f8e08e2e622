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

#pragma once

// Fusion training: feature assembly from a dataset, the alternating
// estimator/main optimisation loop, checkpoint round trips and evaluation.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "medfuse/checkpoint.hpp"
#include "medfuse/ehr_data.hpp"
#include "medfuse/fusion.hpp"
#include "medfuse/metrics.hpp"
#include "medfuse/mltm.hpp"
#include "medfuse/optim.hpp"
#include "medfuse/rng.hpp"
#include "medfuse/text_embed.hpp"

namespace medfuse::train {

using ad::Matrix;

struct TrainConfig {
  std::uint64_t seed = 0;
  int batch_size = 64;
  int epochs = 20;
  double learning_rate = 1e-3;
  double estimator_learning_rate = 1e-2;
  int estimator_steps = 1;   // k estimator updates per batch
  bool use_text = true;      // note-section tokens
  bool use_labtext = true;   // rendered abnormal-lab token
  bool use_mltm = true;      // lab tokens from the lab model
  bool use_disentangled_transformer = true;
  double threshold = 0.5;
  std::uint64_t estimator_seed = 0;  // 0 derives it from seed
  int text_hidden = 0;       // hidden width of the text projection, 0 for one layer
  double clip_norm = 0.0;    // global gradient-norm clip, 0 disables

  /// Throws ConfigError; checks the combination with the fusion config too.
  void validate(const fusion::FusionConfig& fusion) const;
  text::TextSources sources() const;
};

template <class Self, class F>
void visit_fields(Self& c, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, TrainConfig>
{
  f("seed", c.seed);
  f("batch_size", c.batch_size);
  f("epochs", c.epochs);
  f("learning_rate", c.learning_rate);
  f("estimator_learning_rate", c.estimator_learning_rate);
  f("estimator_steps", c.estimator_steps);
  f("use_text", c.use_text);
  f("use_labtext", c.use_labtext);
  f("use_mltm", c.use_mltm);
  f("use_disentangled_transformer", c.use_disentangled_transformer);
  f("threshold", c.threshold);
  f("estimator_seed", c.estimator_seed);
  f("text_hidden", c.text_hidden);
  f("clip_norm", c.clip_norm);
}

// ---------------------------------------------------------------------------
// Features

/// Per-visit model inputs, stacked: rows [s * slots, (s + 1) * slots) of
/// `text` belong to sample s, likewise for `lab`. Disabled or missing slots
/// are zero rows marked invalid.
struct FeatureSet {
  int samples = 0;
  int text_slots = 0;
  int d_text = 1;
  int lab_tokens = 0;
  int d_lab = 1;
  Matrix text;
  std::vector<bool> text_valid;
  Matrix lab;
  std::vector<bool> lab_valid;
  Matrix labels;  // samples x L, 0 or 1
  std::vector<std::string> visit_ids;
};

/// `mltm` may be null when config.use_mltm is false; `store` may be null when
/// no text source is enabled. Lab panels are normalised with the dataset stats.
FeatureSet build_features(const ehr::Dataset& data, const std::vector<int>& indices, const mltm::MltmParams* mltm,
                          const text::EmbeddingStore* store, const TrainConfig& config, int lab_tokens);

// ---------------------------------------------------------------------------
// Model

struct FusionModel {
  fusion::FusionConfig config;
  text::TextProjection text_proj;  // d_text -> d_model
  nn::Linear lab_proj;             // d_lab -> d_model
  fusion::FusionParams fusion;

  FusionModel() = default;
  FusionModel(const fusion::FusionConfig& config, int d_text, int d_lab, int text_hidden, Rng& rng);
};

template <class Self, class F>
void visit_params(Self& m, const std::string& prefix, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, FusionModel>
{
  visit_params(m.text_proj, prefix + ".text_proj", f);
  nn::visit_params(m.lab_proj, prefix + ".lab_proj", f);
  visit_params(m.fusion, prefix + ".fusion", f);
}

/// Forward pass for the samples `rows` of a feature set.
fusion::BatchOutput forward_model(ad::Graph& g, const FusionModel& model, const FeatureSet& features,
                                  const std::vector<int>& rows, fusion::Probes* probes = nullptr);

Matrix predict_logits(const FusionModel& model, const FeatureSet& features);

MetricsReport evaluate(const FusionModel& model, const FeatureSet& features, double threshold);

// ---------------------------------------------------------------------------
// Training state

struct EpochStats {
  double focal = 0.0;         // mean training focal loss
  double mi = 0.0;            // mean vclub of the main step
  double estimator_ll = 0.0;  // mean estimator log-likelihood
  double loss = 0.0;          // mean focal + lambda * mi
};

struct TrainState {
  TrainConfig train;
  FusionModel model;
  fusion::MiEstimator estimator;
  Adam main_opt;
  Adam estimator_opt;
  Rng rng{0};
  int epochs_done = 0;
  std::vector<EpochStats> history;
  std::string config_hash;
  int d_text = 1;
  int d_lab = 1;
};

/// Fresh state: model from Rng(seed), estimator from its own stream.
TrainState init_training(const TrainConfig& train, fusion::FusionConfig fusion, int d_text, int d_lab);

struct TrainHooks {
  /// Called after every completed epoch; the state's parameters are finite.
  std::function<void(const TrainState&)> on_epoch;
};

/// Runs epochs until state.epochs_done == state.train.epochs. Per batch: k
/// estimator steps maximising log q(pc | pa, pb) with the main network held
/// fixed, then one main step on focal + lambda * vclub with the estimator
/// frozen. A non-finite loss throws NumericError before any update from that
/// batch is applied.
void run_training(TrainState& state, const FeatureSet& train_features, const TrainHooks& hooks = {});

inline constexpr std::string_view kCheckpointComponent = "fusion";

Checkpoint to_checkpoint(const TrainState& state);
TrainState from_checkpoint(const Checkpoint& ckpt);

}  // namespace medfuse::train
