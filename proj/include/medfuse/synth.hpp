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

#include <vector>

#include "medfuse/autodiff.hpp"
#include "medfuse/ehr_data.hpp"
#include "medfuse/rng.hpp"
#include "medfuse/text_embed.hpp"

namespace medfuse::synth {

using ad::Matrix;

/// Linear-Gaussian generator with shared, lab-only and text-only latents.
///
///   z = [z_shared; z_lab; z_text] ~ N(0, I)
///   lab latent   = W_lab  [z_shared; z_lab]  + sigma * eps     (per item)
///   raw value    = offset_i + scale_i * lab latent_i
///   section emb  = W_text_s [z_shared; z_text] + sigma * eps   (per note section)
///   LabText emb  = W_labtext a + sigma * eps, a_i = sign(latent_i) on abnormal items
///   labels       ~ Bernoulli(sigmoid(U z + bias))
///
/// An item is flagged abnormal when its latent's z-score exceeds 2 in magnitude.
struct GenConfig {
  int vocab_size = 32;
  int num_labels = 10;
  int n_samples = 1000;
  int k_shared = 4;
  int k_lab = 2;
  int k_text = 2;
  int d_text = 16;
  double noise_sigma = 0.1;
  double missing_rate = 0.2;
  double section_missing_rate = 0.0;
  double label_scale = 3.0;
  int visits_per_patient = 2;
  double val_fraction = 0.2;
  int min_support = 5;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

template <class Self, class F>
void visit_fields(Self& c, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, GenConfig>
{
  f("vocab_size", c.vocab_size);
  f("num_labels", c.num_labels);
  f("n_samples", c.n_samples);
  f("k_shared", c.k_shared);
  f("k_lab", c.k_lab);
  f("k_text", c.k_text);
  f("d_text", c.d_text);
  f("noise_sigma", c.noise_sigma);
  f("missing_rate", c.missing_rate);
  f("section_missing_rate", c.section_missing_rate);
  f("label_scale", c.label_scale);
  f("visits_per_patient", c.visits_per_patient);
  f("val_fraction", c.val_fraction);
  f("min_support", c.min_support);
}

struct GroundTruth {
  Matrix w_lab;                 // D x (k_shared + k_lab)
  std::vector<Matrix> w_text;   // per section: d_text x (k_shared + k_text)
  Matrix w_labtext;             // d_text x D
  Matrix label_weights;         // L x (k_shared + k_lab + k_text)
  Eigen::VectorXd label_bias;   // L
  Matrix latents;               // n x (k_shared + k_lab + k_text)
  std::vector<double> item_offset;
  std::vector<double> item_scale;
};

struct SynthOutput {
  ehr::Dataset dataset;
  text::EmbeddingStore store;
  GroundTruth truth;
};

/// Pure function of (config, rng state).
SynthOutput synth_generate(const GenConfig& config, Rng& rng);

}  // namespace medfuse::synth
