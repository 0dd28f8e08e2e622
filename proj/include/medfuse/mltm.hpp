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

// Masked lab-test model: a transformer autoencoder over the observed items of
// a lab panel. Training re-masks a fraction of the observed values and
// reconstructs every observed value from the visible ones.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "medfuse/autodiff.hpp"
#include "medfuse/checkpoint.hpp"
#include "medfuse/ehr_data.hpp"
#include "medfuse/nn.hpp"
#include "medfuse/rng.hpp"

namespace medfuse::mltm {

using ad::Matrix;

struct MltmConfig {
  int vocab_size = 32;
  int d_model = 32;
  int encoder_depth = 6;
  int decoder_depth = 2;
  int heads = 4;
  int ff_width = 0;  // 0 means 2 * d_model
  double mask_ratio = 0.75;
  int max_epochs = 50;
  double learning_rate = 1e-3;
  int batch_size = 32;
  bool cosine_decay = true;  // decay the rate to 10% over max_epochs

  int ff() const { return ff_width > 0 ? ff_width : 2 * d_model; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const MltmConfig&) const = default;
};

template <class Self, class F>
void visit_fields(Self& c, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, MltmConfig>
{
  f("vocab_size", c.vocab_size);
  f("d_model", c.d_model);
  f("encoder_depth", c.encoder_depth);
  f("decoder_depth", c.decoder_depth);
  f("heads", c.heads);
  f("ff_width", c.ff_width);
  f("mask_ratio", c.mask_ratio);
  f("max_epochs", c.max_epochs);
  f("learning_rate", c.learning_rate);
  f("batch_size", c.batch_size);
  f("cosine_decay", c.cosine_decay);
}

struct MaskSpec {
  std::vector<int> observed_idx;  // ascending
  std::vector<int> masked_idx;    // ascending, subset of observed
  std::vector<int> visible_idx;   // ascending, observed minus masked
};

/// clamp(round(ratio * observed), 1, observed - 1).
int masked_count(int observed, double mask_ratio);

/// Draws the artificial mask uniformly among observed items. Returns nullopt
/// (skip the record) when fewer than two values are observed.
std::optional<MaskSpec> sample_mask(const ehr::LabPanel& panel, double mask_ratio, Rng& rng);

/// Every observed item visible, none masked.
MaskSpec inference_mask(const ehr::LabPanel& panel);

struct MltmParams {
  MltmConfig config;
  Matrix item_weight;   // D x 1, the per-item w
  Matrix item_bias;     // D x 1, the per-item b
  nn::Linear lift;      // 1 -> d_model, shared
  Matrix position;      // D x d_model
  Matrix mask_token;    // 1 x d_model
  std::vector<nn::TransformerBlock> encoder;
  nn::LayerNorm encoder_norm;
  std::vector<nn::TransformerBlock> decoder;
  nn::LayerNorm decoder_norm;
  nn::Linear head;      // d_model -> 1

  MltmParams() = default;
  MltmParams(const MltmConfig& config, Rng& rng);
};

template <class Self, class F>
void visit_params(Self& p, const std::string& prefix, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, MltmParams>
{
  f(prefix + ".item_weight", p.item_weight);
  f(prefix + ".item_bias", p.item_bias);
  nn::visit_params(p.lift, prefix + ".lift", f);
  f(prefix + ".position", p.position);
  f(prefix + ".mask_token", p.mask_token);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    nn::visit_params(p.encoder[i], prefix + ".encoder." + std::to_string(i), f);
  }
  nn::visit_params(p.encoder_norm, prefix + ".encoder_norm", f);
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    nn::visit_params(p.decoder[i], prefix + ".decoder." + std::to_string(i), f);
  }
  nn::visit_params(p.decoder_norm, prefix + ".decoder_norm", f);
  nn::visit_params(p.head, prefix + ".head", f);
}

// ---------------------------------------------------------------------------
// Graph-level building blocks over a stack of panels

struct PanelBatch {
  std::vector<const ehr::LabPanel*> panels;
  std::vector<MaskSpec> masks;
};

struct BatchForward {
  ad::Var encoded;                         // sum |visible| x d_model
  std::vector<std::vector<int>> enc_rows;  // encoder rows per panel
  ad::Var recon;                           // sum |observed| x 1
  Matrix target;                           // aligned with recon
  std::vector<std::vector<int>> dec_rows;  // recon rows per panel, visible items first
};

/// Encoder over visible items only. `probe` records the first block's weights.
ad::Var encode_graph(ad::Graph& g, const MltmParams& p, const PanelBatch& batch,
                     std::vector<std::vector<int>>* rows_out = nullptr, ad::AttentionProbe* probe = nullptr);
/// Encoder, decoder and head.
BatchForward forward_graph(ad::Graph& g, const MltmParams& p, const PanelBatch& batch);

// ---------------------------------------------------------------------------
// Single-panel operations

/// |visible| x d_model, rows in the order of mask.visible_idx.
Matrix encode(const MltmParams& p, const ehr::LabPanel& panel, const MaskSpec& mask,
              ad::AttentionProbe* probe = nullptr);
/// One reconstructed value per observed item, in mask.observed_idx order.
std::vector<double> decode(const MltmParams& p, const Matrix& latent, const MaskSpec& mask);
/// Mean squared error over all observed items.
double reconstruction_loss(const std::vector<double>& recon, const ehr::LabPanel& panel, const MaskSpec& mask);

// ---------------------------------------------------------------------------
// Training

struct PretrainResult {
  MltmParams params;
  std::vector<double> loss_history;  // mean batch loss per epoch
  int skipped_panels = 0;            // fewer than two observed values
};

struct PretrainHooks {
  /// Called after every finite epoch with its mean loss.
  std::function<void(int epoch, double loss, const MltmParams&)> on_epoch;
};

/// Panels must already be normalised. Initialisation and masks draw from rng.
/// A non-finite batch loss throws NumericError before the update is applied,
/// so the parameters seen by the last on_epoch call are the last finite ones.
PretrainResult pretrain(const std::vector<ehr::LabPanel>& panels, const MltmConfig& config, Rng& rng,
                        const PretrainHooks& hooks = {});

/// MSE over artificially masked items only, one fresh mask per eligible panel.
double masked_value_mse(const MltmParams& p, const std::vector<ehr::LabPanel>& panels, double mask_ratio, Rng& rng);

// ---------------------------------------------------------------------------
// Inference

struct LabTokens {
  Matrix tokens;            // b_tokens x d_model, invalid rows zero
  std::vector<bool> valid;
  ad::RowVector pooled;     // mean of valid rows, zero when none
  bool any_valid = false;
};

/// Encodes all observed items (ascending item order), padded or truncated to b_tokens.
LabTokens embed_panel(const MltmParams& p, const ehr::LabPanel& panel, int b_tokens);
std::vector<LabTokens> embed_panels(const MltmParams& p, const std::vector<ehr::LabPanel>& panels, int b_tokens);

// ---------------------------------------------------------------------------
// Persistence

inline constexpr std::string_view kCheckpointComponent = "mltm";

void save_mltm(const std::filesystem::path& path, const MltmParams& p, std::uint64_t seed,
               const std::string& config_hash = {});
MltmParams load_mltm(const std::filesystem::path& path, std::uint64_t* seed = nullptr);

}  // namespace medfuse::mltm
