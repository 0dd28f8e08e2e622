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

#include "medfuse/mltm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "medfuse/config_io.hpp"
#include "medfuse/errors.hpp"
#include "medfuse/io_util.hpp"
#include "medfuse/optim.hpp"

namespace medfuse::mltm {

void MltmConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("mltm." + msg); };
  if (vocab_size <= 0) fail("vocab_size must be positive");
  if (d_model <= 0) fail("d_model must be positive");
  if (heads <= 0 || d_model % heads != 0) fail("heads must be positive and divide d_model");
  if (encoder_depth <= 0) fail("encoder_depth must be positive");
  if (decoder_depth <= 0) fail("decoder_depth must be positive");
  if (decoder_depth >= encoder_depth) fail("decoder_depth must be smaller than encoder_depth");
  if (ff_width < 0) fail("ff_width must be >= 0");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must be in (0, 1)");
  if (max_epochs <= 0) fail("max_epochs must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (batch_size <= 0) fail("batch_size must be positive");
}

int masked_count(int observed, double mask_ratio) {
  const int k = static_cast<int>(std::lround(mask_ratio * observed));
  return std::clamp(k, 1, observed - 1);
}

std::optional<MaskSpec> sample_mask(const ehr::LabPanel& panel, double mask_ratio, Rng& rng) {
  MaskSpec m;
  m.observed_idx = panel.observed_indices();
  const int n = static_cast<int>(m.observed_idx.size());
  if (n < 2) return std::nullopt;
  const int k = masked_count(n, mask_ratio);
  // partial Fisher-Yates: the first k slots are a uniform k-subset
  std::vector<int> pool = m.observed_idx;
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(pool[i], pool[j]);
  }
  m.masked_idx.assign(pool.begin(), pool.begin() + k);
  std::sort(m.masked_idx.begin(), m.masked_idx.end());
  std::set_difference(m.observed_idx.begin(), m.observed_idx.end(), m.masked_idx.begin(), m.masked_idx.end(),
                      std::back_inserter(m.visible_idx));
  return m;
}

MaskSpec inference_mask(const ehr::LabPanel& panel) {
  MaskSpec m;
  m.observed_idx = panel.observed_indices();
  m.visible_idx = m.observed_idx;
  return m;
}

MltmParams::MltmParams(const MltmConfig& c, Rng& rng) : config(c) {
  c.validate();
  const int d = c.d_model;
  item_weight.resize(c.vocab_size, 1);
  for (int i = 0; i < c.vocab_size; ++i) item_weight(i, 0) = rng.uniform(-1.0, 1.0);
  item_bias = Matrix::Zero(c.vocab_size, 1);
  lift = nn::Linear(1, d, rng);
  position.resize(c.vocab_size, d);
  for (int i = 0; i < c.vocab_size; ++i) {
    for (int j = 0; j < d; ++j) position(i, j) = 0.1 * rng.normal();
  }
  mask_token.resize(1, d);
  for (int j = 0; j < d; ++j) mask_token(0, j) = 0.1 * rng.normal();
  for (int i = 0; i < c.encoder_depth; ++i) encoder.emplace_back(d, c.ff(), rng);
  encoder_norm = nn::LayerNorm(d);
  for (int i = 0; i < c.decoder_depth; ++i) decoder.emplace_back(d, c.ff(), rng);
  decoder_norm = nn::LayerNorm(d);
  head = nn::Linear(d, 1, rng);
  for (Matrix* m : nn::param_list(*this)) round_to_float(*m);
}

// ---------------------------------------------------------------------------

namespace {

struct StackLayout {
  std::vector<int> vis_items;
  Matrix vis_values;
  std::vector<std::vector<int>> vis_rows;
  std::vector<int> mask_items;
  Matrix mask_values;
  std::vector<std::vector<int>> mask_rows;
};

StackLayout stack(const MltmParams& p, const PanelBatch& batch) {
  require(batch.panels.size() == batch.masks.size(), "mltm batch: one mask per panel");
  StackLayout s;
  std::vector<double> vis_vals, mask_vals;
  const int vocab = p.config.vocab_size;
  for (std::size_t b = 0; b < batch.panels.size(); ++b) {
    const auto& panel = *batch.panels[b];
    const auto& mask = batch.masks[b];
    require(static_cast<int>(panel.size()) == vocab, "mltm: panel length differs from vocabulary size");
    auto take = [&](const std::vector<int>& idx, std::vector<int>& items, std::vector<double>& vals,
                    std::vector<int>& rows) {
      for (int i : idx) {
        require(i >= 0 && i < vocab, "mltm: item index out of range");
        require(panel.observed[i], "mltm: mask refers to an unobserved item");
        rows.push_back(static_cast<int>(items.size()));
        items.push_back(i);
        vals.push_back(panel.values[i]);
      }
    };
    s.vis_rows.emplace_back();
    s.mask_rows.emplace_back();
    take(mask.visible_idx, s.vis_items, vis_vals, s.vis_rows.back());
    take(mask.masked_idx, s.mask_items, mask_vals, s.mask_rows.back());
  }
  s.vis_values = Eigen::Map<Matrix>(vis_vals.data(), static_cast<Eigen::Index>(vis_vals.size()), 1);
  s.mask_values = Eigen::Map<Matrix>(mask_vals.data(), static_cast<Eigen::Index>(mask_vals.size()), 1);
  return s;
}

ad::AttentionLayout self_layout(const std::vector<std::vector<int>>& rows) {
  ad::AttentionLayout layout;
  for (const auto& r : rows) {
    if (!r.empty()) layout.push_back({r, r});
  }
  return layout;
}

ad::Var encode_stack(ad::Graph& g, const MltmParams& p, const StackLayout& s, ad::AttentionProbe* probe) {
  const ad::Var w = ad::gather_rows(g, g.param(p.item_weight), s.vis_items);
  const ad::Var b = ad::gather_rows(g, g.param(p.item_bias), s.vis_items);
  const ad::Var scalar = ad::add(g, ad::hadamard(g, w, g.constant(s.vis_values)), b);
  ad::Var x = ad::add(g, p.lift(g, scalar), ad::gather_rows(g, g.param(p.position), s.vis_items));
  const auto layout = self_layout(s.vis_rows);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    x = p.encoder[i](g, x, layout, p.config.heads, i == 0 ? probe : nullptr);
  }
  return p.encoder_norm(g, x);
}

struct DecodeOut {
  ad::Var recon;
  std::vector<std::vector<int>> rows;  // per panel, visible rows then masked rows
};

DecodeOut decode_stack(ad::Graph& g, const MltmParams& p, ad::Var encoded, const StackLayout& s) {
  const int n_vis = static_cast<int>(s.vis_items.size());
  std::vector<ad::Var> parts;
  if (n_vis > 0) parts.push_back(ad::add(g, encoded, ad::gather_rows(g, g.param(p.position), s.vis_items)));
  if (!s.mask_items.empty()) {
    parts.push_back(ad::add_row(g, ad::gather_rows(g, g.param(p.position), s.mask_items), g.param(p.mask_token)));
  }
  require(!parts.empty(), "mltm: nothing to decode");
  ad::Var x = parts.size() == 1 ? parts[0] : ad::concat_rows(g, parts);
  DecodeOut out;
  for (std::size_t b = 0; b < s.vis_rows.size(); ++b) {
    std::vector<int> rows = s.vis_rows[b];
    for (int r : s.mask_rows[b]) rows.push_back(n_vis + r);
    out.rows.push_back(std::move(rows));
  }
  const auto layout = self_layout(out.rows);
  for (const auto& block : p.decoder) x = block(g, x, layout, p.config.heads);
  out.recon = p.head(g, p.decoder_norm(g, x));
  return out;
}

}  // namespace

ad::Var encode_graph(ad::Graph& g, const MltmParams& p, const PanelBatch& batch,
                     std::vector<std::vector<int>>* rows_out, ad::AttentionProbe* probe) {
  const StackLayout s = stack(p, batch);
  if (rows_out) *rows_out = s.vis_rows;
  return encode_stack(g, p, s, probe);
}

BatchForward forward_graph(ad::Graph& g, const MltmParams& p, const PanelBatch& batch) {
  const StackLayout s = stack(p, batch);
  BatchForward f;
  f.encoded = encode_stack(g, p, s, nullptr);
  f.enc_rows = s.vis_rows;
  DecodeOut d = decode_stack(g, p, f.encoded, s);
  f.recon = d.recon;
  f.dec_rows = std::move(d.rows);
  f.target.resize(s.vis_values.rows() + s.mask_values.rows(), 1);
  f.target << s.vis_values, s.mask_values;
  return f;
}

Matrix encode(const MltmParams& p, const ehr::LabPanel& panel, const MaskSpec& mask, ad::AttentionProbe* probe) {
  require(!mask.visible_idx.empty(), "mltm encode: no visible items");
  ad::Graph g(false);
  PanelBatch batch{{&panel}, {mask}};
  return g.value(encode_graph(g, p, batch, nullptr, probe));
}

std::vector<double> decode(const MltmParams& p, const Matrix& latent, const MaskSpec& mask) {
  require(latent.rows() == static_cast<Eigen::Index>(mask.visible_idx.size()) && latent.cols() == p.config.d_model,
          "mltm decode: latent shape does not match the mask");
  // the decoder never reads values, only item positions
  ehr::LabPanel positions(static_cast<std::size_t>(p.config.vocab_size));
  for (int i : mask.observed_idx) {
    require(i >= 0 && i < p.config.vocab_size, "mltm decode: item index out of range");
    positions.set(static_cast<std::size_t>(i), 0.0, false);
  }
  const StackLayout s = stack(p, PanelBatch{{&positions}, {mask}});
  ad::Graph g(false);
  const DecodeOut d = decode_stack(g, p, g.constant(latent), s);
  const Matrix& r = g.value(d.recon);
  std::vector<double> by_item(static_cast<std::size_t>(p.config.vocab_size), 0.0);
  const int n_vis = static_cast<int>(s.vis_items.size());
  for (int k = 0; k < n_vis; ++k) by_item[s.vis_items[k]] = r(k, 0);
  for (std::size_t k = 0; k < s.mask_items.size(); ++k) by_item[s.mask_items[k]] = r(n_vis + static_cast<int>(k), 0);
  std::vector<double> out;
  for (int i : mask.observed_idx) out.push_back(by_item[i]);
  return out;
}

double reconstruction_loss(const std::vector<double>& recon, const ehr::LabPanel& panel, const MaskSpec& mask) {
  require(recon.size() == mask.observed_idx.size(), "reconstruction_loss: one value per observed item");
  if (recon.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < recon.size(); ++k) {
    const double e = recon[k] - panel.values[mask.observed_idx[k]];
    acc += e * e;
  }
  return acc / static_cast<double>(recon.size());
}

// ---------------------------------------------------------------------------

PretrainResult pretrain(const std::vector<ehr::LabPanel>& panels, const MltmConfig& config, Rng& rng,
                        const PretrainHooks& hooks) {
  config.validate();
  PretrainResult result;
  result.params = MltmParams(config, rng);
  MltmParams& p = result.params;
  std::vector<int> eligible;
  for (std::size_t i = 0; i < panels.size(); ++i) {
    if (panels[i].observed_count() >= 2) eligible.push_back(static_cast<int>(i));
    else ++result.skipped_panels;
  }
  if (eligible.empty()) throw ConfigError("mltm pretraining needs panels with at least two observed values");

  const auto params = nn::param_list(p);
  Adam opt(AdamConfig{.learning_rate = config.learning_rate});
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    if (config.cosine_decay) {
      const double t = static_cast<double>(epoch) / config.max_epochs;
      opt.set_learning_rate(config.learning_rate * (0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * t))));
    }
    const auto order = rng.permutation(static_cast<int>(eligible.size()));
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      PanelBatch batch;
      for (std::size_t k = start; k < end; ++k) {
        const auto& panel = panels[eligible[order[k]]];
        batch.panels.push_back(&panel);
        batch.masks.push_back(*sample_mask(panel, config.mask_ratio, rng));
      }
      ad::Graph g;
      const BatchForward f = forward_graph(g, p, batch);
      const ad::Var loss = ad::grouped_mse(g, f.recon, f.target, f.dec_rows);
      const double value = g.scalar(loss);
      if (!std::isfinite(value)) {
        throw NumericError("mltm pretraining loss is not finite at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      g.backward(loss);
      opt.step(params, g);
      total += value;
      ++batches;
    }
    const double epoch_loss = total / batches;
    result.loss_history.push_back(epoch_loss);
    if (hooks.on_epoch) hooks.on_epoch(epoch, epoch_loss, p);
  }
  return result;
}

double masked_value_mse(const MltmParams& p, const std::vector<ehr::LabPanel>& panels, double mask_ratio, Rng& rng) {
  double acc = 0.0;
  long long count = 0;
  PanelBatch batch;
  auto flush = [&] {
    if (batch.panels.empty()) return;
    ad::Graph g(false);
    const BatchForward f = forward_graph(g, p, batch);
    const Matrix& r = g.value(f.recon);
    for (std::size_t b = 0; b < batch.panels.size(); ++b) {
      const auto& rows = f.dec_rows[b];
      const std::size_t n_vis = batch.masks[b].visible_idx.size();
      for (std::size_t k = n_vis; k < rows.size(); ++k) {
        const double e = r(rows[k], 0) - f.target(rows[k], 0);
        acc += e * e;
        ++count;
      }
    }
    batch = {};
  };
  for (const auto& panel : panels) {
    auto mask = sample_mask(panel, mask_ratio, rng);
    if (!mask) continue;
    batch.panels.push_back(&panel);
    batch.masks.push_back(std::move(*mask));
    if (batch.panels.size() == 64) flush();
  }
  flush();
  return count > 0 ? acc / static_cast<double>(count) : 0.0;
}

// ---------------------------------------------------------------------------

std::vector<LabTokens> embed_panels(const MltmParams& p, const std::vector<ehr::LabPanel>& panels, int b_tokens) {
  require(b_tokens > 0, "embed_panel: b_tokens must be positive");
  const int d = p.config.d_model;
  std::vector<LabTokens> out(panels.size());
  constexpr std::size_t kChunk = 128;
  for (std::size_t start = 0; start < panels.size(); start += kChunk) {
    const std::size_t end = std::min(panels.size(), start + kChunk);
    PanelBatch batch;
    for (std::size_t i = start; i < end; ++i) {
      batch.panels.push_back(&panels[i]);
      batch.masks.push_back(inference_mask(panels[i]));
    }
    ad::Graph g(false);
    std::vector<std::vector<int>> rows;
    const ad::Var enc = encode_graph(g, p, batch, &rows);
    const Matrix& z = g.value(enc);
    for (std::size_t i = start; i < end; ++i) {
      LabTokens& t = out[i];
      t.tokens = Matrix::Zero(b_tokens, d);
      t.valid.assign(static_cast<std::size_t>(b_tokens), false);
      t.pooled = ad::RowVector::Zero(d);
      const auto& r = rows[i - start];
      const int n = std::min<int>(b_tokens, static_cast<int>(r.size()));
      for (int k = 0; k < n; ++k) {
        t.tokens.row(k) = z.row(r[k]);
        t.valid[k] = true;
        t.pooled += z.row(r[k]);
      }
      if (n > 0) t.pooled /= static_cast<double>(n);
      t.any_valid = n > 0;
    }
  }
  return out;
}

LabTokens embed_panel(const MltmParams& p, const ehr::LabPanel& panel, int b_tokens) {
  return embed_panels(p, {panel}, b_tokens).front();
}

void save_mltm(const std::filesystem::path& path, const MltmParams& p, std::uint64_t seed,
               const std::string& config_hash) {
  Checkpoint ckpt{std::string(kCheckpointComponent)};
  ckpt.put_text("config", fields_to_text(p.config));
  ckpt.put_u64("seed", seed);
  ckpt.put_text("config_hash", config_hash);
  save_params(ckpt, "mltm", p);
  ckpt.save(path);
}

MltmParams load_mltm(const std::filesystem::path& path, std::uint64_t* seed) {
  const Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.component() != kCheckpointComponent) {
    throw FormatError(path.string() + " holds a '" + ckpt.component() + "' checkpoint, expected 'mltm'");
  }
  const auto config = fields_from_text<MltmConfig>(ckpt.text("config"), "mltm");
  Rng scratch(0);
  MltmParams p(config, scratch);
  load_params(ckpt, "mltm", p);
  if (seed) *seed = ckpt.u64("seed");
  return p;
}

}  // namespace medfuse::mltm
