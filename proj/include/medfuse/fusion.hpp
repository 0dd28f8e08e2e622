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

// Disentangled fusion of a text token sequence (Z_a) and a lab token sequence
// (Z_b): joint outer-product tokens, per-modality self-attention, a
// cross-attention block for the common representation, dense fusion of the
// three streams, and the mutual-information regulariser on pooled features.

#include <string>
#include <vector>

#include "medfuse/autodiff.hpp"
#include "medfuse/nn.hpp"
#include "medfuse/rng.hpp"

namespace medfuse::fusion {

using ad::Graph;
using ad::Matrix;
using ad::RowVector;
using ad::Var;

struct FusionConfig {
  int d_model = 32;
  int heads = 4;
  int a_tokens = 5;        // text slots
  int b_tokens = 32;       // lab slots
  int joint_tokens = 0;    // c; 0 means a_tokens
  double lambda = 0.1;
  double gamma = 2.0;
  double alpha = 0.25;
  int estimator_hidden = 64;
  int dense_hidden = 64;   // width of g's hidden layer
  int num_labels = 10;
  nn::Activation activation = nn::Activation::kGelu;
  bool disentangled = true;  // false: logits from concat(A_pool, B_pool); set by training

  int c() const { return joint_tokens > 0 ? joint_tokens : a_tokens; }
  int h_final_width() const { return disentangled ? 3 * d_model : 2 * d_model; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

template <class Self, class F>
void visit_fields(Self& c, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, FusionConfig>
{
  f("d_model", c.d_model);
  f("heads", c.heads);
  f("a_tokens", c.a_tokens);
  f("b_tokens", c.b_tokens);
  f("joint_tokens", c.joint_tokens);
  f("lambda", c.lambda);
  f("gamma", c.gamma);
  f("alpha", c.alpha);
  f("estimator_hidden", c.estimator_hidden);
  f("dense_hidden", c.dense_hidden);
  f("num_labels", c.num_labels);
  f("activation", c.activation);
}

// ---------------------------------------------------------------------------
// Parameters

struct CrossAttentionParams {
  nn::Linear query;
  nn::Linear key_c, key_a, key_b;
  nn::Linear value_c, value_a, value_b;
  nn::Linear output;

  CrossAttentionParams() = default;
  CrossAttentionParams(int width, Rng& rng);
};

struct FusionParams {
  FusionConfig config;
  nn::Linear joint;                     // d^2 -> c * d
  nn::AttentionProjections self_a, self_b;
  CrossAttentionParams cross;
  nn::Linear f_a, f_b;                  // d -> d
  nn::Linear g_hidden, g_out;           // h_final -> hidden -> L

  FusionParams() = default;
  FusionParams(const FusionConfig& config, Rng& rng);
};

/// q(y | x) = N(mu(x), diag(exp(logvar(x)))), with logvar soft-clamped to (-8, 8).
struct MiEstimator {
  nn::Linear hidden;  // 2d -> H
  nn::Linear mu;      // H -> d
  nn::Linear logvar;  // H -> d

  MiEstimator() = default;
  MiEstimator(int x_width, int y_width, int hidden_width, Rng& rng);

  struct Output {
    Var mu, logvar;
  };
  Output operator()(Graph& g, Var x) const;
};

inline constexpr double kLogvarBound = 8.0;

template <class Self, class F>
void visit_params(Self& p, const std::string& prefix, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, CrossAttentionParams>
{
  nn::visit_params(p.query, prefix + ".query", f);
  nn::visit_params(p.key_c, prefix + ".key_c", f);
  nn::visit_params(p.key_a, prefix + ".key_a", f);
  nn::visit_params(p.key_b, prefix + ".key_b", f);
  nn::visit_params(p.value_c, prefix + ".value_c", f);
  nn::visit_params(p.value_a, prefix + ".value_a", f);
  nn::visit_params(p.value_b, prefix + ".value_b", f);
  nn::visit_params(p.output, prefix + ".output", f);
}

template <class Self, class F>
void visit_params(Self& p, const std::string& prefix, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, FusionParams>
{
  if (p.config.disentangled) {
    nn::visit_params(p.joint, prefix + ".joint", f);
    nn::visit_params(p.self_a, prefix + ".self_a", f);
    nn::visit_params(p.self_b, prefix + ".self_b", f);
    visit_params(p.cross, prefix + ".cross", f);
    nn::visit_params(p.f_a, prefix + ".f_a", f);
    nn::visit_params(p.f_b, prefix + ".f_b", f);
  }
  nn::visit_params(p.g_hidden, prefix + ".g_hidden", f);
  nn::visit_params(p.g_out, prefix + ".g_out", f);
}

template <class Self, class F>
void visit_params(Self& p, const std::string& prefix, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, MiEstimator>
{
  nn::visit_params(p.hidden, prefix + ".hidden", f);
  nn::visit_params(p.mu, prefix + ".mu", f);
  nn::visit_params(p.logvar, prefix + ".logvar", f);
}

// ---------------------------------------------------------------------------
// Batched graph forward. Token inputs are stacked per sample: rows
// [s * a_tokens, (s + 1) * a_tokens) of za belong to sample s. Invalid rows
// must be zero.

struct BatchInputs {
  Var za;                     // (B * a_tokens) x d
  std::vector<bool> valid_a;  // B * a_tokens
  Var zb;                     // (B * b_tokens) x d
  std::vector<bool> valid_b;  // B * b_tokens
  int batch = 0;
};

struct BatchOutput {
  Var a_pool, b_pool;   // B x d, masked means of the inputs
  Var joint;            // B x d^2
  Var zc;               // (B * c) x d
  Var sa, sb, sc;       // self-attended and common tokens
  Var pa, pb, pc;       // B x d pooled
  Var ha, hb;           // B x d
  Var h_final;          // B x h_final_width
  Var logits;           // B x L
};

struct Probes {
  ad::AttentionProbe self_a, self_b, cross;
};

BatchOutput forward_batch(Graph& g, const FusionParams& p, const BatchInputs& in, Probes* probes = nullptr);

/// vclub(concat(pa, pb), pc) under the estimator.
Var mi_loss_graph(Graph& g, const MiEstimator& q, const BatchOutput& out);
/// Mean log q(pc | concat(pa, pb)).
Var estimator_ll_graph(Graph& g, const MiEstimator& q, Var x, Var y);
/// focal + lambda * mi. With lambda == 0 the MI term is not built at all.
Var final_loss_graph(Graph& g, const FusionParams& p, const MiEstimator& q, const BatchOutput& out,
                     const Matrix& labels);

// ---------------------------------------------------------------------------
// Single-sample operations

/// C[i][j] = a[i] * b[j].
Matrix kronecker_joint(const RowVector& a, const RowVector& b);

/// c x d tokens from the flattened joint matrix.
Matrix project_joint(const FusionParams& p, const Matrix& joint);

struct Attended {
  Matrix tokens;           // invalid rows are zero
  bool any_valid = false;
  std::vector<Matrix> weights;  // per head, queries x valid keys
};

/// Z + W_o * MHA(Z) over valid tokens.
Attended self_attend(const nn::AttentionProjections& proj, int heads, const Matrix& z, const std::vector<bool>& valid);

/// Queries from zc; keys and values from zc, the valid rows of sa and of sb
/// (in that order); residual from zc.
Attended cross_attend_common(const CrossAttentionParams& p, int heads, const Matrix& zc, const Matrix& sa,
                             const std::vector<bool>& valid_a, const Matrix& sb, const std::vector<bool>& valid_b);

struct DenseOut {
  RowVector h_final;
  RowVector logits;
};

DenseOut dense_fusion(const FusionParams& p, const RowVector& pa, const RowVector& pc, const RowVector& pb);

struct ModalityFeatures {
  Matrix za;
  std::vector<bool> valid_a;
  Matrix zb;
  std::vector<bool> valid_b;
};

struct FusionOutput {
  RowVector a_pool, b_pool;
  Matrix joint;     // d x d
  Matrix zc;
  Matrix sa, sb, sc;
  RowVector pa, pb, pc;
  RowVector ha, hb;
  RowVector h_final;
  RowVector logits;
};

FusionOutput forward(const FusionParams& p, const ModalityFeatures& features);

// ---------------------------------------------------------------------------
// Losses on plain matrices

/// mean_i log q(y_i | x_i).
double estimator_log_likelihood(const MiEstimator& q, const Matrix& x, const Matrix& y);
/// Pairwise contrastive bound; exactly zero for N = 1.
double vclub(const MiEstimator& q, const Matrix& x, const Matrix& y);
/// Literal (1/N^2) sum_i sum_j [log q(y_i|x_i) - log q(y_j|x_i)] with full log densities.
double vclub_double_sum(const MiEstimator& q, const Matrix& x, const Matrix& y);
/// mean_i log q(y_i|x_i) - mean_{i,j} log q(y_j|x_i), the second mean from the moments of y.
double vclub_mean_difference(const MiEstimator& q, const Matrix& x, const Matrix& y);

double focal_loss(const Matrix& logits, const Matrix& labels, double gamma, double alpha);

}  // namespace medfuse::fusion
