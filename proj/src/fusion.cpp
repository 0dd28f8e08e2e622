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

#include "medfuse/fusion.hpp"

#include <cmath>
#include <numbers>

#include "medfuse/errors.hpp"
#include "medfuse/optim.hpp"

namespace medfuse::fusion {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

template <class Module>
void round_all(Module& m) {
  for (Matrix* p : nn::param_list(m)) round_to_float(*p);
}

}  // namespace

void FusionConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("fusion." + msg); };
  if (d_model <= 0) fail("d_model must be positive");
  if (heads <= 0 || d_model % heads != 0) fail("heads must be positive and divide d_model");
  if (a_tokens <= 0) fail("a_tokens must be positive");
  if (b_tokens <= 0) fail("b_tokens must be positive");
  if (joint_tokens < 0) fail("joint_tokens must be >= 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must be in [0, 1]");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail("gamma must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must be in [0, 1]");
  if (estimator_hidden <= 0) fail("estimator_hidden must be positive");
  if (dense_hidden <= 0) fail("dense_hidden must be positive");
  if (num_labels <= 0) fail("num_labels must be positive");
}

CrossAttentionParams::CrossAttentionParams(int width, Rng& rng)
    : query(width, width, rng),
      key_c(width, width, rng),
      key_a(width, width, rng),
      key_b(width, width, rng),
      value_c(width, width, rng),
      value_a(width, width, rng),
      value_b(width, width, rng),
      output(width, width, rng) {}

FusionParams::FusionParams(const FusionConfig& c, Rng& rng) : config(c) {
  c.validate();
  const int d = c.d_model;
  if (c.disentangled) {
    joint = nn::Linear(d * d, c.c() * d, rng);
    self_a = nn::AttentionProjections(d, rng);
    self_b = nn::AttentionProjections(d, rng);
    cross = CrossAttentionParams(d, rng);
    f_a = nn::Linear(d, d, rng);
    f_b = nn::Linear(d, d, rng);
  }
  g_hidden = nn::Linear(c.h_final_width(), c.dense_hidden, rng);
  g_out = nn::Linear(c.dense_hidden, c.num_labels, rng);
  round_all(*this);
}

MiEstimator::MiEstimator(int x_width, int y_width, int hidden_width, Rng& rng)
    : hidden(x_width, hidden_width, rng), mu(hidden_width, y_width, rng), logvar(hidden_width, y_width, rng) {
  round_all(*this);
}

MiEstimator::Output MiEstimator::operator()(Graph& g, Var x) const {
  const Var h = ad::gelu(g, hidden(g, x));
  return {mu(g, h), ad::soft_clamp(g, logvar(g, h), kLogvarBound)};
}

// ---------------------------------------------------------------------------

namespace {

struct TokenLayout {
  ad::AttentionLayout self;
  std::vector<std::vector<int>> pool;  // valid rows per sample
  ad::Vector mask;
};

TokenLayout token_layout(const std::vector<bool>& valid, int batch, int tokens) {
  require(static_cast<int>(valid.size()) == batch * tokens, "fusion: validity length mismatch");
  TokenLayout t;
  t.mask = ad::Vector::Zero(batch * tokens);
  for (int s = 0; s < batch; ++s) {
    std::vector<int> rows;
    for (int k = 0; k < tokens; ++k) {
      const int r = s * tokens + k;
      if (valid[r]) {
        rows.push_back(r);
        t.mask(r) = 1.0;
      }
    }
    if (!rows.empty()) t.self.push_back({rows, rows});
    t.pool.push_back(std::move(rows));
  }
  return t;
}

Var self_block(Graph& g, const nn::AttentionProjections& proj, int heads, Var z, const TokenLayout& t,
               ad::AttentionProbe* probe) {
  const Var mixed = ad::attention(g, proj.query(g, z), proj.key(g, z), proj.value(g, z), t.self, heads, probe);
  return ad::scale_rows(g, ad::add(g, z, proj.output(g, mixed)), t.mask);
}

ad::AttentionLayout cross_layout(const TokenLayout& a, const TokenLayout& b, int batch, int c, int a_tokens) {
  ad::AttentionLayout layout;
  const int off_a = batch * c;
  const int off_b = off_a + batch * a_tokens;
  for (int s = 0; s < batch; ++s) {
    ad::AttentionGroup grp;
    for (int k = 0; k < c; ++k) {
      grp.queries.push_back(s * c + k);
      grp.keys.push_back(s * c + k);
    }
    for (int r : a.pool[s]) grp.keys.push_back(off_a + r);
    for (int r : b.pool[s]) grp.keys.push_back(off_b + r);
    layout.push_back(std::move(grp));
  }
  return layout;
}

Var cross_block(Graph& g, const CrossAttentionParams& p, int heads, Var zc, Var sa, Var sb,
                const ad::AttentionLayout& layout, ad::AttentionProbe* probe) {
  const Var keys = ad::concat_rows(g, {p.key_c(g, zc), p.key_a(g, sa), p.key_b(g, sb)});
  const Var values = ad::concat_rows(g, {p.value_c(g, zc), p.value_a(g, sa), p.value_b(g, sb)});
  const Var mixed = ad::attention(g, p.query(g, zc), keys, values, layout, heads, probe);
  return ad::add(g, zc, p.output(g, mixed));
}

std::vector<std::vector<int>> contiguous_groups(int batch, int tokens) {
  std::vector<std::vector<int>> groups(batch);
  for (int s = 0; s < batch; ++s) {
    for (int k = 0; k < tokens; ++k) groups[s].push_back(s * tokens + k);
  }
  return groups;
}

Var dense_head(Graph& g, const FusionParams& p, Var h) {
  return p.g_out(g, nn::activate(g, p.g_hidden(g, h), p.config.activation));
}

}  // namespace

BatchOutput forward_batch(Graph& g, const FusionParams& p, const BatchInputs& in, Probes* probes) {
  const FusionConfig& cfg = p.config;
  const int B = in.batch, d = cfg.d_model;
  require(B > 0, "fusion: empty batch");
  require(g.value(in.za).rows() == B * cfg.a_tokens && g.value(in.za).cols() == d, "fusion: Z_a shape");
  require(g.value(in.zb).rows() == B * cfg.b_tokens && g.value(in.zb).cols() == d, "fusion: Z_b shape");
  const TokenLayout la = token_layout(in.valid_a, B, cfg.a_tokens);
  const TokenLayout lb = token_layout(in.valid_b, B, cfg.b_tokens);

  BatchOutput out;
  out.a_pool = ad::group_mean(g, in.za, la.pool);
  out.b_pool = ad::group_mean(g, in.zb, lb.pool);
  if (!cfg.disentangled) {
    out.h_final = ad::concat_cols(g, {out.a_pool, out.b_pool});
    out.logits = dense_head(g, p, out.h_final);
    return out;
  }
  const int c = cfg.c();
  out.joint = ad::row_outer(g, out.a_pool, out.b_pool);
  out.zc = ad::split_rows(g, p.joint(g, out.joint), d);
  out.sa = self_block(g, p.self_a, cfg.heads, in.za, la, probes ? &probes->self_a : nullptr);
  out.sb = self_block(g, p.self_b, cfg.heads, in.zb, lb, probes ? &probes->self_b : nullptr);
  out.sc = cross_block(g, p.cross, cfg.heads, out.zc, out.sa, out.sb, cross_layout(la, lb, B, c, cfg.a_tokens),
                       probes ? &probes->cross : nullptr);
  out.pa = ad::group_mean(g, out.sa, la.pool);
  out.pb = ad::group_mean(g, out.sb, lb.pool);
  out.pc = ad::group_mean(g, out.sc, contiguous_groups(B, c));
  out.ha = nn::activate(g, p.f_a(g, out.pa), cfg.activation);
  out.hb = nn::activate(g, p.f_b(g, out.pb), cfg.activation);
  out.h_final = ad::concat_cols(g, {out.ha, out.pc, out.hb});
  out.logits = dense_head(g, p, out.h_final);
  return out;
}

Var estimator_ll_graph(Graph& g, const MiEstimator& q, Var x, Var y) {
  const auto o = q(g, x);
  return ad::gaussian_log_likelihood(g, o.mu, o.logvar, y);
}

Var mi_loss_graph(Graph& g, const MiEstimator& q, const BatchOutput& out) {
  require(out.pc.valid(), "mi_loss: forward ran without the disentangled block");
  const auto o = q(g, ad::concat_cols(g, {out.pa, out.pb}));
  const Var v = ad::vclub(g, o.mu, o.logvar, out.pc);
  if (!std::isfinite(g.scalar(v))) throw NumericError("vclub is not finite");
  return v;
}

Var final_loss_graph(Graph& g, const FusionParams& p, const MiEstimator& q, const BatchOutput& out,
                     const Matrix& labels) {
  const Var focal = ad::focal_loss(g, out.logits, labels, p.config.gamma, p.config.alpha);
  if (p.config.lambda == 0.0 || !p.config.disentangled) return focal;
  return ad::add(g, focal, ad::scale(g, mi_loss_graph(g, q, out), p.config.lambda));
}

// ---------------------------------------------------------------------------

Matrix kronecker_joint(const RowVector& a, const RowVector& b) {
  Matrix c(a.size(), b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    for (Eigen::Index j = 0; j < b.size(); ++j) c(i, j) = a(i) * b(j);
  }
  return c;
}

Matrix project_joint(const FusionParams& p, const Matrix& joint) {
  const int d = p.config.d_model;
  require(joint.rows() == d && joint.cols() == d, "project_joint: joint must be d x d");
  Graph g(false);
  const Matrix flat = joint.reshaped<Eigen::RowMajor>().transpose();
  return g.value(ad::split_rows(g, p.joint(g, g.constant(flat)), d));
}

namespace {

std::vector<Matrix> head_weights(const ad::AttentionProbe& probe, int heads) {
  std::vector<Matrix> w;
  for (int h = 0; h < heads && h < static_cast<int>(probe.probs.size()); ++h) w.push_back(probe.probs[h]);
  return w;
}

}  // namespace

Attended self_attend(const nn::AttentionProjections& proj, int heads, const Matrix& z, const std::vector<bool>& valid) {
  const TokenLayout t = token_layout(valid, 1, static_cast<int>(z.rows()));
  Attended a;
  a.any_valid = !t.pool[0].empty();
  if (!a.any_valid) {
    a.tokens = Matrix::Zero(z.rows(), z.cols());
    return a;
  }
  Graph g(false);
  Matrix zm = z;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    if (!valid[r]) zm.row(r).setZero();
  }
  ad::AttentionProbe probe;
  a.tokens = g.value(self_block(g, proj, heads, g.constant(zm), t, &probe));
  a.weights = head_weights(probe, heads);
  return a;
}

Attended cross_attend_common(const CrossAttentionParams& p, int heads, const Matrix& zc, const Matrix& sa,
                             const std::vector<bool>& valid_a, const Matrix& sb, const std::vector<bool>& valid_b) {
  const int c = static_cast<int>(zc.rows());
  const TokenLayout la = token_layout(valid_a, 1, static_cast<int>(sa.rows()));
  const TokenLayout lb = token_layout(valid_b, 1, static_cast<int>(sb.rows()));
  Graph g(false);
  ad::AttentionProbe probe;
  Attended a;
  a.tokens = g.value(cross_block(g, p, heads, g.constant(zc), g.constant(sa), g.constant(sb),
                                 cross_layout(la, lb, 1, c, static_cast<int>(sa.rows())), &probe));
  a.any_valid = true;
  a.weights = head_weights(probe, heads);
  return a;
}

DenseOut dense_fusion(const FusionParams& p, const RowVector& pa, const RowVector& pc, const RowVector& pb) {
  require(p.config.disentangled, "dense_fusion needs the disentangled configuration");
  Graph g(false);
  const nn::Activation act = p.config.activation;
  const Var ha = nn::activate(g, p.f_a(g, g.constant(pa)), act);
  const Var hb = nn::activate(g, p.f_b(g, g.constant(pb)), act);
  const Var h = ad::concat_cols(g, {ha, g.constant(pc), hb});
  DenseOut out;
  out.h_final = g.value(h);
  out.logits = g.value(dense_head(g, p, h));
  return out;
}

FusionOutput forward(const FusionParams& p, const ModalityFeatures& f) {
  Graph g(false);
  BatchInputs in{g.constant(f.za), f.valid_a, g.constant(f.zb), f.valid_b, 1};
  const BatchOutput b = forward_batch(g, p, in);
  FusionOutput out;
  auto row = [&](Var v) { return RowVector(g.value(v).row(0)); };
  out.a_pool = row(b.a_pool);
  out.b_pool = row(b.b_pool);
  out.h_final = row(b.h_final);
  out.logits = row(b.logits);
  if (p.config.disentangled) {
    out.joint = kronecker_joint(out.a_pool, out.b_pool);
    out.zc = g.value(b.zc);
    out.sa = g.value(b.sa);
    out.sb = g.value(b.sb);
    out.sc = g.value(b.sc);
    out.pa = row(b.pa);
    out.pb = row(b.pb);
    out.pc = row(b.pc);
    out.ha = row(b.ha);
    out.hb = row(b.hb);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Conditional {
  Matrix mu, logvar;
};

Conditional conditional(const MiEstimator& q, const Matrix& x) {
  Graph g(false);
  const auto o = q(g, g.constant(x));
  return {g.value(o.mu), g.value(o.logvar)};
}

double log_density(const Conditional& c, Eigen::Index i, const Matrix& y, Eigen::Index j) {
  double lp = 0.0;
  for (Eigen::Index d = 0; d < y.cols(); ++d) {
    const double diff = y(j, d) - c.mu(i, d);
    lp += -0.5 * kLog2Pi - 0.5 * c.logvar(i, d) - 0.5 * diff * diff * std::exp(-c.logvar(i, d));
  }
  return lp;
}

void check_batch(const Matrix& x, const Matrix& y) {
  require(x.rows() == y.rows() && x.rows() > 0, "vclub: x and y need the same positive number of rows");
}

}  // namespace

double estimator_log_likelihood(const MiEstimator& q, const Matrix& x, const Matrix& y) {
  check_batch(x, y);
  Graph g(false);
  const double v = g.scalar(estimator_ll_graph(g, q, g.constant(x), g.constant(y)));
  if (!std::isfinite(v)) throw NumericError("estimator log-likelihood is not finite");
  return v;
}

double vclub(const MiEstimator& q, const Matrix& x, const Matrix& y) {
  check_batch(x, y);
  Graph g(false);
  const auto o = q(g, g.constant(x));
  const double v = g.scalar(ad::vclub(g, o.mu, o.logvar, g.constant(y)));
  if (!std::isfinite(v)) throw NumericError("vclub is not finite");
  return v;
}

double vclub_double_sum(const MiEstimator& q, const Matrix& x, const Matrix& y) {
  check_batch(x, y);
  const Conditional c = conditional(q, x);
  const Eigen::Index n = x.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double own = log_density(c, i, y, i);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double other = log_density(c, i, y, j);
      if (!std::isfinite(own) || !std::isfinite(other)) {
        throw NumericError("non-finite log-density at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
      }
      total += own - other;
    }
  }
  return total / static_cast<double>(n * n);
}

double vclub_mean_difference(const MiEstimator& q, const Matrix& x, const Matrix& y) {
  check_batch(x, y);
  const Conditional c = conditional(q, x);
  const Eigen::Index n = x.rows();
  const RowVector m1 = y.colwise().mean();
  const RowVector m2 = y.array().square().colwise().mean().matrix();
  double positive = 0.0, negative = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    positive += log_density(c, i, y, i);
    for (Eigen::Index d = 0; d < y.cols(); ++d) {
      const double mu = c.mu(i, d), lv = c.logvar(i, d);
      // E_j (y_j - mu)^2 = m2 - 2 mu m1 + mu^2
      negative += -0.5 * kLog2Pi - 0.5 * lv - 0.5 * (m2(d) - 2.0 * mu * m1(d) + mu * mu) * std::exp(-lv);
    }
  }
  return (positive - negative) / static_cast<double>(n);
}

double focal_loss(const Matrix& logits, const Matrix& labels, double gamma, double alpha) {
  Graph g(false);
  return g.scalar(ad::focal_loss(g, g.constant(logits), labels, gamma, alpha));
}

}  // namespace medfuse::fusion
