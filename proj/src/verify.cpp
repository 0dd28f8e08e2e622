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

#include "medfuse/verify.hpp"

#include <chrono>
#include <cmath>

#include "medfuse/errors.hpp"
#include "medfuse/fusion.hpp"
#include "medfuse/optim.hpp"
#include "medfuse/rng.hpp"
#include "medfuse/training.hpp"

namespace medfuse {

using ad::Matrix;

void MiBenchConfig::validate() const {
  if (!(rho > -1.0 && rho < 1.0)) throw ConfigError("rho must be in (-1, 1)");
  if (dim < 1) throw ConfigError("dim must be positive");
  if (hidden < 1 || train_steps < 0 || train_batch < 2) throw ConfigError("estimator settings must be positive");
  if (eval_batches < 1 || eval_batch < 2) throw ConfigError("evaluation needs batches of at least two samples");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
}

namespace {

void gaussian_pairs(double rho, int n, int dim, Rng& rng, Matrix& x, Matrix& y) {
  const double s = std::sqrt(1.0 - rho * rho);
  x.resize(n, dim);
  y.resize(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) {
      x(i, d) = rng.normal();
      y(i, d) = rho * x(i, d) + s * rng.normal();
    }
  }
}

}  // namespace

MiBenchResult run_mi_bench(const MiBenchConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  fusion::MiEstimator q(cfg.dim, cfg.dim, cfg.hidden, rng);
  const auto params = nn::param_list(q);
  Adam opt(AdamConfig{.learning_rate = cfg.learning_rate, .clip_norm = 0.0});
  Matrix x, y;
  for (int step = 0; step < cfg.train_steps; ++step) {
    // cosine decay to 10% keeps the final fit from jittering
    const double progress = static_cast<double>(step) / cfg.train_steps;
    opt.set_learning_rate(cfg.learning_rate * (0.1 + 0.45 * (1.0 + std::cos(M_PI * progress))));
    gaussian_pairs(cfg.rho, cfg.train_batch, cfg.dim, rng, x, y);
    ad::Graph g;
    const ad::Var ll = fusion::estimator_ll_graph(g, q, g.constant(x), g.constant(y));
    if (!std::isfinite(g.scalar(ll))) throw NumericError("estimator log-likelihood diverged at step " + std::to_string(step));
    g.backward(ad::scale(g, ll, -1.0));
    opt.step(params, g);
  }

  MiBenchResult r;
  r.analytic = -0.5 * cfg.dim * std::log(1.0 - cfg.rho * cfg.rho);
  r.true_ll = -0.5 * cfg.dim * (std::log(2.0 * M_PI * (1.0 - cfg.rho * cfg.rho)) + 1.0);
  double sum = 0.0, sq = 0.0;
  for (int b = 0; b < cfg.eval_batches; ++b) {
    gaussian_pairs(cfg.rho, cfg.eval_batch, cfg.dim, rng, x, y);
    const double v = fusion::vclub(q, x, y);
    sum += v;
    sq += v * v;
    r.estimator_ll += fusion::estimator_log_likelihood(q, x, y) / cfg.eval_batches;
  }
  r.estimate = sum / cfg.eval_batches;
  r.estimate_sd = std::sqrt(std::max(0.0, sq / cfg.eval_batches - r.estimate * r.estimate));
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& gradcheck_targets() {
  static const std::vector<std::string> targets = {"focal", "vclub", "forward"};
  return targets;
}

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

Matrix random_labels(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return m;
}

GradCheckResult check_focal(Rng& rng) {
  Matrix logits = random_matrix(6, 5, rng) * 2.0;
  const Matrix labels = random_labels(6, 5, rng);
  return check_gradients({{"logits", &logits}}, [&](ad::Graph& g) {
    return ad::focal_loss(g, g.param(logits), labels, 2.0, 0.25);
  });
}

// Gradient of vclub with respect to both batches; estimator weights held fixed.
GradCheckResult check_vclub(Rng& rng) {
  fusion::MiEstimator q(4, 2, 8, rng);
  Matrix x = random_matrix(4, 4, rng), y = random_matrix(4, 2, rng);
  return check_gradients({{"x", &x}, {"y", &y}}, [&](ad::Graph& g) {
    for (Matrix* p : nn::param_list(q)) g.freeze(*p);
    const auto o = q(g, g.param(x));
    return ad::vclub(g, o.mu, o.logvar, g.param(y));
  });
}

// Every trainable array of a small fusion model under focal + lambda * vclub.
GradCheckResult check_forward(Rng& rng) {
  fusion::FusionConfig fc;
  fc.d_model = 4;
  fc.heads = 2;
  fc.b_tokens = 6;
  fc.num_labels = 3;
  fc.estimator_hidden = 6;
  fc.dense_hidden = 5;
  train::FusionModel model(fc, 3, 2, 0, rng);
  fusion::MiEstimator q(2 * fc.d_model, fc.d_model, fc.estimator_hidden, rng);

  train::FeatureSet f;
  f.samples = 4;
  f.text_slots = fc.a_tokens;
  f.d_text = 3;
  f.lab_tokens = fc.b_tokens;
  f.d_lab = 2;
  f.text = random_matrix(f.samples * f.text_slots, f.d_text, rng);
  f.lab = random_matrix(f.samples * f.lab_tokens, f.d_lab, rng);
  for (int r = 0; r < f.samples * f.text_slots; ++r) f.text_valid.push_back(rng.bernoulli(0.7) || r % 5 == 0);
  for (int r = 0; r < f.samples * f.lab_tokens; ++r) f.lab_valid.push_back(rng.bernoulli(0.6) || r % 6 == 0);
  for (int r = 0; r < f.samples * f.text_slots; ++r)
    if (!f.text_valid[r]) f.text.row(r).setZero();
  for (int r = 0; r < f.samples * f.lab_tokens; ++r)
    if (!f.lab_valid[r]) f.lab.row(r).setZero();
  f.labels = random_labels(f.samples, fc.num_labels, rng);
  const std::vector<int> rows = {0, 1, 2, 3};

  return check_gradients(named_params(model, "model"), [&](ad::Graph& g) {
    for (Matrix* p : nn::param_list(q)) g.freeze(*p);
    const auto out = train::forward_model(g, model, f, rows);
    return fusion::final_loss_graph(g, model.fusion, q, out, f.labels);
  });
}

}  // namespace

GradCheckResult run_gradcheck(const std::string& target, std::uint64_t seed) {
  Rng rng(seed);
  if (target == "focal") return check_focal(rng);
  if (target == "vclub") return check_vclub(rng);
  if (target == "forward") return check_forward(rng);
  throw ConfigError("unknown gradcheck target '" + target + "' (expected focal, vclub or forward)");
}

}  // namespace medfuse
