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

#include "medfuse/optim.hpp"

#include <cmath>

#include "medfuse/errors.hpp"

namespace medfuse {

void round_to_float(ad::Matrix& m) { m = m.cast<float>().cast<double>(); }

void Adam::step(const std::vector<ad::Matrix*>& params, const ad::Graph& graph) {
  std::vector<ad::Matrix> grads;
  grads.reserve(params.size());
  for (const ad::Matrix* p : params) grads.push_back(graph.param_grad(*p));
  step(params, grads);
}

void Adam::step(const std::vector<ad::Matrix*>& params, const std::vector<ad::Matrix>& grads) {
  require(params.size() == grads.size(), "Adam::step: params/grads count mismatch");
  if (m_.empty()) {
    for (const ad::Matrix* p : params) {
      m_.push_back(ad::Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(ad::Matrix::Zero(p->rows(), p->cols()));
    }
  }
  require(m_.size() == params.size(), "Adam::step: parameter set changed between steps");

  double clip = 1.0;
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& gr : grads) sq += gr.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::Matrix gr = grads[i] * clip;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * gr;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * gr.cwiseProduct(gr);
    const auto mhat = m_[i].array() / bc1;
    const auto vhat = v_[i].array() / bc2;
    *params[i] -= (config_.learning_rate * mhat / (vhat.sqrt() + config_.epsilon)).matrix();
    round_to_float(*params[i]);
  }
}

void Adam::restore(long long steps, std::vector<ad::Matrix> m, std::vector<ad::Matrix> v) {
  require(m.size() == v.size(), "Adam::restore: moment count mismatch");
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace medfuse
