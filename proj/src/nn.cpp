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

#include "medfuse/nn.hpp"

#include <cmath>

#include "medfuse/errors.hpp"

namespace medfuse::nn {

Activation parse_activation(const std::string& name) {
  if (name == "gelu") return Activation::kGelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + name + "' (expected gelu|tanh|identity)");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kGelu: return "gelu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "gelu";
}

Var activate(Graph& g, Var x, Activation a) {
  switch (a) {
    case Activation::kGelu: return ad::gelu(g, x);
    case Activation::kTanh: return ad::tanh(g, x);
    case Activation::kIdentity: return x;
  }
  return x;
}

Linear::Linear(int in, int out, Rng& rng) : weight(in, out), bias(Matrix::Zero(1, out)) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (Eigen::Index i = 0; i < weight.rows(); ++i) {
    for (Eigen::Index j = 0; j < weight.cols(); ++j) weight(i, j) = rng.uniform(-bound, bound);
  }
}

Var Linear::operator()(Graph& g, Var x) const {
  return ad::linear(g, x, g.param(weight), g.param(bias));
}

LayerNorm::LayerNorm(int width) : gamma(Matrix::Ones(1, width)), beta(Matrix::Zero(1, width)) {}

Var LayerNorm::operator()(Graph& g, Var x) const {
  return ad::layer_norm(g, x, g.param(gamma), g.param(beta));
}

AttentionProjections::AttentionProjections(int width, Rng& rng)
    : query(width, width, rng), key(width, width, rng), value(width, width, rng), output(width, width, rng) {}

TransformerBlock::TransformerBlock(int width, int ff_width, Rng& rng)
    : norm1(width), attn(width, rng), norm2(width), ff1(width, ff_width, rng), ff2(ff_width, width, rng) {}

Var TransformerBlock::operator()(Graph& g, Var x, const ad::AttentionLayout& layout, int heads,
                                 ad::AttentionProbe* probe) const {
  const Var h = norm1(g, x);
  const Var mixed = ad::attention(g, attn.query(g, h), attn.key(g, h), attn.value(g, h), layout, heads, probe);
  const Var x1 = ad::add(g, x, attn.output(g, mixed));
  const Var h2 = norm2(g, x1);
  return ad::add(g, x1, ff2(g, ad::gelu(g, ff1(g, h2))));
}

std::vector<double> flatten(const std::vector<Matrix*>& params) {
  std::vector<double> flat;
  for (const Matrix* m : params) {
    for (Eigen::Index i = 0; i < m->rows(); ++i) {
      for (Eigen::Index j = 0; j < m->cols(); ++j) flat.push_back((*m)(i, j));
    }
  }
  return flat;
}

void unflatten(const std::vector<double>& flat, const std::vector<Matrix*>& params) {
  std::size_t k = 0;
  for (Matrix* m : params) {
    for (Eigen::Index i = 0; i < m->rows(); ++i) {
      for (Eigen::Index j = 0; j < m->cols(); ++j) {
        if (k >= flat.size()) throw ContractViolation("unflatten: vector too short");
        (*m)(i, j) = flat[k++];
      }
    }
  }
  if (k != flat.size()) throw ContractViolation("unflatten: vector too long");
}

}  // namespace medfuse::nn
