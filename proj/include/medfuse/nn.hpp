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

#include <string>
#include <vector>

#include "medfuse/autodiff.hpp"
#include "medfuse/rng.hpp"

namespace medfuse::nn {

using ad::Graph;
using ad::Matrix;
using ad::Var;

enum class Activation { kGelu, kTanh, kIdentity };

Activation parse_activation(const std::string& name);
std::string activation_name(Activation a);
Var activate(Graph& g, Var x, Activation a);

/// Affine map x * weight + bias; weight is in x out, bias is 1 x out.
struct Linear {
  Matrix weight;
  Matrix bias;

  Linear() = default;
  /// Uniform(-1/sqrt(in), 1/sqrt(in)) weights, zero bias.
  Linear(int in, int out, Rng& rng);

  int in() const { return static_cast<int>(weight.rows()); }
  int out() const { return static_cast<int>(weight.cols()); }
  Var operator()(Graph& g, Var x) const;
};

struct LayerNorm {
  Matrix gamma;
  Matrix beta;

  LayerNorm() = default;
  explicit LayerNorm(int width);
  Var operator()(Graph& g, Var x) const;
};

/// Query/key/value/output projections of one multi-head attention block.
struct AttentionProjections {
  Linear query, key, value, output;

  AttentionProjections() = default;
  AttentionProjections(int width, Rng& rng);
};

/// Pre-norm transformer block: x + attn(LN(x)), then x + FFN(LN(x)).
struct TransformerBlock {
  LayerNorm norm1;
  AttentionProjections attn;
  LayerNorm norm2;
  Linear ff1, ff2;

  TransformerBlock() = default;
  TransformerBlock(int width, int ff_width, Rng& rng);

  Var operator()(Graph& g, Var x, const ad::AttentionLayout& layout, int heads,
                 ad::AttentionProbe* probe = nullptr) const;
};

// Parameter visitation. `f(name, matrix)` is called once per trainable array
// in a fixed order; Self may be const or non-const.

template <class Self, class F>
void visit_params(Self& l, const std::string& prefix, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, Linear>
{
  f(prefix + ".weight", l.weight);
  f(prefix + ".bias", l.bias);
}

template <class Self, class F>
void visit_params(Self& l, const std::string& prefix, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, LayerNorm>
{
  f(prefix + ".gamma", l.gamma);
  f(prefix + ".beta", l.beta);
}

template <class Self, class F>
void visit_params(Self& a, const std::string& prefix, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, AttentionProjections>
{
  visit_params(a.query, prefix + ".query", f);
  visit_params(a.key, prefix + ".key", f);
  visit_params(a.value, prefix + ".value", f);
  visit_params(a.output, prefix + ".output", f);
}

template <class Self, class F>
void visit_params(Self& b, const std::string& prefix, F&& f)
  requires std::is_same_v<std::remove_const_t<Self>, TransformerBlock>
{
  visit_params(b.norm1, prefix + ".norm1", f);
  visit_params(b.attn, prefix + ".attn", f);
  visit_params(b.norm2, prefix + ".norm2", f);
  visit_params(b.ff1, prefix + ".ff1", f);
  visit_params(b.ff2, prefix + ".ff2", f);
}

/// Pointers to every parameter array of `module`, in visitation order.
template <class Module>
std::vector<Matrix*> param_list(Module& module) {
  std::vector<Matrix*> out;
  visit_params(module, std::string(), [&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

template <class Module>
std::size_t param_count(const Module& module) {
  std::size_t n = 0;
  visit_params(module, std::string(), [&](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

/// Flattens parameters into one vector (row-major within each array).
std::vector<double> flatten(const std::vector<Matrix*>& params);
void unflatten(const std::vector<double>& flat, const std::vector<Matrix*>& params);

}  // namespace medfuse::nn
