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

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Graph records every operation applied to its nodes. Rows are samples or
// tokens, columns are features. Parameters enter the graph through
// Graph::param(), which binds the node to the caller's matrix so that
// gradients can be looked up by address after backward().

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace medfuse::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Matrix& out_grad)>;

  /// With track_gradients = false no backward closures are stored and
  /// param() never marks nodes as trainable.
  explicit Graph(bool track_gradients = true) : track_(track_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  /// Leaf that receives a gradient (used for Jacobians w.r.t. inputs).
  Var input(Matrix value);
  /// Leaf bound to `p`; the same matrix always maps to the same node.
  /// `p` must outlive the graph.
  Var param(const Matrix& p);

  /// Subsequent param() calls on `p` yield non-trainable nodes.
  void freeze(const Matrix& p) { frozen_.insert(&p); }

  const Matrix& value(Var v) const;
  double scalar(Var v) const { return value(v)(0, 0); }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient of the last backward() target w.r.t. v (zeros if none flowed).
  Matrix grad(Var v) const;
  /// Gradient w.r.t. a bound parameter; zeros of p's shape if unused.
  Matrix param_grad(const Matrix& p) const;

  /// Back-propagates from a 1x1 node.
  void backward(Var out);
  /// Back-propagates from any node with an explicit seed gradient.
  void backward(Var out, const Matrix& seed);

  /// Registers an op result. `fn` receives the output gradient and must call
  /// accumulate() for each input that needs a gradient.
  Var make(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var make(Matrix value, const std::vector<Var>& inputs, BackwardFn fn);

  void accumulate(Var v, const Matrix& g);
  /// Adds into a subset of rows (scatter-add) without materialising a full matrix.
  Matrix& grad_buffer(Var v);

  std::size_t size() const { return nodes_.size(); }
  bool tracking() const { return track_; }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var push(Node node);

  bool track_;
  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, std::int32_t> param_ids_;
  std::unordered_set<const Matrix*> frozen_;
};

// ---------------------------------------------------------------------------
// Operations. All shapes are checked; mismatches throw ContractViolation.

Var matmul(Graph& g, Var a, Var b);
/// x * W + b, with W of shape in x out and b a 1 x out row.
Var linear(Graph& g, Var x, Var w, Var b);
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var hadamard(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
/// Adds a 1 x cols row to every row of a.
Var add_row(Graph& g, Var a, Var row);
/// Multiplies row i of a by the constant w[i].
Var scale_rows(Graph& g, Var a, const Vector& w);

Var gelu(Graph& g, Var a);
Var tanh(Graph& g, Var a);
/// bound * tanh(a / bound): a smooth clamp into (-bound, bound).
Var soft_clamp(Graph& g, Var a, double bound);

/// Row-wise layer normalisation with affine gamma/beta (1 x cols each).
Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps = 1e-5);

Var concat_cols(Graph& g, const std::vector<Var>& parts);
Var concat_rows(Graph& g, const std::vector<Var>& parts);
Var slice_cols(Graph& g, Var x, int start, int count);
Var gather_rows(Graph& g, Var x, const std::vector<int>& rows);

/// Output row k is the mean of x's rows listed in groups[k]; an empty group yields zeros.
Var group_mean(Graph& g, Var x, const std::vector<std::vector<int>>& groups);

/// Row-wise outer product: out(i, p * b.cols() + q) = a(i, p) * b(i, q).
Var row_outer(Graph& g, Var a, Var b);

/// Splits every row of x (n x k*cols) into k consecutive rows of width cols.
Var split_rows(Graph& g, Var x, int cols);

Var sum(Graph& g, Var x);
Var mean(Graph& g, Var x);

// ---------------------------------------------------------------------------
// Attention

/// One attention problem inside a stacked batch: `queries` attend over `keys`
/// (row indices into the query / key matrices). Only valid keys are listed.
struct AttentionGroup {
  std::vector<int> queries;
  std::vector<int> keys;
};
using AttentionLayout = std::vector<AttentionGroup>;

/// Softmax weights recorded per group and head: probs[group * heads + h].
struct AttentionProbe {
  std::vector<Matrix> probs;
};

/// Scaled dot-product multi-head attention. Query rows not covered by any
/// group, and groups with no keys, produce zero rows.
Var attention(Graph& g, Var q, Var k, Var v, const AttentionLayout& layout, int heads,
              AttentionProbe* probe = nullptr);

// ---------------------------------------------------------------------------
// Losses (all return 1 x 1)

/// Mean over every (sample, label) cell of the binary focal loss on sigmoid(logits).
Var focal_loss(Graph& g, Var logits, const Matrix& labels, double gamma, double alpha);

/// (1/N) sum_i log N(y_i; mu_i, diag(exp(logvar_i))).
Var gaussian_log_likelihood(Graph& g, Var mu, Var logvar, Var y);

/// Contrastive log-ratio bound for a diagonal-Gaussian conditional:
/// mean_i log q(y_i|x_i) - mean_{i,j} log q(y_j|x_i). The value is an O(N^2 d)
/// pairwise sum; the gradient uses the first two moments of y (O(N d)).
Var vclub(Graph& g, Var mu, Var logvar, Var y);

/// Mean over groups of the per-group mean squared error between pred and target rows.
Var grouped_mse(Graph& g, Var pred, const Matrix& target, const std::vector<std::vector<int>>& groups);

// Scalar helpers shared with loss evaluation outside a graph.
double gelu_value(double x);
double log_sigmoid(double x);

}  // namespace medfuse::ad
