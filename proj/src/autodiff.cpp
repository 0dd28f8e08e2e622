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

#include "medfuse/autodiff.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "medfuse/errors.hpp"

namespace medfuse::ad {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::input(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = track_;
  return push(std::move(n));
}

Var Graph::param(const Matrix& p) {
  auto it = param_ids_.find(&p);
  if (it != param_ids_.end()) return Var{it->second};
  Node n;
  n.external = &p;
  n.needs_grad = track_ && !frozen_.contains(&p);
  const Var v = push(std::move(n));
  param_ids_.emplace(&p, v.id);
  return v;
}

const Matrix& Graph::value(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  return n.external ? *n.external : n.value;
}

Matrix Graph::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (n.grad.size() == 0) {
    const Matrix& val = value(v);
    return Matrix::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

Matrix Graph::param_grad(const Matrix& p) const {
  auto it = param_ids_.find(&p);
  if (it == param_ids_.end()) return Matrix::Zero(p.rows(), p.cols());
  return grad(Var{it->second});
}

Var Graph::make(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return make(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Graph::make(Matrix value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (track_) {
    for (Var in : inputs) {
      if (nodes_[in.id].needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    if (n.needs_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

Matrix& Graph::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) {
    const Matrix& val = n.external ? *n.external : n.value;
    n.grad = Matrix::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

void Graph::accumulate(Var v, const Matrix& g) {
  if (!nodes_[v.id].needs_grad) return;
  Matrix& buf = grad_buffer(v);
  check_same_shape(buf, g, "accumulate");
  buf += g;
}

void Graph::backward(Var out) {
  const Matrix& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractViolation("backward: target must be 1x1, got " + shape(v));
  }
  backward(out, Matrix::Ones(1, 1));
}

void Graph::backward(Var out, const Matrix& seed) {
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[out.id].needs_grad) return;
  check_same_shape(value(out), seed, "backward seed");
  nodes_[out.id].grad = seed;
  for (std::int32_t i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n.grad);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

Var matmul(Graph& g, Var a, Var b) {
  const Matrix& A = g.value(a);
  const Matrix& B = g.value(b);
  if (A.cols() != B.rows()) throw ContractViolation("matmul: " + shape(A) + " * " + shape(B));
  return g.make(A * B, {a, b}, [a, b](Graph& g, const Matrix& G) {
    if (g.needs_grad(a)) g.grad_buffer(a).noalias() += G * g.value(b).transpose();
    if (g.needs_grad(b)) g.grad_buffer(b).noalias() += g.value(a).transpose() * G;
  });
}

Var linear(Graph& g, Var x, Var w, Var b) {
  const Matrix& X = g.value(x);
  const Matrix& W = g.value(w);
  const Matrix& B = g.value(b);
  if (X.cols() != W.rows() || B.rows() != 1 || B.cols() != W.cols()) {
    throw ContractViolation("linear: x " + shape(X) + ", w " + shape(W) + ", b " + shape(B));
  }
  Matrix out = X * W;
  out.rowwise() += B.row(0);
  return g.make(std::move(out), {x, w, b}, [x, w, b](Graph& g, const Matrix& G) {
    if (g.needs_grad(x)) g.grad_buffer(x).noalias() += G * g.value(w).transpose();
    if (g.needs_grad(w)) g.grad_buffer(w).noalias() += g.value(x).transpose() * G;
    if (g.needs_grad(b)) g.grad_buffer(b) += G.colwise().sum();
  });
}

Var add(Graph& g, Var a, Var b) {
  check_same_shape(g.value(a), g.value(b), "add");
  return g.make(g.value(a) + g.value(b), {a, b}, [a, b](Graph& g, const Matrix& G) {
    g.accumulate(a, G);
    g.accumulate(b, G);
  });
}

Var sub(Graph& g, Var a, Var b) {
  check_same_shape(g.value(a), g.value(b), "sub");
  return g.make(g.value(a) - g.value(b), {a, b}, [a, b](Graph& g, const Matrix& G) {
    g.accumulate(a, G);
    g.accumulate(b, -G);
  });
}

Var hadamard(Graph& g, Var a, Var b) {
  check_same_shape(g.value(a), g.value(b), "hadamard");
  return g.make(g.value(a).cwiseProduct(g.value(b)), {a, b}, [a, b](Graph& g, const Matrix& G) {
    if (g.needs_grad(a)) g.grad_buffer(a) += G.cwiseProduct(g.value(b));
    if (g.needs_grad(b)) g.grad_buffer(b) += G.cwiseProduct(g.value(a));
  });
}

Var scale(Graph& g, Var a, double s) {
  return g.make(g.value(a) * s, {a}, [a, s](Graph& g, const Matrix& G) { g.accumulate(a, G * s); });
}

Var add_row(Graph& g, Var a, Var row) {
  const Matrix& A = g.value(a);
  const Matrix& R = g.value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) {
    throw ContractViolation("add_row: " + shape(A) + " + " + shape(R));
  }
  Matrix out = A;
  out.rowwise() += R.row(0);
  return g.make(std::move(out), {a, row}, [a, row](Graph& g, const Matrix& G) {
    g.accumulate(a, G);
    if (g.needs_grad(row)) g.grad_buffer(row) += G.colwise().sum();
  });
}

Var scale_rows(Graph& g, Var a, const Vector& w) {
  const Matrix& A = g.value(a);
  if (w.size() != A.rows()) throw ContractViolation("scale_rows: weight length mismatch");
  Matrix out = w.asDiagonal() * A;
  return g.make(std::move(out), {a}, [a, w](Graph& g, const Matrix& G) {
    if (g.needs_grad(a)) g.grad_buffer(a) += w.asDiagonal() * G;
  });
}

double gelu_value(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

namespace {
double gelu_derivative(double x) {
  constexpr double k = 0.7978845608028654;
  const double u = k * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}
}  // namespace

Var gelu(Graph& g, Var a) {
  const Matrix& A = g.value(a);
  Matrix out = A.unaryExpr([](double x) { return gelu_value(x); });
  return g.make(std::move(out), {a}, [a](Graph& g, const Matrix& G) {
    if (!g.needs_grad(a)) return;
    g.grad_buffer(a) += G.cwiseProduct(g.value(a).unaryExpr([](double x) { return gelu_derivative(x); }));
  });
}

Var tanh(Graph& g, Var a) {
  Matrix out = g.value(a).array().tanh().matrix();
  auto t = std::make_shared<Matrix>(out);
  return g.make(std::move(out), {a}, [a, t](Graph& g, const Matrix& G) {
    if (!g.needs_grad(a)) return;
    g.grad_buffer(a) += G.cwiseProduct((1.0 - t->array().square()).matrix());
  });
}

Var soft_clamp(Graph& g, Var a, double bound) {
  Matrix t = (g.value(a).array() / bound).tanh().matrix();
  Matrix out = t * bound;
  auto tp = std::make_shared<Matrix>(std::move(t));
  return g.make(std::move(out), {a}, [a, tp](Graph& g, const Matrix& G) {
    if (!g.needs_grad(a)) return;
    g.grad_buffer(a) += G.cwiseProduct((1.0 - tp->array().square()).matrix());
  });
}

Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps) {
  const Matrix& X = g.value(x);
  const Matrix& Ga = g.value(gamma);
  const Matrix& Be = g.value(beta);
  if (Ga.rows() != 1 || Ga.cols() != X.cols() || Be.rows() != 1 || Be.cols() != X.cols()) {
    throw ContractViolation("layer_norm: gamma/beta must be 1x" + std::to_string(X.cols()));
  }
  const Eigen::Index n = X.rows();
  const double cols = static_cast<double>(X.cols());
  auto xhat = std::make_shared<Matrix>(X.rows(), X.cols());
  auto inv_std = std::make_shared<Vector>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = X.row(i).mean();
    const double var = (X.row(i).array() - mu).square().sum() / cols;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(i) = is;
    xhat->row(i) = (X.row(i).array() - mu) * is;
  }
  Matrix out = xhat->array().rowwise() * Ga.row(0).array();
  out.rowwise() += Be.row(0);
  return g.make(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std](Graph& g, const Matrix& G) {
    if (g.needs_grad(gamma)) g.grad_buffer(gamma) += G.cwiseProduct(*xhat).colwise().sum();
    if (g.needs_grad(beta)) g.grad_buffer(beta) += G.colwise().sum();
    if (g.needs_grad(x)) {
      const Matrix dxhat = G.array().rowwise() * g.value(gamma).row(0).array();
      Matrix& dx = g.grad_buffer(x);
      for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = dxhat.row(i).cwiseProduct(xhat->row(i)).mean();
        dx.row(i).array() += (*inv_std)(i) * (dxhat.row(i).array() - m1 - xhat->row(i).array() * m2);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var concat_cols(Graph& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
  const Eigen::Index rows = g.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    if (g.value(p).rows() != rows) throw ContractViolation("concat_cols: row count mismatch");
    cols += g.value(p).cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    out.middleCols(c, g.value(p).cols()) = g.value(p);
    c += g.value(p).cols();
  }
  return g.make(std::move(out), parts, [parts](Graph& g, const Matrix& G) {
    Eigen::Index c = 0;
    for (Var p : parts) {
      const Eigen::Index w = g.value(p).cols();
      if (g.needs_grad(p)) g.grad_buffer(p) += G.middleCols(c, w);
      c += w;
    }
  });
}

Var concat_rows(Graph& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractViolation("concat_rows: no inputs");
  const Eigen::Index cols = g.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (Var p : parts) {
    if (g.value(p).cols() != cols) throw ContractViolation("concat_rows: column count mismatch");
    rows += g.value(p).rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, g.value(p).rows()) = g.value(p);
    r += g.value(p).rows();
  }
  return g.make(std::move(out), parts, [parts](Graph& g, const Matrix& G) {
    Eigen::Index r = 0;
    for (Var p : parts) {
      const Eigen::Index h = g.value(p).rows();
      if (g.needs_grad(p)) g.grad_buffer(p) += G.middleRows(r, h);
      r += h;
    }
  });
}

Var slice_cols(Graph& g, Var x, int start, int count) {
  const Matrix& X = g.value(x);
  if (start < 0 || count < 0 || start + count > X.cols()) throw ContractViolation("slice_cols: out of range");
  return g.make(X.middleCols(start, count), {x}, [x, start, count](Graph& g, const Matrix& G) {
    if (g.needs_grad(x)) g.grad_buffer(x).middleCols(start, count) += G;
  });
}

Var gather_rows(Graph& g, Var x, const std::vector<int>& rows) {
  const Matrix& X = g.value(x);
  Matrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= X.rows()) throw ContractViolation("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
  }
  return g.make(std::move(out), {x}, [x, rows](Graph& g, const Matrix& G) {
    if (!g.needs_grad(x)) return;
    Matrix& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += G.row(static_cast<Eigen::Index>(i));
  });
}

Var group_mean(Graph& g, Var x, const std::vector<std::vector<int>>& groups) {
  const Matrix& X = g.value(x);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(groups.size()), X.cols());
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].empty()) continue;
    for (int r : groups[k]) {
      if (r < 0 || r >= X.rows()) throw ContractViolation("group_mean: index out of range");
      out.row(static_cast<Eigen::Index>(k)) += X.row(r);
    }
    out.row(static_cast<Eigen::Index>(k)) /= static_cast<double>(groups[k].size());
  }
  return g.make(std::move(out), {x}, [x, groups](Graph& g, const Matrix& G) {
    if (!g.needs_grad(x)) return;
    Matrix& dx = g.grad_buffer(x);
    for (std::size_t k = 0; k < groups.size(); ++k) {
      if (groups[k].empty()) continue;
      const double w = 1.0 / static_cast<double>(groups[k].size());
      for (int r : groups[k]) dx.row(r) += w * G.row(static_cast<Eigen::Index>(k));
    }
  });
}

Var row_outer(Graph& g, Var a, Var b) {
  const Matrix& A = g.value(a);
  const Matrix& B = g.value(b);
  if (A.rows() != B.rows()) throw ContractViolation("row_outer: row count mismatch");
  const Eigen::Index na = A.cols();
  const Eigen::Index nb = B.cols();
  Matrix out(A.rows(), na * nb);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index p = 0; p < na; ++p) {
      out.row(i).segment(p * nb, nb) = A(i, p) * B.row(i);
    }
  }
  return g.make(std::move(out), {a, b}, [a, b, na, nb](Graph& g, const Matrix& G) {
    const Matrix& A = g.value(a);
    const Matrix& B = g.value(b);
    const bool ga = g.needs_grad(a);
    const bool gb = g.needs_grad(b);
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      for (Eigen::Index p = 0; p < na; ++p) {
        const auto seg = G.row(i).segment(p * nb, nb);
        if (ga) g.grad_buffer(a)(i, p) += seg.dot(B.row(i));
        if (gb) g.grad_buffer(b).row(i) += A(i, p) * seg;
      }
    }
  });
}

Var split_rows(Graph& g, Var x, int cols) {
  const Matrix& X = g.value(x);
  if (cols <= 0 || X.cols() % cols != 0) throw ContractViolation("split_rows: width not divisible");
  const Eigen::Index k = X.cols() / cols;
  Matrix out(X.rows() * k, cols);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index r = 0; r < k; ++r) out.row(i * k + r) = X.row(i).segment(r * cols, cols);
  }
  return g.make(std::move(out), {x}, [x, cols, k](Graph& g, const Matrix& G) {
    if (!g.needs_grad(x)) return;
    Matrix& dx = g.grad_buffer(x);
    for (Eigen::Index i = 0; i < dx.rows(); ++i) {
      for (Eigen::Index r = 0; r < k; ++r) dx.row(i).segment(r * cols, cols) += G.row(i * k + r);
    }
  });
}

Var sum(Graph& g, Var x) {
  Matrix out(1, 1);
  out(0, 0) = g.value(x).sum();
  return g.make(std::move(out), {x}, [x](Graph& g, const Matrix& G) {
    if (g.needs_grad(x)) g.grad_buffer(x).array() += G(0, 0);
  });
}

Var mean(Graph& g, Var x) {
  const double n = static_cast<double>(g.value(x).size());
  if (n == 0) throw ContractViolation("mean: empty input");
  Matrix out(1, 1);
  out(0, 0) = g.value(x).sum() / n;
  return g.make(std::move(out), {x}, [x, n](Graph& g, const Matrix& G) {
    if (g.needs_grad(x)) g.grad_buffer(x).array() += G(0, 0) / n;
  });
}

// ---------------------------------------------------------------------------
// Attention

Var attention(Graph& g, Var q, Var k, Var v, const AttentionLayout& layout, int heads, AttentionProbe* probe) {
  const Matrix& Q = g.value(q);
  const Matrix& K = g.value(k);
  const Matrix& V = g.value(v);
  if (Q.cols() != K.cols() || K.rows() != V.rows() || V.cols() != Q.cols()) {
    throw ContractViolation("attention: q " + shape(Q) + ", k " + shape(K) + ", v " + shape(V));
  }
  if (heads <= 0 || Q.cols() % heads != 0) throw ContractViolation("attention: width not divisible by heads");
  const int dh = static_cast<int>(Q.cols()) / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix out = Matrix::Zero(Q.rows(), V.cols());
  auto probs = std::make_shared<std::vector<Matrix>>(layout.size() * heads);
  for (std::size_t gi = 0; gi < layout.size(); ++gi) {
    const auto& grp = layout[gi];
    if (grp.queries.empty() || grp.keys.empty()) continue;
    for (int h = 0; h < heads; ++h) {
      const auto cols = Eigen::seqN(h * dh, dh);
      const Matrix qh = Q(grp.queries, cols);
      const Matrix kh = K(grp.keys, cols);
      Matrix s = (qh * kh.transpose()) * scl;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
      }
      out(grp.queries, cols) = s * V(grp.keys, cols);
      (*probs)[gi * heads + h] = std::move(s);
    }
  }
  if (probe) probe->probs = *probs;
  return g.make(std::move(out), {q, k, v}, [q, k, v, layout, heads, dh, scl, probs](Graph& g, const Matrix& G) {
    const Matrix& Q = g.value(q);
    const Matrix& K = g.value(k);
    const Matrix& V = g.value(v);
    const bool gq = g.needs_grad(q), gk = g.needs_grad(k), gv = g.needs_grad(v);
    for (std::size_t gi = 0; gi < layout.size(); ++gi) {
      const auto& grp = layout[gi];
      if (grp.queries.empty() || grp.keys.empty()) continue;
      for (int h = 0; h < heads; ++h) {
        const auto cols = Eigen::seqN(h * dh, dh);
        const Matrix& P = (*probs)[gi * heads + h];
        const Matrix dO = G(grp.queries, cols);
        if (gv) g.grad_buffer(v)(grp.keys, cols) += P.transpose() * dO;
        if (!gq && !gk) continue;
        const Matrix dP = dO * V(grp.keys, cols).transpose();
        Matrix dS = P.cwiseProduct(dP);
        const Vector rs = dS.rowwise().sum();
        dS -= P.cwiseProduct(rs.replicate(1, P.cols()));
        dS *= scl;
        if (gq) g.grad_buffer(q)(grp.queries, cols) += dS * K(grp.keys, cols);
        if (gk) g.grad_buffer(k)(grp.keys, cols) += dS.transpose() * Q(grp.queries, cols);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

double log_sigmoid(double x) {
  return x < 0.0 ? x - std::log1p(std::exp(x)) : -std::log1p(std::exp(-x));
}

Var focal_loss(Graph& g, Var logits, const Matrix& labels, double gamma, double alpha) {
  const Matrix& Z = g.value(logits);
  check_same_shape(Z, labels, "focal_loss");
  const double count = static_cast<double>(Z.size());
  if (count == 0) throw ContractViolation("focal_loss: empty input");
  double total = 0.0;
  Matrix dz(Z.rows(), Z.cols());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    for (Eigen::Index j = 0; j < Z.cols(); ++j) {
      const bool pos = labels(i, j) > 0.5;
      const double s = pos ? 1.0 : -1.0;
      const double at = pos ? alpha : 1.0 - alpha;
      const double log_pt = log_sigmoid(s * Z(i, j));
      const double pt = std::exp(log_pt);
      const double one_minus = std::exp(log_sigmoid(-s * Z(i, j)));
      const double mod = std::pow(one_minus, gamma);
      total += -at * mod * log_pt;
      dz(i, j) = -at * s * mod * (one_minus - gamma * pt * log_pt) / count;
    }
  }
  Matrix out(1, 1);
  out(0, 0) = total / count;
  auto dzp = std::make_shared<Matrix>(std::move(dz));
  return g.make(std::move(out), {logits}, [logits, dzp](Graph& g, const Matrix& G) {
    if (g.needs_grad(logits)) g.grad_buffer(logits) += G(0, 0) * *dzp;
  });
}

Var gaussian_log_likelihood(Graph& g, Var mu, Var logvar, Var y) {
  const Matrix& M = g.value(mu);
  const Matrix& LV = g.value(logvar);
  const Matrix& Y = g.value(y);
  check_same_shape(M, LV, "gaussian_log_likelihood");
  check_same_shape(M, Y, "gaussian_log_likelihood");
  const double n = static_cast<double>(M.rows());
  if (n == 0) throw ContractViolation("gaussian_log_likelihood: empty batch");
  const Matrix prec = (-LV.array()).exp().matrix();
  const Matrix diff = Y - M;
  const double total = (-0.5 * kLog2Pi - 0.5 * LV.array() - 0.5 * diff.array().square() * prec.array()).sum();
  Matrix out(1, 1);
  out(0, 0) = total / n;
  return g.make(std::move(out), {mu, logvar, y}, [mu, logvar, y, n](Graph& g, const Matrix& G) {
    const Matrix prec = (-g.value(logvar).array()).exp().matrix();
    const Matrix diff = g.value(y) - g.value(mu);
    const double s = G(0, 0) / n;
    const Matrix dmu = s * diff.cwiseProduct(prec);
    if (g.needs_grad(mu)) g.grad_buffer(mu) += dmu;
    if (g.needs_grad(y)) g.grad_buffer(y) -= dmu;
    if (g.needs_grad(logvar)) {
      g.grad_buffer(logvar) += s * (-0.5 + 0.5 * diff.array().square() * prec.array()).matrix();
    }
  });
}

Var vclub(Graph& g, Var mu, Var logvar, Var y) {
  const Matrix& M = g.value(mu);
  const Matrix& LV = g.value(logvar);
  const Matrix& Y = g.value(y);
  check_same_shape(M, LV, "vclub");
  check_same_shape(M, Y, "vclub");
  const Eigen::Index n = M.rows();
  if (n == 0) throw ContractViolation("vclub: empty batch");
  const double nd = static_cast<double>(n);
  // gradients use w_id = exp(-lv_id) / (2N) and the first two moments of y
  const Matrix w = ((-LV.array()).exp() / (2.0 * nd)).matrix();
  const RowVector m1 = Y.colwise().mean();
  const RowVector m2 = Y.array().square().colwise().mean().matrix();
  Matrix cross = M.array().square().matrix();
  cross -= 2.0 * M.cwiseProduct(m1.replicate(n, 1));
  cross.rowwise() += m2;
  const Matrix own = (Y - M).array().square().matrix();
  const Matrix gap = cross - own;
  // The value is summed over unordered pairs so that the (i, j) and (j, i)
  // terms cancel exactly when rows i and j share a conditional, which makes
  // N = 1 and identical-x batches come out as exactly zero.
  const Matrix h = ((-LV.array()).exp() * 0.5).matrix();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      for (Eigen::Index d = 0; d < M.cols(); ++d) {
        const double own_i = (Y(i, d) - M(i, d)) * (Y(i, d) - M(i, d));
        const double own_j = (Y(j, d) - M(j, d)) * (Y(j, d) - M(j, d));
        const double ij = (Y(j, d) - M(i, d)) * (Y(j, d) - M(i, d));
        const double ji = (Y(i, d) - M(j, d)) * (Y(i, d) - M(j, d));
        total += h(i, d) * (ij - own_i) + h(j, d) * (ji - own_j);
      }
    }
  }
  Matrix out(1, 1);
  out(0, 0) = total / (nd * nd);
  return g.make(std::move(out), {mu, logvar, y}, [mu, logvar, y, n, nd, w, m1, gap](Graph& g, const Matrix& G) {
    const double s = G(0, 0);
    const Matrix& M = g.value(mu);
    const Matrix& Y = g.value(y);
    if (g.needs_grad(logvar)) g.grad_buffer(logvar) -= s * w.cwiseProduct(gap);
    if (g.needs_grad(mu)) g.grad_buffer(mu) += (2.0 * s) * w.cwiseProduct(Y - m1.replicate(n, 1));
    if (g.needs_grad(y)) {
      const RowVector wsum = w.colwise().sum();
      const RowVector wmu = w.cwiseProduct(M).colwise().sum();
      Matrix dy = Y.array().rowwise() * wsum.array();
      dy.rowwise() -= wmu;
      dy *= 2.0 / nd;
      dy -= 2.0 * w.cwiseProduct(Y - M);
      g.grad_buffer(y) += s * dy;
    }
  });
}

Var grouped_mse(Graph& g, Var pred, const Matrix& target, const std::vector<std::vector<int>>& groups) {
  const Matrix& P = g.value(pred);
  check_same_shape(P, target, "grouped_mse");
  std::size_t nonempty = 0;
  for (const auto& grp : groups) nonempty += grp.empty() ? 0 : 1;
  if (nonempty == 0) throw ContractViolation("grouped_mse: no non-empty groups");
  const double ng = static_cast<double>(nonempty);
  double total = 0.0;
  Matrix dp = Matrix::Zero(P.rows(), P.cols());
  for (const auto& grp : groups) {
    if (grp.empty()) continue;
    const double cells = static_cast<double>(grp.size() * P.cols());
    double acc = 0.0;
    for (int r : grp) {
      const RowVector diff = P.row(r) - target.row(r);
      acc += diff.squaredNorm();
      dp.row(r) += 2.0 * diff / (cells * ng);
    }
    total += acc / cells;
  }
  Matrix out(1, 1);
  out(0, 0) = total / ng;
  auto dpp = std::make_shared<Matrix>(std::move(dp));
  return g.make(std::move(out), {pred}, [pred, dpp](Graph& g, const Matrix& G) {
    if (g.needs_grad(pred)) g.grad_buffer(pred) += G(0, 0) * *dpp;
  });
}

}  // namespace medfuse::ad
