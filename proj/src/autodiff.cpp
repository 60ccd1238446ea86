/*
 * Copyright 2026 The nerve Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "nerve/autodiff.hpp"

#include <cmath>
#include <memory>

#include "nerve/error.hpp"

namespace nerve::nn {

namespace {

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

std::string shapes(const Tensor& a, const Tensor& b) {
  return a.shape_string() + " vs " + b.shape_string();
}

}  // namespace

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, {}, nullptr, false});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Parameter& p) {
  nodes_.push_back({p.value, {}, {}, &p, record_});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::make(Tensor value, std::span<const Var> inputs, Backward fn) {
  bool rg = false;
  if (record_)
    for (const Var& v : inputs) rg = rg || nodes_.at(v.id).requires_grad;
  nodes_.push_back({std::move(value), {}, rg ? std::move(fn) : Backward{}, nullptr, rg});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::make(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
  return make(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Tensor& Graph::grad(int id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::accumulate(Var v, const Tensor& g) {
  if (!nodes_[v.id].requires_grad) return;
  grad(v.id).mat() += g.mat();
}

void Graph::backward(Var loss, double seed) {
  if (!record_) throw NumericError("backward on a graph built without recording");
  if (loss.graph != this || loss.id < 0 || loss.id >= static_cast<int>(nodes_.size()))
    throw NumericError("backward without a recorded forward pass");
  if (backward_done_) throw NumericError("backward called twice on the same graph");
  if (nodes_[loss.id].value.size() != 1) throw NumericError("backward needs a scalar loss");
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] = seed;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param) {
      n.param->grad.mat() += n.grad.mat();
    } else if (n.backward) {
      // No nodes are appended during the sweep, so references into nodes_ hold.
      n.backward(*this, n.grad);
    }
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.cols() == B.rows(), "matmul", shapes(A, B));
  Tensor out(A.rows(), B.cols());
  out.mat().noalias() = A.mat() * B.mat();
  return a.graph->make(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& d) {
    if (g.requires_grad(a)) g.grad(a).mat().noalias() += d.mat() * g.value(b).mat().transpose();
    if (g.requires_grad(b)) g.grad(b).mat().noalias() += g.value(a).mat().transpose() * d.mat();
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  Tensor out(A.cols(), A.rows());
  out.mat() = A.mat().transpose();
  return a.graph->make(std::move(out), {a}, [a](Graph& g, const Tensor& d) {
    g.grad(a).mat() += d.mat().transpose();
  });
}

Var add(Var a, Var b) {
  require(a.value().same_shape(b.value()), "add", shapes(a.value(), b.value()));
  Tensor out = a.value();
  out.mat() += b.value().mat();
  return a.graph->make(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& d) {
    g.accumulate(a, d);
    g.accumulate(b, d);
  });
}

Var sub(Var a, Var b) {
  require(a.value().same_shape(b.value()), "sub", shapes(a.value(), b.value()));
  Tensor out = a.value();
  out.mat() -= b.value().mat();
  return a.graph->make(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& d) {
    g.accumulate(a, d);
    if (g.requires_grad(b)) g.grad(b).mat() -= d.mat();
  });
}

Var mul(Var a, Var b) {
  require(a.value().same_shape(b.value()), "mul", shapes(a.value(), b.value()));
  Tensor out = a.value();
  out.mat().array() *= b.value().mat().array();
  return a.graph->make(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& d) {
    if (g.requires_grad(a)) g.grad(a).mat().array() += d.mat().array() * g.value(b).mat().array();
    if (g.requires_grad(b)) g.grad(b).mat().array() += d.mat().array() * g.value(a).mat().array();
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  out.mat() *= s;
  return a.graph->make(std::move(out), {a}, [a, s](Graph& g, const Tensor& d) {
    g.grad(a).mat() += s * d.mat();
  });
}

Var add_row(Var a, Var row) {
  const Tensor& A = a.value();
  const Tensor& r = row.value();
  require(r.rows() == 1 && r.cols() == A.cols(), "add_row", shapes(A, r));
  Tensor out = A;
  out.mat().rowwise() += r.mat().row(0);
  return a.graph->make(std::move(out), {a, row}, [a, row](Graph& g, const Tensor& d) {
    g.accumulate(a, d);
    if (g.requires_grad(row)) g.grad(row).mat() += d.mat().colwise().sum();
  });
}

Var mul_row(Var a, Var row) {
  const Tensor& A = a.value();
  const Tensor& r = row.value();
  require(r.rows() == 1 && r.cols() == A.cols(), "mul_row", shapes(A, r));
  Tensor out = A;
  out.mat().array().rowwise() *= r.mat().row(0).array();
  return a.graph->make(std::move(out), {a, row}, [a, row](Graph& g, const Tensor& d) {
    const auto& rv = g.value(row).mat();
    if (g.requires_grad(a)) g.grad(a).mat().array() += d.mat().array().rowwise() * rv.row(0).array();
    if (g.requires_grad(row))
      g.grad(row).mat() += (d.mat().array() * g.value(a).mat().array()).matrix().colwise().sum();
  });
}

Var sum_all(Var a) {
  Tensor out = Tensor::scalar(a.value().mat().sum());
  return a.graph->make(std::move(out), {a}, [a](Graph& g, const Tensor& d) {
    g.grad(a).mat().array() += d[0];
  });
}

Var sum_rows(Var a) {
  const Tensor& A = a.value();
  Tensor out(1, A.cols());
  out.mat() = A.mat().colwise().sum();
  return a.graph->make(std::move(out), {a}, [a](Graph& g, const Tensor& d) {
    g.grad(a).mat().rowwise() += d.mat().row(0);
  });
}

Var mean_rows(Var a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows())); }

Var sum_squares(Var a) {
  Tensor out = Tensor::scalar(a.value().mat().squaredNorm());
  return a.graph->make(std::move(out), {a}, [a](Graph& g, const Tensor& d) {
    g.grad(a).mat() += (2.0 * d[0]) * g.value(a).mat();
  });
}

Var mse(Var a, Var b) {
  return scale(sum_squares(sub(a, b)), 1.0 / static_cast<double>(a.value().size()));
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = x.value();
  const std::size_t n = X.rows(), c = X.cols();
  require(gamma.value().rows() == 1 && gamma.value().cols() == c, "layer_norm", "gamma width");
  require(beta.value().rows() == 1 && beta.value().cols() == c, "layer_norm", "beta width");
  auto xhat = std::make_shared<Tensor>(n, c);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  Tensor out(n, c);
  const auto G = gamma.value().mat();
  const auto B = beta.value().mat();
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = X.mat().row(i);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    xhat->mat().row(i) = (row.array() - mu) * is;
    out.mat().row(i) = xhat->mat().row(i).array() * G.row(0).array() + B.row(0).array();
  }
  return x.graph->make(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, xhat, inv_std](Graph& g, const Tensor& d) {
    const auto D = d.mat();
    const auto XH = xhat->mat();
    if (g.requires_grad(gamma)) g.grad(gamma).mat() += (D.array() * XH.array()).matrix().colwise().sum();
    if (g.requires_grad(beta)) g.grad(beta).mat() += D.colwise().sum();
    if (!g.requires_grad(x)) return;
    const auto G = g.value(gamma).mat();
    auto GX = g.grad(x).mat();
    for (Eigen::Index i = 0; i < D.rows(); ++i) {
      Eigen::RowVectorXd dxh = D.row(i).array() * G.row(0).array();
      const double m1 = dxh.mean();
      const double m2 = (dxh.array() * XH.row(i).array()).mean();
      GX.row(i).array() += (*inv_std)[i] * (dxh.array() - m1 - XH.row(i).array() * m2);
    }
  });
}

Var layer_norm(Var x, double eps) {
  Graph& g = *x.graph;
  const std::size_t c = x.cols();
  return layer_norm(x, g.constant(Tensor(1, c, 1.0)), g.constant(Tensor(1, c, 0.0)), eps);
}

Var gelu(Var x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  Tensor out = x.value();
  for (double& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return x.graph->make(std::move(out), {x}, [x](Graph& g, const Tensor& d) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const Tensor& X = g.value(x);
    Tensor& gx = g.grad(x);
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double v = X[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += d[i] * (cdf + v * pdf);
    }
  });
}

namespace {

void softmax_in_place(Eigen::Ref<Matrix> m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

// dS = P * (dP - rowsum(dP * P))
Matrix softmax_backward(const Matrix& P, const Matrix& dP) {
  Eigen::VectorXd dots = (dP.array() * P.array()).rowwise().sum();
  return (P.array() * (dP.array().colwise() - dots.array())).matrix();
}

}  // namespace

Var softmax_rows(Var x) {
  Tensor out = x.value();
  softmax_in_place(out.mat());
  auto y = std::make_shared<Matrix>(out.mat());
  return x.graph->make(std::move(out), {x}, [x, y](Graph& g, const Tensor& d) {
    g.grad(x).mat() += softmax_backward(*y, d.mat());
  });
}

Var attention(Var q, Var k, Var v, int heads) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  require(Q.same_shape(K) && Q.same_shape(V), "attention", "q, k, v must share a shape");
  const auto d = static_cast<Eigen::Index>(Q.cols());
  require(heads >= 1 && d % heads == 0, "attention", "head count must divide the width");
  const Eigen::Index dh = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<Matrix>>(heads);
  Tensor out(Q.rows(), Q.cols());
  for (int h = 0; h < heads; ++h) {
    const auto Qh = Q.mat().middleCols(h * dh, dh);
    const auto Kh = K.mat().middleCols(h * dh, dh);
    Matrix P = s * (Qh * Kh.transpose());
    softmax_in_place(P);
    out.mat().middleCols(h * dh, dh).noalias() = P * V.mat().middleCols(h * dh, dh);
    (*probs)[h] = std::move(P);
  }
  return q.graph->make(std::move(out), {q, k, v},
                       [q, k, v, heads, dh, s, probs](Graph& g, const Tensor& dout) {
    const auto Q = g.value(q).mat();
    const auto K = g.value(k).mat();
    const auto V = g.value(v).mat();
    for (int h = 0; h < heads; ++h) {
      const Matrix& P = (*probs)[h];
      const auto dO = dout.mat().middleCols(h * dh, dh);
      if (g.requires_grad(v)) g.grad(v).mat().middleCols(h * dh, dh).noalias() += P.transpose() * dO;
      if (!g.requires_grad(q) && !g.requires_grad(k)) continue;
      const Matrix dP = dO * V.middleCols(h * dh, dh).transpose();
      const Matrix dS = s * softmax_backward(P, dP);
      if (g.requires_grad(q)) g.grad(q).mat().middleCols(h * dh, dh).noalias() += dS * K.middleCols(h * dh, dh);
      if (g.requires_grad(k))
        g.grad(k).mat().middleCols(h * dh, dh).noalias() += dS.transpose() * Q.middleCols(h * dh, dh);
    }
  });
}

Var gather_rows(Var a, std::vector<int> index) {
  const Tensor& A = a.value();
  require(!index.empty(), "gather_rows", "empty index");
  Tensor out(index.size(), A.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] >= 0 && static_cast<std::size_t>(index[r]) < A.rows(), "gather_rows", "row index out of range");
    out.mat().row(r) = A.mat().row(index[r]);
  }
  return a.graph->make(std::move(out), {a}, [a, index = std::move(index)](Graph& g, const Tensor& d) {
    auto ga = g.grad(a).mat();
    for (std::size_t r = 0; r < index.size(); ++r) ga.row(index[r]) += d.mat().row(r);
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == c, "concat_rows", "column counts differ");
    rows += p.rows();
  }
  Tensor out(rows, c);
  std::vector<Var> inputs(parts.begin(), parts.end());
  std::size_t at = 0;
  for (const Var& p : parts) {
    out.mat().middleRows(at, p.rows()) = p.value().mat();
    at += p.rows();
  }
  return parts[0].graph->make(std::move(out), parts, [inputs](Graph& g, const Tensor& d) {
    std::size_t at = 0;
    for (const Var& p : inputs) {
      const std::size_t r = g.value(p).rows();
      if (g.requires_grad(p)) g.grad(p).mat() += d.mat().middleRows(at, r);
      at += r;
    }
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Tensor& A = a.value();
  require(rows * cols == A.size(), "reshape", "element count changes");
  Tensor out(rows, cols);
  std::copy(A.values().begin(), A.values().end(), out.values().begin());
  return a.graph->make(std::move(out), {a}, [a](Graph& g, const Tensor& d) {
    Tensor& ga = g.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  require(begin < end && end <= A.cols(), "slice_cols", "column range out of bounds");
  Tensor out(A.rows(), end - begin);
  out.mat() = A.mat().middleCols(begin, end - begin);
  return a.graph->make(std::move(out), {a}, [a, begin, end](Graph& g, const Tensor& d) {
    g.grad(a).mat().middleCols(begin, end - begin) += d.mat();
  });
}

}  // namespace nerve::nn
