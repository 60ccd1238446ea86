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

#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "nerve/tensor.hpp"

namespace nerve::nn {

class Graph;

/// Handle to a node recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so walking the tape
/// backwards visits every node after all of its consumers.
class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor& out_grad)>;

  /// With `record = false` no backward closures are kept (inference only).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool recording() const { return record_; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Appends an op output. `fn` is dropped when no input requires a gradient.
  Var make(Tensor value, std::initializer_list<Var> inputs, Backward fn);
  Var make(Tensor value, std::span<const Var> inputs, Backward fn);

  /// Gradient slot of a node, zero-initialized on first access.
  Tensor& grad(int id);
  Tensor& grad(Var v) { return grad(v.id); }
  /// Accumulates into `v`'s gradient if it participates in differentiation.
  void accumulate(Var v, const Tensor& g);

  /// Propagates d(loss)/d(node) through the tape and adds parameter gradients
  /// (times `seed`) into each Parameter::grad. `loss` must be a 1 x 1 node.
  void backward(Var loss, double seed = 1.0);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool record_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable ops. All operate on rank-2 tensors.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a + row, with `row` (1 x c) broadcast over the rows of a.
Var add_row(Var a, Var row);
/// a * row elementwise, `row` (1 x c) broadcast over the rows of a.
Var mul_row(Var a, Var row);
Var sum_all(Var a);
/// Column sums as a 1 x c row.
Var sum_rows(Var a);
Var mean_rows(Var a);
Var sum_squares(Var a);
/// Mean of squared differences over all entries.
Var mse(Var a, Var b);
/// Row-wise normalization followed by the affine map gamma * x + beta.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var layer_norm(Var x, double eps = 1e-5);
/// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
Var gelu(Var x);
Var softmax_rows(Var x);
/// Scaled dot-product attention over rows with `heads` heads of width d / heads.
/// q, k, v are n x d; the output is n x d with heads concatenated column-wise.
Var attention(Var q, Var k, Var v, int heads);
/// Rows of `a` selected by `index` (repeats allowed).
Var gather_rows(Var a, std::vector<int> index);
Var concat_rows(std::span<const Var> parts);
Var reshape(Var a, std::size_t rows, std::size_t cols);
/// Columns [begin, end).
Var slice_cols(Var a, std::size_t begin, std::size_t end);

}  // namespace nerve::nn
