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

#include "nerve/transformer.hpp"

#include "nerve/error.hpp"

namespace nerve::nn {

namespace {
constexpr double kInitStd = 0.02;
}

Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, std::mt19937_64& rng) {
  Linear l;
  l.weight = &store.add(name + ".weight", normal_tensor(in, out, kInitStd, rng));
  l.bias = &store.add(name + ".bias", Tensor(1, out));
  return l;
}

Var Linear::operator()(Graph& g, Var x) const {
  return add_row(matmul(x, g.param(*weight)), g.param(*bias));
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t width) {
  LayerNorm ln;
  ln.gamma = &store.add(name + ".gamma", Tensor(1, width, 1.0));
  ln.beta = &store.add(name + ".beta", Tensor(1, width, 0.0));
  return ln;
}

Var LayerNorm::operator()(Graph& g, Var x) const {
  return layer_norm(x, g.param(*gamma), g.param(*beta));
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& name,
                                              std::size_t width, int heads, std::mt19937_64& rng) {
  if (heads < 1 || width % static_cast<std::size_t>(heads) != 0)
    throw ShapeError(name + ": head count " + std::to_string(heads) + " does not divide width " +
                     std::to_string(width));
  MultiHeadAttention a;
  a.query = Linear::create(store, name + ".q", width, width, rng);
  a.key = Linear::create(store, name + ".k", width, width, rng);
  a.value = Linear::create(store, name + ".v", width, width, rng);
  a.output = Linear::create(store, name + ".o", width, width, rng);
  a.heads = heads;
  return a;
}

Var MultiHeadAttention::operator()(Graph& g, Var x) const {
  return output(g, attention(query(g, x), key(g, x), value(g, x), heads));
}

TransformerBlock TransformerBlock::create(ParameterStore& store, const std::string& name,
                                          std::size_t width, int heads, std::mt19937_64& rng) {
  TransformerBlock b;
  b.norm1 = LayerNorm::create(store, name + ".norm1", width);
  b.attn = MultiHeadAttention::create(store, name + ".attn", width, heads, rng);
  b.norm2 = LayerNorm::create(store, name + ".norm2", width);
  b.fc1 = Linear::create(store, name + ".mlp.fc1", width, 4 * width, rng);
  b.fc2 = Linear::create(store, name + ".mlp.fc2", 4 * width, width, rng);
  return b;
}

Var TransformerBlock::operator()(Graph& g, Var x) const {
  Var h = add(x, attn(g, norm1(g, x)));
  return add(h, fc2(g, gelu(fc1(g, norm2(g, h)))));
}

TransformerStack TransformerStack::create(ParameterStore& store, const std::string& name,
                                          std::size_t width, int depth, int heads,
                                          std::mt19937_64& rng) {
  if (depth < 1) throw ConfigError(name + ": depth must be >= 1");
  TransformerStack s;
  for (int i = 0; i < depth; ++i)
    s.blocks.push_back(TransformerBlock::create(store, name + ".blocks." + std::to_string(i), width, heads, rng));
  s.final_norm = LayerNorm::create(store, name + ".norm", width);
  return s;
}

Var TransformerStack::operator()(Graph& g, Var x) const {
  for (const auto& b : blocks) x = b(g, x);
  return final_norm(g, x);
}

}  // namespace nerve::nn
