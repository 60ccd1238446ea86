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

#include <random>
#include <string>
#include <vector>

#include "nerve/autodiff.hpp"

namespace nerve::nn {

/// Draws an i.i.d. N(0, stddev^2) tensor.
Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng);

struct Linear {
  Parameter* weight = nullptr;  // in x out
  Parameter* bias = nullptr;    // 1 x out

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, std::mt19937_64& rng);
  Var operator()(Graph& g, Var x) const;
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t width);
  Var operator()(Graph& g, Var x) const;
};

struct MultiHeadAttention {
  Linear query, key, value, output;
  int heads = 1;

  static MultiHeadAttention create(ParameterStore& store, const std::string& name,
                                   std::size_t width, int heads, std::mt19937_64& rng);
  /// Self-attention over the rows of x (n x width).
  Var operator()(Graph& g, Var x) const;
};

/// Pre-norm block: x + attn(ln1(x)), then h + mlp(ln2(h)) with a 4x GELU MLP.
struct TransformerBlock {
  LayerNorm norm1, norm2;
  MultiHeadAttention attn;
  Linear fc1, fc2;

  static TransformerBlock create(ParameterStore& store, const std::string& name,
                                 std::size_t width, int heads, std::mt19937_64& rng);
  Var operator()(Graph& g, Var x) const;
};

/// Stack of blocks followed by a final LayerNorm.
struct TransformerStack {
  std::vector<TransformerBlock> blocks;
  LayerNorm final_norm;

  static TransformerStack create(ParameterStore& store, const std::string& name,
                                 std::size_t width, int depth, int heads, std::mt19937_64& rng);
  Var operator()(Graph& g, Var x) const;
};

}  // namespace nerve::nn
