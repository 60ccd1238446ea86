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

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nerve/autodiff.hpp"
#include "nerve/fc.hpp"

namespace nerve {

enum class TokenizerKind { Shared, Specific, Bilinear };

std::string to_string(TokenizerKind kind);
/// Accepts "shared", "specific" or "bilinear"; throws ConfigError otherwise.
TokenizerKind parse_tokenizer_kind(const std::string& name);

/// Init standard deviation of linear projections. Bilinear factors use its square
/// root so that products of two factors have the same scale.
inline constexpr double kProjectionInitStd = 0.02;

/// Column-wise Kronecker product: row (i * rows(b) + j), column k holds a(i,k) * b(j,k).
/// The row order matches vec() of an |a| x |b| block.
Matrix khatri_rao(const Matrix& a, const Matrix& b);

/// Maps each patch of a layout to a token row. No bias terms.
class Tokenizer {
 public:
  Tokenizer(PatchLayout layout, int width) : layout_(std::move(layout)), width_(width) {}
  virtual ~Tokenizer() = default;

  virtual TokenizerKind kind() const = 0;
  /// Number of learnable scalars.
  virtual std::size_t param_count() const = 0;
  /// Token matrix of shape n_patch x width, one row per layout pair, in layout order.
  virtual nn::Var tokenize(nn::Graph& g, std::span<const Patch> patches) const = 0;

  const PatchLayout& layout() const { return layout_; }
  int width() const { return width_; }

 protected:
  void check_patches(std::span<const Patch> patches) const;

 private:
  PatchLayout layout_;
  int width_;
};

/// Maps token rows back to patch blocks.
class Detokenizer {
 public:
  Detokenizer(PatchLayout layout, int width) : layout_(std::move(layout)), width_(width) {}
  virtual ~Detokenizer() = default;

  virtual TokenizerKind kind() const = 0;
  virtual std::size_t param_count() const = 0;
  /// Row r of `tokens` decodes into the patch at layout index `patch_index[r]`.
  virtual std::vector<nn::Var> detokenize(nn::Graph& g, nn::Var tokens,
                                          std::span<const int> patch_index) const = 0;

  const PatchLayout& layout() const { return layout_; }
  int width() const { return width_; }

 protected:
  void check_tokens(nn::Var tokens, std::span<const int> patch_index) const;

 private:
  PatchLayout layout_;
  int width_;
};

/// t = W^T pad(vec(x)), W is s_max x d; vec(x) is zero-padded at the end.
class SharedLinearTokenizer final : public Tokenizer {
 public:
  SharedLinearTokenizer(nn::ParameterStore& store, const std::string& prefix, PatchLayout layout,
                        int width, std::mt19937_64& rng);
  TokenizerKind kind() const override { return TokenizerKind::Shared; }
  std::size_t param_count() const override { return weight_->value.size(); }
  nn::Var tokenize(nn::Graph& g, std::span<const Patch> patches) const override;
  int s_max() const { return layout().max_flat_size(); }
  const nn::Parameter& weight() const { return *weight_; }

 private:
  nn::Parameter* weight_;
};

/// t = W_{l,m}^T vec(x) with one projection per layout pair.
class SpecificLinearTokenizer final : public Tokenizer {
 public:
  SpecificLinearTokenizer(nn::ParameterStore& store, const std::string& prefix, PatchLayout layout,
                          int width, std::mt19937_64& rng);
  TokenizerKind kind() const override { return TokenizerKind::Specific; }
  std::size_t param_count() const override;
  nn::Var tokenize(nn::Graph& g, std::span<const Patch> patches) const override;
  const nn::Parameter& projection(int p) const { return *weights_.at(p); }

 private:
  std::vector<nn::Parameter*> weights_;
};

/// t_k = sum_ij U_l(i,k) x(i,j) U_m(j,k), i.e. (U_l ⊙ U_m)^T vec(x), evaluated without
/// materializing the Khatri-Rao product.
class BilinearTokenizer final : public Tokenizer {
 public:
  BilinearTokenizer(nn::ParameterStore& store, const std::string& prefix, PatchLayout layout,
                    int width, std::mt19937_64& rng);
  TokenizerKind kind() const override { return TokenizerKind::Bilinear; }
  std::size_t param_count() const override;
  nn::Var tokenize(nn::Graph& g, std::span<const Patch> patches) const override;
  const nn::Parameter& embedding(int network) const { return *factors_.at(network); }
  nn::Parameter& embedding(int network) { return *factors_.at(network); }

 private:
  std::vector<nn::Parameter*> factors_;
};

/// Projects d -> s_max and keeps the leading |N_l||N_m| entries.
class SharedLinearDetokenizer final : public Detokenizer {
 public:
  SharedLinearDetokenizer(nn::ParameterStore& store, const std::string& prefix, PatchLayout layout,
                          int width, std::mt19937_64& rng);
  TokenizerKind kind() const override { return TokenizerKind::Shared; }
  std::size_t param_count() const override { return weight_->value.size(); }
  std::vector<nn::Var> detokenize(nn::Graph& g, nn::Var tokens,
                                  std::span<const int> patch_index) const override;

 private:
  nn::Parameter* weight_;
};

class SpecificLinearDetokenizer final : public Detokenizer {
 public:
  SpecificLinearDetokenizer(nn::ParameterStore& store, const std::string& prefix,
                            PatchLayout layout, int width, std::mt19937_64& rng);
  TokenizerKind kind() const override { return TokenizerKind::Specific; }
  std::size_t param_count() const override;
  std::vector<nn::Var> detokenize(nn::Graph& g, nn::Var tokens,
                                  std::span<const int> patch_index) const override;

 private:
  std::vector<nn::Parameter*> weights_;
};

/// x_hat(i,j) = sum_k V_l(i,k) V_m(j,k) z_k, i.e. V_l diag(z) V_m^T.
class BilinearDetokenizer final : public Detokenizer {
 public:
  BilinearDetokenizer(nn::ParameterStore& store, const std::string& prefix, PatchLayout layout,
                      int width, std::mt19937_64& rng);
  TokenizerKind kind() const override { return TokenizerKind::Bilinear; }
  std::size_t param_count() const override;
  std::vector<nn::Var> detokenize(nn::Graph& g, nn::Var tokens,
                                  std::span<const int> patch_index) const override;
  const nn::Parameter& embedding(int network) const { return *factors_.at(network); }

 private:
  std::vector<nn::Parameter*> factors_;
};

std::unique_ptr<Tokenizer> make_tokenizer(TokenizerKind kind, nn::ParameterStore& store,
                                          const std::string& prefix, const PatchLayout& layout,
                                          int width, std::mt19937_64& rng);
std::unique_ptr<Detokenizer> make_detokenizer(TokenizerKind kind, nn::ParameterStore& store,
                                              const std::string& prefix, const PatchLayout& layout,
                                              int width, std::mt19937_64& rng);

/// A tokenizer together with the store that owns its parameters.
struct TokenizerBundle {
  nn::ParameterStore store;
  std::unique_ptr<Tokenizer> tokenizer;
};

/// Standalone tokenizer with Gaussian init, deterministic per seed.
TokenizerBundle init_tokenizer(TokenizerKind kind, const PatchLayout& layout, int width,
                               std::uint64_t seed);

/// Inference-only helpers (no tape recorded).
Matrix tokenize(const Tokenizer& tok, std::span<const Patch> patches);
std::vector<Patch> detokenize(const Detokenizer& detok, const Matrix& tokens);

}  // namespace nerve
