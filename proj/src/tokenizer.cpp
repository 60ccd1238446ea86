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

#include "nerve/tokenizer.hpp"

#include <cmath>

#include "nerve/error.hpp"
#include "nerve/transformer.hpp"

namespace nerve {

using nn::Graph;
using nn::Tensor;
using nn::Var;

std::string to_string(TokenizerKind kind) {
  switch (kind) {
    case TokenizerKind::Shared: return "shared";
    case TokenizerKind::Specific: return "specific";
    case TokenizerKind::Bilinear: return "bilinear";
  }
  return "unknown";
}

TokenizerKind parse_tokenizer_kind(const std::string& name) {
  if (name == "shared") return TokenizerKind::Shared;
  if (name == "specific") return TokenizerKind::Specific;
  if (name == "bilinear") return TokenizerKind::Bilinear;
  throw ConfigError("unknown tokenizer '" + name + "' (expected shared, specific or bilinear)");
}

Matrix khatri_rao(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw ShapeError("khatri_rao: column counts differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()) + ")");
  Matrix w(a.rows() * b.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      w.row(i * b.rows() + j) = a.row(i).cwiseProduct(b.row(j));
  return w;
}

namespace {

void check_width(int width) {
  if (width < 1) throw ConfigError("token width must be >= 1");
}

Tensor row_vec(const Patch& p) {
  Tensor t(1, static_cast<std::size_t>(p.block.size()));
  t.mat() = Eigen::Map<const Matrix>(p.block.data(), 1, p.block.size());
  return t;
}

const double kBilinearInitStd = std::sqrt(kProjectionInitStd);

}  // namespace

void Tokenizer::check_patches(std::span<const Patch> patches) const {
  if (static_cast<int>(patches.size()) != layout_.n_patch())
    throw ShapeError("tokenize: expected " + std::to_string(layout_.n_patch()) + " patches, got " +
                     std::to_string(patches.size()));
  for (int p = 0; p < layout_.n_patch(); ++p) {
    if (patches[p].pair != layout_.pair(p) || patches[p].block.rows() != layout_.rows(p) ||
        patches[p].block.cols() != layout_.cols(p))
      throw ShapeError("tokenize: patch " + std::to_string(p) + " does not match the layout");
  }
}

void Detokenizer::check_tokens(Var tokens, std::span<const int> patch_index) const {
  if (static_cast<int>(tokens.cols()) != width_)
    throw ShapeError("detokenize: token width " + std::to_string(tokens.cols()) +
                     " does not match decoder width " + std::to_string(width_));
  if (tokens.rows() != patch_index.size())
    throw ShapeError("detokenize: token rows do not match the patch index list");
  for (int p : patch_index)
    if (p < 0 || p >= layout_.n_patch()) throw ShapeError("detokenize: patch index out of range");
}

// --- shared ---------------------------------------------------------------

SharedLinearTokenizer::SharedLinearTokenizer(nn::ParameterStore& store, const std::string& prefix,
                                             PatchLayout layout, int width, std::mt19937_64& rng)
    : Tokenizer(std::move(layout), width) {
  check_width(width);
  weight_ = &store.add(prefix + ".weight",
                       nn::normal_tensor(this->layout().max_flat_size(), width, kProjectionInitStd, rng));
}

Var SharedLinearTokenizer::tokenize(Graph& g, std::span<const Patch> patches) const {
  check_patches(patches);
  Tensor padded(patches.size(), static_cast<std::size_t>(s_max()));
  for (std::size_t p = 0; p < patches.size(); ++p) {
    const auto& b = patches[p].block;
    std::copy(b.data(), b.data() + b.size(), padded.data() + p * padded.cols());
  }
  return nn::matmul(g.constant(std::move(padded)), g.param(*weight_));
}

SharedLinearDetokenizer::SharedLinearDetokenizer(nn::ParameterStore& store, const std::string& prefix,
                                                 PatchLayout layout, int width, std::mt19937_64& rng)
    : Detokenizer(std::move(layout), width) {
  check_width(width);
  weight_ = &store.add(prefix + ".weight",
                       nn::normal_tensor(width, this->layout().max_flat_size(), kProjectionInitStd, rng));
}

std::vector<Var> SharedLinearDetokenizer::detokenize(Graph& g, Var tokens,
                                                     std::span<const int> patch_index) const {
  check_tokens(tokens, patch_index);
  Var flat = nn::matmul(tokens, g.param(*weight_));
  std::vector<Var> out;
  out.reserve(patch_index.size());
  for (std::size_t r = 0; r < patch_index.size(); ++r) {
    const int p = patch_index[r];
    Var row = nn::gather_rows(flat, {static_cast<int>(r)});
    Var cropped = nn::slice_cols(row, 0, layout().flat_size(p));
    out.push_back(nn::reshape(cropped, layout().rows(p), layout().cols(p)));
  }
  return out;
}

// --- specific -------------------------------------------------------------

SpecificLinearTokenizer::SpecificLinearTokenizer(nn::ParameterStore& store, const std::string& prefix,
                                                 PatchLayout layout, int width, std::mt19937_64& rng)
    : Tokenizer(std::move(layout), width) {
  check_width(width);
  const auto& lay = this->layout();
  for (int p = 0; p < lay.n_patch(); ++p) {
    const auto [l, m] = lay.pair(p);
    weights_.push_back(&store.add(prefix + ".W." + std::to_string(l) + "." + std::to_string(m),
                                  nn::normal_tensor(lay.flat_size(p), width, kProjectionInitStd, rng)));
  }
}

std::size_t SpecificLinearTokenizer::param_count() const {
  std::size_t n = 0;
  for (const auto* w : weights_) n += w->value.size();
  return n;
}

Var SpecificLinearTokenizer::tokenize(Graph& g, std::span<const Patch> patches) const {
  check_patches(patches);
  std::vector<Var> rows;
  rows.reserve(patches.size());
  for (std::size_t p = 0; p < patches.size(); ++p)
    rows.push_back(nn::matmul(g.constant(row_vec(patches[p])), g.param(*weights_[p])));
  return nn::concat_rows(rows);
}

SpecificLinearDetokenizer::SpecificLinearDetokenizer(nn::ParameterStore& store,
                                                     const std::string& prefix, PatchLayout layout,
                                                     int width, std::mt19937_64& rng)
    : Detokenizer(std::move(layout), width) {
  check_width(width);
  const auto& lay = this->layout();
  for (int p = 0; p < lay.n_patch(); ++p) {
    const auto [l, m] = lay.pair(p);
    weights_.push_back(&store.add(prefix + ".W." + std::to_string(l) + "." + std::to_string(m),
                                  nn::normal_tensor(width, lay.flat_size(p), kProjectionInitStd, rng)));
  }
}

std::size_t SpecificLinearDetokenizer::param_count() const {
  std::size_t n = 0;
  for (const auto* w : weights_) n += w->value.size();
  return n;
}

std::vector<Var> SpecificLinearDetokenizer::detokenize(Graph& g, Var tokens,
                                                       std::span<const int> patch_index) const {
  check_tokens(tokens, patch_index);
  std::vector<Var> out;
  out.reserve(patch_index.size());
  for (std::size_t r = 0; r < patch_index.size(); ++r) {
    const int p = patch_index[r];
    Var z = nn::gather_rows(tokens, {static_cast<int>(r)});
    Var flat = nn::matmul(z, g.param(*weights_[p]));
    out.push_back(nn::reshape(flat, layout().rows(p), layout().cols(p)));
  }
  return out;
}

// --- bilinear -------------------------------------------------------------

BilinearTokenizer::BilinearTokenizer(nn::ParameterStore& store, const std::string& prefix,
                                     PatchLayout layout, int width, std::mt19937_64& rng)
    : Tokenizer(std::move(layout), width) {
  check_width(width);
  const auto& sizes = this->layout().network_sizes();
  for (std::size_t l = 0; l < sizes.size(); ++l)
    factors_.push_back(&store.add(prefix + ".U." + std::to_string(l),
                                  nn::normal_tensor(sizes[l], width, kBilinearInitStd, rng)));
}

std::size_t BilinearTokenizer::param_count() const {
  std::size_t n = 0;
  for (const auto* u : factors_) n += u->value.size();
  return n;
}

Var BilinearTokenizer::tokenize(Graph& g, std::span<const Patch> patches) const {
  check_patches(patches);
  std::vector<Var> u;
  u.reserve(factors_.size());
  for (auto* f : factors_) u.push_back(g.param(*f));
  std::vector<Var> rows;
  rows.reserve(patches.size());
  for (const auto& patch : patches) {
    const auto [l, m] = patch.pair;
    // (x U_m)(i,k) = sum_j x(i,j) U_m(j,k); weighting by U_l(i,k) and summing over i
    // gives the k-th bilinear form.
    Var xu = nn::matmul(g.constant(Tensor::from_matrix(patch.block)), u[m]);
    rows.push_back(nn::sum_rows(nn::mul(u[l], xu)));
  }
  return nn::concat_rows(rows);
}

BilinearDetokenizer::BilinearDetokenizer(nn::ParameterStore& store, const std::string& prefix,
                                         PatchLayout layout, int width, std::mt19937_64& rng)
    : Detokenizer(std::move(layout), width) {
  check_width(width);
  const auto& sizes = this->layout().network_sizes();
  for (std::size_t l = 0; l < sizes.size(); ++l)
    factors_.push_back(&store.add(prefix + ".V." + std::to_string(l),
                                  nn::normal_tensor(sizes[l], width, kBilinearInitStd, rng)));
}

std::size_t BilinearDetokenizer::param_count() const {
  std::size_t n = 0;
  for (const auto* v : factors_) n += v->value.size();
  return n;
}

std::vector<Var> BilinearDetokenizer::detokenize(Graph& g, Var tokens,
                                                 std::span<const int> patch_index) const {
  check_tokens(tokens, patch_index);
  const int nets = layout().network_count();
  std::vector<Var> v(nets), vt(nets);
  std::vector<char> have(nets, 0);
  auto factor = [&](int l) {
    if (!have[l]) {
      v[l] = g.param(*factors_[l]);
      vt[l] = nn::transpose(v[l]);
      have[l] = 1;
    }
  };
  std::vector<Var> out;
  out.reserve(patch_index.size());
  for (std::size_t r = 0; r < patch_index.size(); ++r) {
    const auto [l, m] = layout().pair(patch_index[r]);
    factor(l);
    factor(m);
    Var z = nn::gather_rows(tokens, {static_cast<int>(r)});
    out.push_back(nn::matmul(nn::mul_row(v[l], z), vt[m]));
  }
  return out;
}

// --- factories ------------------------------------------------------------

std::unique_ptr<Tokenizer> make_tokenizer(TokenizerKind kind, nn::ParameterStore& store,
                                          const std::string& prefix, const PatchLayout& layout,
                                          int width, std::mt19937_64& rng) {
  switch (kind) {
    case TokenizerKind::Shared:
      return std::make_unique<SharedLinearTokenizer>(store, prefix, layout, width, rng);
    case TokenizerKind::Specific:
      return std::make_unique<SpecificLinearTokenizer>(store, prefix, layout, width, rng);
    case TokenizerKind::Bilinear:
      return std::make_unique<BilinearTokenizer>(store, prefix, layout, width, rng);
  }
  throw ConfigError("unknown tokenizer kind");
}

std::unique_ptr<Detokenizer> make_detokenizer(TokenizerKind kind, nn::ParameterStore& store,
                                              const std::string& prefix, const PatchLayout& layout,
                                              int width, std::mt19937_64& rng) {
  switch (kind) {
    case TokenizerKind::Shared:
      return std::make_unique<SharedLinearDetokenizer>(store, prefix, layout, width, rng);
    case TokenizerKind::Specific:
      return std::make_unique<SpecificLinearDetokenizer>(store, prefix, layout, width, rng);
    case TokenizerKind::Bilinear:
      return std::make_unique<BilinearDetokenizer>(store, prefix, layout, width, rng);
  }
  throw ConfigError("unknown tokenizer kind");
}

TokenizerBundle init_tokenizer(TokenizerKind kind, const PatchLayout& layout, int width,
                               std::uint64_t seed) {
  check_width(width);
  TokenizerBundle b;
  std::mt19937_64 rng(seed);
  b.tokenizer = make_tokenizer(kind, b.store, "tokenizer", layout, width, rng);
  return b;
}

Matrix tokenize(const Tokenizer& tok, std::span<const Patch> patches) {
  Graph g(false);
  return tok.tokenize(g, patches).value().to_matrix();
}

std::vector<Patch> detokenize(const Detokenizer& detok, const Matrix& tokens) {
  const auto& lay = detok.layout();
  if (tokens.rows() != lay.n_patch())
    throw ShapeError("detokenize: expected one token row per layout pair");
  Graph g(false);
  std::vector<int> index(lay.n_patch());
  for (int p = 0; p < lay.n_patch(); ++p) index[p] = p;
  auto blocks = detok.detokenize(g, g.constant(Tensor::from_matrix(tokens)), index);
  std::vector<Patch> out;
  out.reserve(blocks.size());
  for (int p = 0; p < lay.n_patch(); ++p) out.push_back({lay.pair(p), blocks[p].value().to_matrix()});
  return out;
}

}  // namespace nerve
