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
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nerve/autodiff.hpp"
#include "nerve/config.hpp"
#include "nerve/fc.hpp"
#include "nerve/optim.hpp"
#include "nerve/tokenizer.hpp"
#include "nerve/transformer.hpp"

namespace nerve {

enum class Pooling { Cls, Mean };
std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& name);

/// Architecture and optimisation settings. Defaults are the desk-scale configuration.
struct MAEConfig {
  TokenizerKind tokenizer = TokenizerKind::Bilinear;
  int embed_dim = 32;
  int encoder_depth = 2;
  int encoder_heads = 2;
  int decoder_dim = 16;
  int decoder_depth = 1;
  int decoder_heads = 2;
  double mask_ratio = 0.5;
  int epochs = 300;
  int warmup_epochs = 30;
  double base_lr = 1e-2;
  double weight_decay = 1e-2;
  int batch_size = 64;
  std::uint64_t seed = 0;
  /// Interpolate the schedule per optimiser step instead of per epoch.
  bool per_step_schedule = false;
  /// Divide each patch's squared error by its entry count.
  bool entry_normalized_loss = false;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  KeyValueConfig to_config() const;
  /// Missing keys keep their defaults.
  static MAEConfig from_config(const KeyValueConfig& kv);
  /// Paper-scale architecture (d_E 256, 4 layers / 4 heads, d_D 64, 4000 epochs).
  static MAEConfig paper_scale();
  bool same_architecture(const MAEConfig& other) const;
};

/// Masked patch positions (sorted) and their complement.
struct MaskPlan {
  std::vector<int> masked;
  std::vector<int> visible;
};

/// floor(ratio * n_patch) positions drawn uniformly without replacement.
MaskPlan sample_mask(int n_patch, double mask_ratio, std::mt19937_64& rng);
int mask_count(int n_patch, double mask_ratio);

/// Mean over masked patches of the squared Frobenius residual. `recon` and `target`
/// hold one entry per layout position. Throws NumericError on an empty mask.
double loss_recon(std::span<const Patch> recon, std::span<const Patch> target,
                  const MaskPlan& mask, bool entry_normalized = false);

struct PretrainPass {
  nn::Var loss;
  /// Decoded blocks for mask.masked, in the same order.
  std::vector<nn::Var> reconstructed;
};

class MAEModel {
 public:
  MAEModel(const MAEConfig& config, Parcellation parcellation);
  MAEModel(MAEModel&&) = default;
  MAEModel& operator=(MAEModel&&) = default;

  const MAEConfig& config() const { return config_; }
  MAEConfig& mutable_config() { return config_; }
  const Parcellation& parcellation() const { return parcellation_; }
  const PatchLayout& layout() const { return layout_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }
  const Detokenizer& detokenizer() const { return *detokenizer_; }

  /// Tokenize, prepend CLS, add positions, drop masked tokens, encode, project to the
  /// decoder width, re-insert mask tokens, decode, detokenize the masked positions.
  PretrainPass forward_pretrain(nn::Graph& g, std::span<const Patch> patches,
                                const MaskPlan& mask) const;

  /// CLS + tokens with positional embeddings, shape (n_patch + 1) x d_E.
  nn::Var embed_sequence(nn::Graph& g, std::span<const Patch> patches) const;
  /// Encoder stack on an already embedded sequence.
  nn::Var encode_sequence(nn::Graph& g, nn::Var sequence) const;
  /// Unmasked encoding pooled to a d_E vector.
  Vector encode(std::span<const Patch> patches, Pooling pooling = Pooling::Cls) const;
  std::vector<Patch> patches_of(const FCMatrix& fc) const;

 private:
  MAEConfig config_;
  Parcellation parcellation_;
  PatchLayout layout_;
  nn::ParameterStore params_;
  std::unique_ptr<Tokenizer> tokenizer_;
  std::unique_ptr<Detokenizer> detokenizer_;
  nn::Parameter* cls_ = nullptr;
  nn::Parameter* enc_pos_ = nullptr;
  nn::TransformerStack encoder_;
  nn::Linear bridge_;
  nn::Parameter* mask_token_ = nullptr;
  nn::Parameter* dec_pos_ = nullptr;
  nn::TransformerStack decoder_;
};

struct LossPoint {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

/// Resumable optimisation state.
struct TrainState {
  nn::OptimizerState optimizer;
  int epochs_done = 0;
  std::int64_t steps_done = 0;

  static TrainState fresh(const MAEModel& model);
};

struct TrainResult {
  std::vector<LossPoint> curve;
  std::vector<std::string> warnings;
};

/// Mini-batch AdamW pretraining with warmup-cosine schedule. Runs epochs
/// state.epochs_done + 1 .. config.epochs, or up to `until_epoch` when it is
/// positive and smaller. Deterministic per config seed.
TrainResult train(MAEModel& model, const Cohort& cohort, TrainState& state,
                  const std::function<void(const LossPoint&)>& on_epoch = {}, int until_epoch = 0);
TrainResult train(MAEModel& model, const Cohort& cohort);

/// Per-epoch (or per-step) schedule implied by a config and cohort size.
nn::LRSchedule make_schedule(const MAEConfig& config, int cohort_size);

/// Embeddings for every subject, one row each.
Matrix encode_cohort(const MAEModel& model, const Cohort& cohort, Pooling pooling = Pooling::Cls);

}  // namespace nerve
