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

#include "nerve/mae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nerve/error.hpp"
#include "nerve/rng.hpp"

namespace nerve {

using nn::Graph;
using nn::Tensor;
using nn::Var;

namespace {
constexpr double kEmbedInitStd = 0.02;
constexpr std::uint64_t kShuffleStream = 0x5348;  // "SH"
constexpr std::uint64_t kMaskStream = 0x4d41;     // "MA"
}  // namespace

std::string to_string(Pooling p) { return p == Pooling::Cls ? "cls" : "mean"; }

Pooling parse_pooling(const std::string& name) {
  if (name == "cls") return Pooling::Cls;
  if (name == "mean") return Pooling::Mean;
  throw ConfigError("unknown pooling '" + name + "' (expected cls or mean)");
}

// --- config ---------------------------------------------------------------

void MAEConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model." + field + ": " + why);
  };
  if (embed_dim < 1) fail("embed_dim", "must be >= 1");
  if (decoder_dim < 1) fail("decoder_dim", "must be >= 1");
  if (encoder_depth < 1) fail("encoder_depth", "must be >= 1");
  if (decoder_depth < 1) fail("decoder_depth", "must be >= 1");
  if (encoder_heads < 1 || embed_dim % encoder_heads != 0) fail("encoder_heads", "must divide embed_dim");
  if (decoder_heads < 1 || decoder_dim % decoder_heads != 0) fail("decoder_heads", "must divide decoder_dim");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio", "must lie in (0, 1)");
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) fail("warmup_epochs", "must satisfy 0 <= warmup < epochs");
  if (!(base_lr >= 0.0)) fail("base_lr", "must be >= 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
}

KeyValueConfig MAEConfig::to_config() const {
  KeyValueConfig kv;
  kv.set("tokenizer", to_string(tokenizer));
  kv.set("embed_dim", embed_dim);
  kv.set("encoder_depth", encoder_depth);
  kv.set("encoder_heads", encoder_heads);
  kv.set("decoder_dim", decoder_dim);
  kv.set("decoder_depth", decoder_depth);
  kv.set("decoder_heads", decoder_heads);
  kv.set("mask_ratio", mask_ratio);
  kv.set("epochs", epochs);
  kv.set("warmup_epochs", warmup_epochs);
  kv.set("base_lr", base_lr);
  kv.set("weight_decay", weight_decay);
  kv.set("batch_size", batch_size);
  kv.set("seed", std::to_string(seed));
  kv.set("per_step_schedule", per_step_schedule);
  kv.set("entry_normalized_loss", entry_normalized_loss);
  return kv;
}

MAEConfig MAEConfig::from_config(const KeyValueConfig& kv) {
  MAEConfig c;
  c.tokenizer = parse_tokenizer_kind(kv.get_string("tokenizer", to_string(c.tokenizer)));
  c.embed_dim = static_cast<int>(kv.get_int("embed_dim", c.embed_dim));
  c.encoder_depth = static_cast<int>(kv.get_int("encoder_depth", c.encoder_depth));
  c.encoder_heads = static_cast<int>(kv.get_int("encoder_heads", c.encoder_heads));
  c.decoder_dim = static_cast<int>(kv.get_int("decoder_dim", c.decoder_dim));
  c.decoder_depth = static_cast<int>(kv.get_int("decoder_depth", c.decoder_depth));
  c.decoder_heads = static_cast<int>(kv.get_int("decoder_heads", c.decoder_heads));
  c.mask_ratio = kv.get_double("mask_ratio", c.mask_ratio);
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.warmup_epochs = static_cast<int>(kv.get_int("warmup_epochs", c.warmup_epochs));
  c.base_lr = kv.get_double("base_lr", c.base_lr);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.per_step_schedule = kv.get_bool("per_step_schedule", c.per_step_schedule);
  c.entry_normalized_loss = kv.get_bool("entry_normalized_loss", c.entry_normalized_loss);
  return c;
}

MAEConfig MAEConfig::paper_scale() {
  MAEConfig c;
  c.embed_dim = 256;
  c.encoder_depth = 4;
  c.encoder_heads = 4;
  c.decoder_dim = 64;
  c.decoder_depth = 1;
  c.decoder_heads = 2;
  c.mask_ratio = 0.5;
  c.epochs = 4000;
  c.warmup_epochs = 400;
  c.base_lr = 1e-2;
  c.weight_decay = 1e-2;
  c.batch_size = 1024;
  return c;
}

bool MAEConfig::same_architecture(const MAEConfig& o) const {
  return tokenizer == o.tokenizer && embed_dim == o.embed_dim && encoder_depth == o.encoder_depth &&
         encoder_heads == o.encoder_heads && decoder_dim == o.decoder_dim &&
         decoder_depth == o.decoder_depth && decoder_heads == o.decoder_heads;
}

// --- masking and loss -----------------------------------------------------

int mask_count(int n_patch, double mask_ratio) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
    throw ConfigError("mask ratio must lie in (0, 1), got " + format_double(mask_ratio));
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  return static_cast<int>(std::floor(mask_ratio * n_patch + 1e-9));
}

MaskPlan sample_mask(int n_patch, double mask_ratio, std::mt19937_64& rng) {
  const int count = mask_count(n_patch, mask_ratio);
  std::vector<int> order(n_patch);
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, n_patch - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  MaskPlan plan;
  plan.masked.assign(order.begin(), order.begin() + count);
  plan.visible.assign(order.begin() + count, order.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

double loss_recon(std::span<const Patch> recon, std::span<const Patch> target, const MaskPlan& mask,
                  bool entry_normalized) {
  if (mask.masked.empty()) throw NumericError("reconstruction loss is undefined for an empty mask");
  double total = 0.0;
  for (int p : mask.masked) {
    const auto& a = recon[p].block;
    const auto& b = target[p].block;
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("loss_recon: block shape mismatch");
    double e = (a - b).squaredNorm();
    if (entry_normalized) e /= static_cast<double>(a.size());
    total += e;
  }
  return total / static_cast<double>(mask.masked.size());
}

// --- model ----------------------------------------------------------------

MAEModel::MAEModel(const MAEConfig& config, Parcellation parcellation)
    : config_(config), parcellation_(std::move(parcellation)), layout_(build_layout(parcellation_)) {
  config_.validate();
  std::mt19937_64 rng(derive_seed(config_.seed, 0x494e4954));  // "INIT"
  const auto d = static_cast<std::size_t>(config_.embed_dim);
  const auto dd = static_cast<std::size_t>(config_.decoder_dim);
  const auto n = static_cast<std::size_t>(layout_.n_patch());
  tokenizer_ = make_tokenizer(config_.tokenizer, params_, "tokenizer", layout_, config_.embed_dim, rng);
  cls_ = &params_.add("cls", nn::normal_tensor(1, d, kEmbedInitStd, rng));
  enc_pos_ = &params_.add("encoder.pos", nn::normal_tensor(n + 1, d, kEmbedInitStd, rng));
  encoder_ = nn::TransformerStack::create(params_, "encoder", d, config_.encoder_depth,
                                          config_.encoder_heads, rng);
  bridge_ = nn::Linear::create(params_, "bridge", d, dd, rng);
  mask_token_ = &params_.add("mask_token", nn::normal_tensor(1, dd, kEmbedInitStd, rng));
  dec_pos_ = &params_.add("decoder.pos", nn::normal_tensor(n + 1, dd, kEmbedInitStd, rng));
  decoder_ = nn::TransformerStack::create(params_, "decoder", dd, config_.decoder_depth,
                                          config_.decoder_heads, rng);
  detokenizer_ = make_detokenizer(config_.tokenizer, params_, "detokenizer", layout_,
                                  config_.decoder_dim, rng);
}

std::vector<Patch> MAEModel::patches_of(const FCMatrix& fc) const {
  return extract_patches(fc, parcellation_, layout_);
}

Var MAEModel::embed_sequence(Graph& g, std::span<const Patch> patches) const {
  Var tokens = tokenizer_->tokenize(g, patches);
  const Var parts[] = {g.param(*cls_), tokens};
  return nn::add(nn::concat_rows(parts), g.param(*enc_pos_));
}

Var MAEModel::encode_sequence(Graph& g, Var sequence) const { return encoder_(g, sequence); }

PretrainPass MAEModel::forward_pretrain(Graph& g, std::span<const Patch> patches,
                                        const MaskPlan& mask) const {
  const int n = layout_.n_patch();
  if (mask.masked.empty()) throw NumericError("forward_pretrain needs at least one masked patch");
  if (static_cast<int>(mask.masked.size() + mask.visible.size()) != n)
    throw ShapeError("mask plan does not cover the layout");

  Var seq = embed_sequence(g, patches);
  // Sequence row 0 is CLS; patch p sits at row p + 1.
  std::vector<int> keep{0};
  for (int p : mask.visible) keep.push_back(p + 1);
  Var latent = encode_sequence(g, nn::gather_rows(seq, keep));
  Var bridged = bridge_(g, latent);

  // Rows of [bridged; mask_token x |M|] rearranged into original sequence order.
  const int n_keep = static_cast<int>(keep.size());
  std::vector<Var> parts{bridged};
  Var mtok = g.param(*mask_token_);
  for (std::size_t i = 0; i < mask.masked.size(); ++i) parts.push_back(mtok);
  std::vector<int> order(n + 1);
  order[0] = 0;
  for (std::size_t i = 0; i < mask.visible.size(); ++i) order[mask.visible[i] + 1] = static_cast<int>(i) + 1;
  for (std::size_t i = 0; i < mask.masked.size(); ++i) order[mask.masked[i] + 1] = n_keep + static_cast<int>(i);
  Var full = nn::add(nn::gather_rows(nn::concat_rows(parts), order), g.param(*dec_pos_));
  Var decoded = decoder_(g, full);

  std::vector<int> masked_rows;
  for (int p : mask.masked) masked_rows.push_back(p + 1);
  Var at_mask = nn::gather_rows(decoded, masked_rows);
  std::vector<Var> recon = detokenizer_->detokenize(g, at_mask, mask.masked);

  std::vector<Var> terms;
  terms.reserve(recon.size());
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const Patch& target = patches[mask.masked[i]];
    Var e = nn::sum_squares(nn::sub(recon[i], g.constant(Tensor::from_matrix(target.block))));
    if (config_.entry_normalized_loss) e = nn::scale(e, 1.0 / static_cast<double>(target.block.size()));
    terms.push_back(e);
  }
  Var loss = nn::scale(nn::sum_all(nn::concat_rows(terms)), 1.0 / static_cast<double>(terms.size()));
  return {loss, std::move(recon)};
}

Vector MAEModel::encode(std::span<const Patch> patches, Pooling pooling) const {
  Graph g(false);
  Var out = encode_sequence(g, embed_sequence(g, patches));
  const auto& m = out.value().mat();
  if (pooling == Pooling::Cls) return m.row(0).transpose();
  return m.bottomRows(m.rows() - 1).colwise().mean().transpose();
}

// --- training -------------------------------------------------------------

TrainState TrainState::fresh(const MAEModel& model) {
  TrainState s;
  nn::AdamWHyper h;
  h.weight_decay = model.config().weight_decay;
  s.optimizer = nn::OptimizerState::init(model.params(), h);
  return s;
}

namespace {

int effective_batch(const MAEConfig& c, int cohort_size) { return std::min(c.batch_size, cohort_size); }

int batches_per_epoch(const MAEConfig& c, int cohort_size) {
  const int b = effective_batch(c, cohort_size);
  return (cohort_size + b - 1) / b;
}

}  // namespace

nn::LRSchedule make_schedule(const MAEConfig& c, int cohort_size) {
  nn::LRSchedule s;
  s.base_lr = c.base_lr;
  const std::int64_t k = c.per_step_schedule ? batches_per_epoch(c, cohort_size) : 1;
  s.warmup_steps = static_cast<std::int64_t>(c.warmup_epochs) * k;
  s.total_steps = static_cast<std::int64_t>(c.epochs) * k;
  s.validate();
  return s;
}

TrainResult train(MAEModel& model, const Cohort& cohort, TrainState& state,
                  const std::function<void(const LossPoint&)>& on_epoch, int until_epoch) {
  const MAEConfig& cfg = model.config();
  cfg.validate();
  const int N = cohort.size();
  if (N == 0) throw DataError("cannot train on an empty cohort");
  if (cohort.region_count() != model.parcellation().region_count())
    throw DataError("cohort region count " + std::to_string(cohort.region_count()) +
                    " does not match the model parcellation (" +
                    std::to_string(model.parcellation().region_count()) + ")");
  if (state.optimizer.first.size() != model.params().size())
    throw ConfigError("training state does not match the model parameters");

  TrainResult result;
  const int batch = effective_batch(cfg, N);
  if (batch < cfg.batch_size)
    result.warnings.push_back("batch size " + std::to_string(cfg.batch_size) + " exceeds cohort size " +
                              std::to_string(N) + "; clamped to " + std::to_string(batch));
  const auto schedule = make_schedule(cfg, N);
  state.optimizer.hyper.weight_decay = cfg.weight_decay;

  std::vector<std::vector<Patch>> patches;
  patches.reserve(N);
  for (const auto& s : cohort.subjects) patches.push_back(model.patches_of(s.fc));
  const int n_patch = model.layout().n_patch();

  const int last = until_epoch > 0 ? std::min(until_epoch, cfg.epochs) : cfg.epochs;
  for (int epoch = state.epochs_done; epoch < last; ++epoch) {
    std::vector<int> order = region_permutation(N, derive_seed(cfg.seed, kShuffleStream, epoch));
    const double epoch_lr = cfg.per_step_schedule ? 0.0 : nn::lr_at(schedule, epoch + 1);
    double lr = epoch_lr;
    double loss_sum = 0.0;
    for (int start = 0; start < N; start += batch) {
      const int stop = std::min(N, start + batch);
      const double weight = 1.0 / static_cast<double>(stop - start);
      model.params().zero_grad();
      for (int b = start; b < stop; ++b) {
        const int subject = order[b];
        std::mt19937_64 rng(derive_seed(cfg.seed, kMaskStream, epoch, subject));
        const MaskPlan mask = sample_mask(n_patch, cfg.mask_ratio, rng);
        Graph g;
        PretrainPass pass = model.forward_pretrain(g, patches[subject], mask);
        loss_sum += pass.loss.value().item();
        g.backward(pass.loss, weight);
      }
      ++state.steps_done;
      if (cfg.per_step_schedule) lr = nn::lr_at(schedule, state.steps_done);
      nn::adamw_step(model.params(), state.optimizer, lr);
    }
    state.epochs_done = epoch + 1;
    LossPoint point{epoch + 1, loss_sum / N, lr};
    result.curve.push_back(point);
    if (on_epoch) on_epoch(point);
  }
  return result;
}

TrainResult train(MAEModel& model, const Cohort& cohort) {
  TrainState state = TrainState::fresh(model);
  return train(model, cohort, state);
}

Matrix encode_cohort(const MAEModel& model, const Cohort& cohort, Pooling pooling) {
  if (cohort.region_count() != model.parcellation().region_count())
    throw DataError("cohort region count " + std::to_string(cohort.region_count()) +
                    " does not match the checkpoint (" +
                    std::to_string(model.parcellation().region_count()) + ")");
  Matrix out(cohort.size(), model.config().embed_dim);
  for (int i = 0; i < cohort.size(); ++i)
    out.row(i) = model.encode(model.patches_of(cohort.subjects[i].fc), pooling).transpose();
  return out;
}

}  // namespace nerve
