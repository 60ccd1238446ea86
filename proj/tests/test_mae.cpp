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

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "grad_check.hpp"
#include "nerve/checkpoint.hpp"
#include "nerve/error.hpp"
#include "nerve/mae.hpp"
#include "nerve/synth.hpp"
#include "test_util.hpp"

using namespace nerve;
using nerve::testing::random_correlation;

namespace {

MAEConfig toy_config(TokenizerKind kind = TokenizerKind::Bilinear) {
  MAEConfig c;
  c.tokenizer = kind;
  c.embed_dim = 8;
  c.encoder_depth = 1;
  c.encoder_heads = 2;
  c.decoder_dim = 4;
  c.decoder_depth = 1;
  c.decoder_heads = 2;
  c.epochs = 3;
  c.warmup_epochs = 1;
  c.batch_size = 4;
  c.seed = 17;
  return c;
}

Parcellation toy_parcellation() { return Parcellation::contiguous({4, 5, 3}); }

MaskPlan plan(int n, std::uint64_t seed, double ratio = 0.5) {
  std::mt19937_64 rng(seed);
  return sample_mask(n, ratio, rng);
}

// ---- straight-line reference forward pass ----------------------------------

struct Ref {
  const nn::ParameterStore& s;
  Matrix p(const std::string& name) const { return s.get(name).value.to_matrix(); }

  static Matrix ln(const Matrix& x, const Matrix& g, const Matrix& b) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double mu = 0, var = 0;
      for (Eigen::Index j = 0; j < x.cols(); ++j) mu += x(i, j);
      mu /= x.cols();
      for (Eigen::Index j = 0; j < x.cols(); ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
      var /= x.cols();
      for (Eigen::Index j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mu) / std::sqrt(var + 1e-5) * g(0, j) + b(0, j);
    }
    return out;
  }
  Matrix linear(const Matrix& x, const std::string& n) const {
    Matrix y = x * p(n + ".weight");
    for (Eigen::Index i = 0; i < y.rows(); ++i) y.row(i) += p(n + ".bias");
    return y;
  }
  Matrix attn(const Matrix& x, const std::string& n, int heads) const {
    const Matrix q = linear(x, n + ".q"), k = linear(x, n + ".k"), v = linear(x, n + ".v");
    const int w = static_cast<int>(x.cols()) / heads;
    Matrix out(x.rows(), x.cols());
    for (int h = 0; h < heads; ++h) {
      Matrix sc = q.middleCols(h * w, w) * k.middleCols(h * w, w).transpose() / std::sqrt(double(w));
      for (Eigen::Index i = 0; i < sc.rows(); ++i) {
        const double mx = sc.row(i).maxCoeff();
        sc.row(i) = (sc.row(i).array() - mx).exp().matrix();
        sc.row(i) /= sc.row(i).sum();
      }
      out.middleCols(h * w, w) = sc * v.middleCols(h * w, w);
    }
    return linear(out, n + ".o");
  }
  Matrix stack(Matrix x, const std::string& n, int depth, int heads) const {
    for (int b = 0; b < depth; ++b) {
      const std::string bn = n + ".blocks." + std::to_string(b);
      x += attn(ln(x, p(bn + ".norm1.gamma"), p(bn + ".norm1.beta")), bn + ".attn", heads);
      Matrix h = linear(ln(x, p(bn + ".norm2.gamma"), p(bn + ".norm2.beta")), bn + ".mlp.fc1");
      h = h.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
      x += linear(h, bn + ".mlp.fc2");
    }
    return ln(x, p(n + ".norm.gamma"), p(n + ".norm.beta"));
  }

  double loss(const MAEConfig& c, const PatchLayout& layout, const std::vector<Patch>& patches,
              const MaskPlan& mask) const {
    const int n = layout.n_patch();
    Matrix seq(n + 1, c.embed_dim);
    seq.row(0) = p("cls");
    for (int q = 0; q < n; ++q) {
      const auto [l, m] = layout.pair(q);
      const Matrix ul = p("tokenizer.U." + std::to_string(l)), um = p("tokenizer.U." + std::to_string(m));
      for (int k = 0; k < c.embed_dim; ++k) {
        double t = 0;
        for (int i = 0; i < layout.rows(q); ++i)
          for (int j = 0; j < layout.cols(q); ++j) t += ul(i, k) * patches[q].block(i, j) * um(j, k);
        seq(q + 1, k) = t;
      }
    }
    seq += p("encoder.pos");
    Matrix vis(mask.visible.size() + 1, c.embed_dim);
    vis.row(0) = seq.row(0);
    for (std::size_t i = 0; i < mask.visible.size(); ++i) vis.row(i + 1) = seq.row(mask.visible[i] + 1);
    const Matrix lat = linear(stack(vis, "encoder", c.encoder_depth, c.encoder_heads), "bridge");
    Matrix full(n + 1, c.decoder_dim);
    full.row(0) = lat.row(0);
    for (std::size_t i = 0; i < mask.visible.size(); ++i) full.row(mask.visible[i] + 1) = lat.row(i + 1);
    for (int q : mask.masked) full.row(q + 1) = p("mask_token");
    full += p("decoder.pos");
    const Matrix dec = stack(full, "decoder", c.decoder_depth, c.decoder_heads);
    double total = 0;
    for (int q : mask.masked) {
      const auto [l, m] = layout.pair(q);
      const Matrix vl = p("detokenizer.V." + std::to_string(l)), vm = p("detokenizer.V." + std::to_string(m));
      for (int i = 0; i < layout.rows(q); ++i)
        for (int j = 0; j < layout.cols(q); ++j) {
          double xhat = 0;
          for (int k = 0; k < c.decoder_dim; ++k) xhat += vl(i, k) * vm(j, k) * dec(q + 1, k);
          total += (xhat - patches[q].block(i, j)) * (xhat - patches[q].block(i, j));
        }
    }
    return total / static_cast<double>(mask.masked.size());
  }
};

Cohort small_cohort(int subjects, int regions_per_net = 4, std::uint64_t seed = 1) {
  synth::SynthSpec s;
  s.network_sizes = {regions_per_net, regions_per_net + 1, regions_per_net - 1};
  s.subjects = subjects;
  s.seed = seed;
  s.targets[0].blocks = {{0, 1}};
  return synth::gen_cohort(s);
}

}  // namespace

TEST_CASE("mask sampling") {
  CHECK(mask_count(153, 0.5) == 76);
  CHECK(mask_count(10, 0.05) == 0);
  CHECK(mask_count(21, 0.5) == 10);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const MaskPlan m = plan(153, seed);
    CHECK(m.masked.size() == 76);
    CHECK(m.visible.size() == 77);
    std::set<int> all(m.masked.begin(), m.masked.end());
    all.insert(m.visible.begin(), m.visible.end());
    CHECK(all.size() == 153);
    CHECK(*all.begin() == 0);
    CHECK(*all.rbegin() == 152);
    CHECK(std::is_sorted(m.masked.begin(), m.masked.end()));
  }
  CHECK(plan(40, 3).masked == plan(40, 3).masked);
  CHECK_FALSE(plan(40, 3).masked == plan(40, 4).masked);
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(sample_mask(10, 0.0, rng), ConfigError);
  CHECK_THROWS_AS(sample_mask(10, 1.0, rng), ConfigError);
}

TEST_CASE("mask positions are uniform") {
  std::vector<int> hits(12, 0);
  std::mt19937_64 rng(99);
  const int trials = 6000;
  for (int t = 0; t < trials; ++t)
    for (int p : sample_mask(12, 0.25, rng).masked) ++hits[p];
  for (int h : hits) CHECK(h == doctest::Approx(trials * 3.0 / 12.0).epsilon(0.08));
}

TEST_CASE("reconstruction loss") {
  Patch a{{0, 0}, Matrix::Zero(2, 2)}, b{{0, 1}, Matrix::Zero(2, 3)};
  std::vector<Patch> target{a, b}, recon{a, b};
  MaskPlan m{{0}, {1}};
  CHECK(loss_recon(recon, target, m) == 0.0);
  recon[0].block = Matrix::Identity(2, 2);
  CHECK(loss_recon(recon, target, m) == 2.0);
  recon[0].block *= 2.0;
  CHECK(loss_recon(recon, target, m) == 8.0);
  recon[1].block = Matrix::Constant(2, 3, 5.0);
  CHECK(loss_recon(recon, target, m) == 8.0);
  CHECK(loss_recon(recon, target, MaskPlan{{0, 1}, {}}) == doctest::Approx((8.0 + 150.0) / 2.0));
  CHECK(loss_recon(recon, target, MaskPlan{{0, 1}, {}}, true) == doctest::Approx((2.0 + 25.0) / 2.0));
  CHECK_THROWS_AS(loss_recon(recon, target, MaskPlan{{}, {0, 1}}), NumericError);
}

TEST_CASE("config validation") {
  MAEConfig c;
  CHECK_NOTHROW(c.validate());
  c.encoder_heads = 3;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("model.encoder_heads"), ConfigError);
  c = MAEConfig{};
  c.mask_ratio = 1.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("model.mask_ratio"), ConfigError);
  c = MAEConfig{};
  c.warmup_epochs = 300;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  const MAEConfig p = MAEConfig::paper_scale();
  CHECK(p.embed_dim == 256);
  CHECK(p.encoder_depth == 4);
  CHECK(p.encoder_heads == 4);
  CHECK(p.decoder_dim == 64);
  CHECK(p.epochs == 4000);
  CHECK(p.warmup_epochs == 400);
  CHECK(p.base_lr == 1e-2);
  CHECK(p.weight_decay == 1e-2);
  const MAEConfig back = MAEConfig::from_config(p.to_config());
  CHECK(back.same_architecture(p));
  CHECK(back.epochs == p.epochs);
  CHECK(back.batch_size == p.batch_size);
}

TEST_CASE("forward pass matches a straight-line reimplementation") {
  std::mt19937_64 rng(31);
  for (int depth = 1; depth <= 2; ++depth) {
    MAEConfig c = toy_config();
    c.encoder_depth = depth;
    MAEModel model(c, toy_parcellation());
    for (auto& e : model.params().entries())
      e.param->value.mat() += nerve::testing::random_matrix(int(e.param->value.rows()), int(e.param->value.cols()), rng, 0.2);
    const auto patches = model.patches_of(FCMatrix(random_correlation(12, rng)));
    const MaskPlan m = plan(model.layout().n_patch(), depth);
    nn::Graph g(false);
    const double got = model.forward_pretrain(g, patches, m).loss.value().item();
    const double want = Ref{model.params()}.loss(c, model.layout(), patches, m);
    CHECK(got == doctest::Approx(want).epsilon(1e-11));
  }
}

TEST_CASE("loss ignores visible targets") {
  std::mt19937_64 rng(32);
  MAEModel model(toy_config(), toy_parcellation());
  const auto patches = model.patches_of(FCMatrix(random_correlation(12, rng)));
  for (int t = 0; t < 20; ++t) {
    const MaskPlan m = plan(model.layout().n_patch(), 100 + t);
    nn::Graph g(false);
    const PretrainPass base = model.forward_pretrain(g, patches, m);
    std::vector<Patch> target = patches, recon = patches;
    for (std::size_t i = 0; i < m.masked.size(); ++i) recon[m.masked[i]].block = base.reconstructed[i].value().to_matrix();
    CHECK(loss_recon(recon, target, m) == doctest::Approx(base.loss.value().item()).epsilon(1e-13));
    const double before = loss_recon(recon, target, m);
    for (int v : m.visible) target[v].block.array() += 0.5;
    CHECK(loss_recon(recon, target, m) - before == 0.0);
  }
}

TEST_CASE("near-degenerate masks and errors") {
  std::mt19937_64 rng(33);
  MAEModel model(toy_config(), toy_parcellation());
  const int n = model.layout().n_patch();
  const auto patches = model.patches_of(FCMatrix(random_correlation(12, rng)));
  MaskPlan m;
  for (int p = 0; p < n - 1; ++p) m.masked.push_back(p);
  m.visible = {n - 1};
  nn::Graph g(false);
  CHECK(std::isfinite(model.forward_pretrain(g, patches, m).loss.value().item()));
  CHECK_THROWS_AS(model.forward_pretrain(g, patches, MaskPlan{{}, {0, 1, 2, 3, 4, 5}}), NumericError);
  auto short_patches = patches;
  short_patches.pop_back();
  CHECK_THROWS(model.forward_pretrain(g, short_patches, plan(n, 1)));
}

TEST_CASE("composed gradient matches finite differences on the toy model") {
  std::mt19937_64 rng(34);
  for (auto kind : {TokenizerKind::Bilinear, TokenizerKind::Shared, TokenizerKind::Specific}) {
    MAEModel model(toy_config(kind), toy_parcellation());
    for (auto& e : model.params().entries())
      e.param->value.mat() += nerve::testing::random_matrix(int(e.param->value.rows()), int(e.param->value.cols()), rng, 0.1);
    const auto patches = model.patches_of(FCMatrix(random_correlation(12, rng)));
    const MaskPlan m = plan(model.layout().n_patch(), 5);
    const double err = nerve::testing::gradient_error(
        model.params(), [&](nn::Graph& g) { return model.forward_pretrain(g, patches, m).loss; });
    CAPTURE(to_string(kind));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("one step moves every parameter group") {
  Cohort cohort = small_cohort(6);
  MAEConfig c = toy_config();
  c.epochs = 2;
  c.warmup_epochs = 1;
  MAEModel model(c, Parcellation::contiguous({4, 5, 3}));
  std::vector<nn::Tensor> before;
  for (const auto& e : model.params().entries()) before.push_back(e.param->value);
  TrainState st = TrainState::fresh(model);
  train(model, cohort, st, {}, 1);
  std::map<std::string, bool> moved;
  const auto& entries = model.params().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string group = entries[i].name.substr(0, entries[i].name.find('.'));
    moved[group] = moved[group] || !(entries[i].param->value == before[i]);
  }
  for (const char* g : {"tokenizer", "cls", "encoder", "bridge", "mask_token", "decoder", "detokenizer"}) {
    CAPTURE(g);
    CHECK(moved[g]);
  }
  bool enc_pos = false, dec_pos = false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name == "encoder.pos") enc_pos = !(entries[i].param->value == before[i]);
    if (entries[i].name == "decoder.pos") dec_pos = !(entries[i].param->value == before[i]);
  }
  CHECK(enc_pos);
  CHECK(dec_pos);
}

TEST_CASE("training is deterministic and lr = 0 changes nothing") {
  const Cohort cohort = small_cohort(10);
  MAEConfig c = toy_config();
  MAEModel a(c, Parcellation::contiguous({4, 5, 3})), b(c, Parcellation::contiguous({4, 5, 3}));
  const auto ra = train(a, cohort), rb = train(b, cohort);
  REQUIRE(ra.curve.size() == 3);
  for (int e = 0; e < 3; ++e) CHECK(ra.curve[e].loss == rb.curve[e].loss);
  for (std::size_t i = 0; i < a.params().size(); ++i)
    CHECK(a.params().entries()[i].param->value == b.params().entries()[i].param->value);

  c.base_lr = 0.0;
  MAEModel z(c, Parcellation::contiguous({4, 5, 3}));
  std::vector<nn::Tensor> before;
  for (const auto& e : z.params().entries()) before.push_back(e.param->value);
  train(z, cohort);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(z.params().entries()[i].param->value == before[i]);

  c = toy_config();
  c.batch_size = 64;
  MAEModel w(c, Parcellation::contiguous({4, 5, 3}));
  CHECK(train(w, cohort).warnings.size() == 1);
}

TEST_CASE("resuming continues the schedule") {
  const Cohort cohort = small_cohort(8);
  MAEConfig c = toy_config();
  c.epochs = 4;
  MAEModel full(c, Parcellation::contiguous({4, 5, 3}));
  const auto whole = train(full, cohort);

  MAEModel part(c, Parcellation::contiguous({4, 5, 3}));
  TrainState st = TrainState::fresh(part);
  train(part, cohort, st, {}, 2);
  CHECK(st.epochs_done == 2);
  const auto path = std::filesystem::temp_directory_path() / "nerve_resume.ckpt";
  save_checkpoint(part, path, &st);
  LoadedCheckpoint ck = load_checkpoint(path);
  REQUIRE(ck.state);
  const auto rest = train(ck.model, cohort, *ck.state);
  REQUIRE(rest.curve.size() == 2);
  CHECK(rest.curve[0].epoch == 3);
  CHECK(rest.curve[1].loss == whole.curve[3].loss);
  CHECK(rest.curve[1].lr == whole.curve[3].lr);
  for (std::size_t i = 0; i < full.params().size(); ++i)
    CHECK(full.params().entries()[i].param->value == ck.model.params().entries()[i].param->value);
  std::filesystem::remove(path);
}

TEST_CASE("encode") {
  std::mt19937_64 rng(35);
  MAEModel model(toy_config(), toy_parcellation());
  const FCMatrix fc(random_correlation(12, rng));
  const Vector a = model.encode(model.patches_of(fc));
  CHECK(a.size() == 8);
  CHECK(model.encode(model.patches_of(fc)) == a);
  CHECK(model.encode(model.patches_of(fc), Pooling::Mean).size() == 8);
  for (int p = 0; p < model.layout().n_patch(); ++p) {
    auto patches = model.patches_of(fc);
    patches[p].block.array() += 0.1;
    CHECK((model.encode(patches) - a).norm() > 1e-8);
  }
  CHECK_THROWS_AS(parse_pooling("max"), ConfigError);
  CHECK(parse_pooling("mean") == Pooling::Mean);

  MAEConfig paper = MAEConfig::paper_scale();
  paper.encoder_depth = 1;  // keeps the test fast; width is what is checked
  paper.decoder_depth = 1;
  MAEModel big(paper, Parcellation::contiguous(nerve::testing::kSevenNetworkSizes));
  CHECK(big.encode(big.patches_of(FCMatrix(Matrix::Identity(400, 400)))).size() == 256);
}

TEST_CASE("encode is invariant to reordering patches with their positions") {
  std::mt19937_64 rng(36);
  MAEModel model(toy_config(), toy_parcellation());
  const auto patches = model.patches_of(FCMatrix(random_correlation(12, rng)));
  nn::Graph g(false);
  const Matrix seq = model.embed_sequence(g, patches).value().to_matrix();
  std::vector<int> order{0, 3, 5, 1, 6, 2, 4};
  Matrix shuffled(seq.rows(), seq.cols());
  for (int i = 0; i < 7; ++i) shuffled.row(i) = seq.row(order[i]);
  const Matrix a = model.encode_sequence(g, g.constant(nn::Tensor::from_matrix(seq))).value().to_matrix();
  const Matrix b = model.encode_sequence(g, g.constant(nn::Tensor::from_matrix(shuffled))).value().to_matrix();
  CHECK((a.row(0) - b.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("checkpoints") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "nerve_ckpt_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::mt19937_64 rng(37);
  MAEModel model(toy_config(), Parcellation({0, 1, 2, 0, 1, 2, 0, 1, 2, 2, 1, 0}));
  const auto patches = model.patches_of(FCMatrix(random_correlation(12, rng)));
  save_checkpoint(model, dir / "m.ckpt");

  {
    std::ifstream in(dir / "m.ckpt", std::ios::binary);
    char magic[10];
    in.read(magic, 10);
    CHECK(std::string(magic, 10) == "NERVECKPT1");
  }
  const LoadedCheckpoint ck = load_checkpoint(dir / "m.ckpt");
  CHECK_FALSE(ck.state);
  CHECK(ck.model.parcellation() == model.parcellation());
  CHECK(ck.model.config().same_architecture(model.config()));
  CHECK(ck.model.encode(ck.model.patches_of(FCMatrix(random_correlation(12, rng)))).size() == 8);
  std::mt19937_64 again(37);
  const auto same = model.patches_of(FCMatrix(random_correlation(12, again)));
  CHECK(ck.model.encode(same) == model.encode(same));
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    CHECK(ck.model.params().entries()[i].name == model.params().entries()[i].name);
    CHECK(ck.model.params().entries()[i].param->value == model.params().entries()[i].param->value);
  }

  const auto bytes = fs::file_size(dir / "m.ckpt");
  fs::copy_file(dir / "m.ckpt", dir / "t.ckpt");
  fs::resize_file(dir / "t.ckpt", bytes / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), CorruptFileError);
  fs::resize_file(dir / "t.ckpt", 5);
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), CorruptFileError);

  fs::copy_file(dir / "m.ckpt", dir / "f.ckpt");
  {
    std::fstream f(dir / "f.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(bytes - 40));
    char c = 0;
    f.read(&c, 1);
    f.seekp(static_cast<std::streamoff>(bytes - 40));
    c ^= 0x5a;
    f.write(&c, 1);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "f.ckpt"), CorruptFileError);

  fs::copy_file(dir / "m.ckpt", dir / "v.ckpt");
  {
    std::fstream f(dir / "v.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(10);
    const std::uint32_t v = 2;
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  CHECK_THROWS(load_checkpoint(dir / "v.ckpt"));

  MAEModel shared(toy_config(TokenizerKind::Shared), toy_parcellation());
  save_checkpoint(shared, dir / "s.ckpt");
  CHECK_THROWS_AS(load_checkpoint(dir / "s.ckpt", toy_config(TokenizerKind::Bilinear)), ConfigMismatchError);
  CHECK_NOTHROW(load_checkpoint(dir / "s.ckpt", toy_config(TokenizerKind::Shared)));
  fs::remove_all(dir);
}
