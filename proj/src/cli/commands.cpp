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

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "nerve/checkpoint.hpp"
#include "nerve/cli.hpp"
#include "nerve/error.hpp"
#include "nerve/fc_io.hpp"
#include "nerve/rng.hpp"
#include "nerve/synth.hpp"

namespace fs = std::filesystem;

namespace nerve::cli {

namespace {

constexpr std::uint64_t kPairedStream = 0x70616972;

struct Globals {
  std::optional<std::int64_t> seed;
  std::string config;
  std::string out;
  bool force = false;
};

KeyValueConfig load_config(const Globals& g) {
  return g.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(g.config);
}

/// --seed wins, then `<section>.seed`, then the top-level `seed`.
std::uint64_t resolve_seed(const Globals& g, const KeyValueConfig& kv, const std::string& section) {
  if (g.seed) return static_cast<std::uint64_t>(*g.seed);
  if (!section.empty() && kv.has(section + ".seed"))
    return static_cast<std::uint64_t>(kv.get_int(section + ".seed"));
  return static_cast<std::uint64_t>(kv.get_int("seed", 0));
}

fs::path output_dir(const Globals& g, const std::vector<std::string>& files) {
  if (g.out.empty()) throw ConfigError("--out is required");
  const fs::path dir(g.out);
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ConfigError("--out " + g.out + " is not a directory");
  if (!g.force)
    for (const auto& f : files)
      if (fs::exists(dir / f))
        throw ConfigError((dir / f).string() + " already exists; pass --force to overwrite");
  fs::create_directories(dir);
  return dir;
}

void write_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed,
                    KeyValueConfig resolved, const std::map<std::string, std::string>& inputs) {
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw DataError("cannot write " + (dir / "manifest.txt").string());
  resolved.set("seed", static_cast<std::int64_t>(seed));
  // Loadable through --config to rerun the command.
  out << "# nerve run manifest\n" << resolved.to_text();
  out << "[run]\ncommand = " << command << "\nversion = " << version() << '\n';
  for (const auto& [k, v] : inputs) out << "input." << k << " = " << v << '\n';
}

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

Parcellation parcellation_for(const std::string& explicit_path, const std::string& cohort_path) {
  const fs::path p = explicit_path.empty() ? fs::path(cohort_path).parent_path() / "parcellation.csv"
                                           : fs::path(explicit_path);
  if (!fs::exists(p))
    throw DataError("parcellation " + p.string() + " not found (pass --parcellation)");
  return io::read_parcellation(p);
}

std::vector<std::vector<double>> target_columns(const Cohort& c) {
  std::vector<std::vector<double>> out;
  for (int t = 0; t < static_cast<int>(c.target_names.size()); ++t) out.push_back(c.target_column(t));
  return out;
}

std::vector<Confounds> confounds_of(const Cohort& c) {
  std::vector<Confounds> out;
  for (const auto& s : c.subjects) out.push_back(s.confounds);
  return out;
}

/// Embedding rows reordered to the cohort's subject order.
Matrix aligned_embeddings(const EmbeddingTable& table, const Cohort& cohort, const std::string& what) {
  std::map<std::string, int> row;
  for (int i = 0; i < static_cast<int>(table.ids.size()); ++i)
    if (!row.emplace(table.ids[i], i).second) throw DataError(what + ": duplicate subject " + table.ids[i]);
  if (row.size() != cohort.subjects.size())
    throw DataError(what + " has " + std::to_string(row.size()) + " subjects but the cohort has " +
                    std::to_string(cohort.subjects.size()));
  Matrix out(cohort.size(), table.values.cols());
  for (int i = 0; i < cohort.size(); ++i) {
    auto it = row.find(cohort.subjects[i].id);
    if (it == row.end()) throw DataError(what + " has no row for subject " + cohort.subjects[i].id);
    out.row(i) = table.values.row(it->second);
  }
  return out;
}

stats::EvaluationReport evaluate(const Matrix& emb, const Cohort& cohort, const stats::DownstreamSettings& s) {
  std::vector<std::string> ids;
  for (const auto& subj : cohort.subjects) ids.push_back(subj.id);
  return stats::run_downstream(emb, ids, cohort.target_names, target_columns(cohort), confounds_of(cohort), s);
}

std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

// --- subcommands ------------------------------------------------------------

int cmd_synth(const Globals& g, std::ostream& out) {
  const KeyValueConfig kv = load_config(g);
  synth::SynthSpec spec = synth::SynthSpec::from_config(kv.section("synth"));
  spec.seed = resolve_seed(g, kv, "synth");
  spec.validate();
  const fs::path dir = output_dir(g, {"cohort.csv", "parcellation.csv", "manifest.txt"});
  const Cohort cohort = synth::gen_cohort(spec);
  io::write_cohort(dir, cohort);
  io::write_parcellation(dir / "parcellation.csv", spec.parcellation());
  KeyValueConfig resolved;
  resolved.merge(spec.to_config(), "synth");
  write_manifest(dir, "synth", spec.seed, resolved, {});
  out << "wrote " << cohort.size() << " subjects (" << spec.region_count() << " regions) to " << dir.string()
      << '\n';
  return kExitOk;
}

struct PretrainArgs {
  std::string cohort;
  std::string parcellation;
  std::string tokenizer;
  std::string resume;
  int epochs = 0;
  int stop_after = 0;
};

int cmd_pretrain(const Globals& g, const PretrainArgs& a, std::ostream& out) {
  const KeyValueConfig kv = load_config(g);
  const Cohort cohort = io::read_cohort(a.cohort);
  const fs::path dir = output_dir(g, {"model.ckpt", "loss.csv", "manifest.txt"});

  std::optional<MAEModel> model;
  TrainState state;
  if (!a.resume.empty()) {
    LoadedCheckpoint ck = load_checkpoint(a.resume);
    if (!ck.state) throw DataError(a.resume + " carries no optimizer state and cannot be resumed");
    if (!a.tokenizer.empty() && parse_tokenizer_kind(a.tokenizer) != ck.model.config().tokenizer)
      throw ConfigMismatchError("--tokenizer " + a.tokenizer + " differs from the checkpoint (" +
                                to_string(ck.model.config().tokenizer) + ")");
    model.emplace(std::move(ck.model));
    state = std::move(*ck.state);
    out << "resuming at epoch " << state.epochs_done << " of " << model->config().epochs << '\n';
  } else {
    MAEConfig cfg = MAEConfig::from_config(kv.section("model"));
    cfg.seed = resolve_seed(g, kv, "model");
    if (!a.tokenizer.empty()) cfg.tokenizer = parse_tokenizer_kind(a.tokenizer);
    if (a.epochs > 0) cfg.epochs = a.epochs;
    cfg.validate();
    model.emplace(cfg, parcellation_for(a.parcellation, a.cohort));
    state = TrainState::fresh(*model);
  }

  std::ofstream loss(dir / "loss.csv");
  if (!loss) throw DataError("cannot write " + (dir / "loss.csv").string());
  loss << "epoch,loss,lr\n";
  const int total = model->config().epochs;
  const int every = std::max(1, total / 10);
  const TrainResult result = train(
      *model, cohort, state,
      [&](const LossPoint& p) {
        loss << p.epoch << ',' << format_double(p.loss) << ',' << format_double(p.lr) << '\n';
        if (p.epoch % every == 0 || p.epoch == 1) out << "epoch " << p.epoch << " loss " << p.loss << '\n';
      },
      a.stop_after);
  for (const auto& w : result.warnings) out << "warning: " << w << '\n';
  for (const auto& p : result.curve)
    if (!std::isfinite(p.loss)) throw NumericError("training loss diverged at epoch " + std::to_string(p.epoch));
  save_checkpoint(*model, dir / "model.ckpt", &state);

  KeyValueConfig resolved;
  resolved.merge(model->config().to_config(), "model");
  write_manifest(dir, "pretrain", model->config().seed, resolved,
                 {{"cohort", absolute(a.cohort)},
                  {"resume", a.resume.empty() ? "" : absolute(a.resume)},
                  {"epochs_done", std::to_string(state.epochs_done)}});
  out << "checkpoint " << (dir / "model.ckpt").string() << " at epoch " << state.epochs_done << '\n';
  return kExitOk;
}

struct EmbedArgs {
  std::string checkpoint;
  std::string cohort;
  std::string pooling = "cls";
};

int cmd_embed(const Globals& g, const EmbedArgs& a, std::ostream& out) {
  const Pooling pooling = parse_pooling(a.pooling);
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const Cohort cohort = io::read_cohort(a.cohort);
  const fs::path dir = output_dir(g, {"embeddings.csv", "manifest.txt"});
  const Matrix emb = encode_cohort(ck.model, cohort, pooling);
  if (!emb.allFinite()) throw NumericError("embeddings contain non-finite values");
  std::vector<std::string> ids;
  for (const auto& s : cohort.subjects) ids.push_back(s.id);
  write_embeddings(dir / "embeddings.csv", ids, emb);
  KeyValueConfig resolved;
  resolved.merge(ck.model.config().to_config(), "model");
  resolved.set("embed.pooling", to_string(pooling));
  write_manifest(dir, "embed", ck.model.config().seed, resolved,
                 {{"checkpoint", absolute(a.checkpoint)}, {"cohort", absolute(a.cohort)}});
  out << "wrote " << emb.rows() << " x " << emb.cols() << " embeddings\n";
  return kExitOk;
}

struct EvalArgs {
  std::string embeddings;
  std::string cohort;
  std::string compare;
  std::vector<std::string> null;
};

void write_null(const fs::path& path, const std::vector<double>& rs) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "perm_index,r\n";
  for (std::size_t i = 0; i < rs.size(); ++i) f << i + 1 << ',' << format_double(rs[i]) << '\n';
}

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  const KeyValueConfig kv = load_config(g);
  const auto settings = eval_settings(kv.section("eval"), resolve_seed(g, kv, "eval"));
  const Cohort cohort = io::read_cohort(a.cohort);
  const fs::path dir = output_dir(g, {"report.csv", "predictions.csv", "manifest.txt"});

  const Matrix emb = aligned_embeddings(read_embeddings(a.embeddings), cohort, a.embeddings);
  const auto report = evaluate(emb, cohort, settings);

  std::optional<stats::EvaluationReport> other;
  if (!a.compare.empty())
    other = evaluate(aligned_embeddings(read_embeddings(a.compare), cohort, a.compare), cohort, settings);

  std::map<std::string, std::vector<double>> null;
  for (const auto& path : a.null) {
    const auto r = evaluate(aligned_embeddings(read_embeddings(path), cohort, path), cohort, settings);
    for (const auto& t : r.targets) null[t.target].push_back(t.stats.r);
  }

  std::ofstream rep(dir / "report.csv");
  if (!rep) throw DataError("cannot write report");
  rep << kReportHeader << '\n';
  std::ofstream pred(dir / "predictions.csv");
  pred << "target,subject_id,truth,predicted,fold\n";
  for (const auto& t : report.targets) {
    std::optional<double> p_paired, p_perm;
    if (other)
      p_paired = stats::paired_bootstrap_test(t.record, other->at(t.target).record, settings.bootstrap,
                                              derive_seed(settings.seed, kPairedStream));
    if (!a.null.empty()) {
      p_perm = stats::permutation_test(t.stats.r, null[t.target]);
      write_null(dir / ("null_" + t.target + ".csv"), null[t.target]);
    }
    rep << t.target << ',' << format_double(t.stats.r) << ',' << format_double(t.stats.low) << ','
        << format_double(t.stats.high) << ',' << format_double(t.stats.delta) << ',' << opt_field(p_paired)
        << ',' << opt_field(p_perm) << ',' << t.record.size() << ',' << settings.seed << '\n';
    for (std::size_t i = 0; i < t.record.size(); ++i)
      pred << t.target << ',' << t.record.ids[i] << ',' << format_double(t.record.truth[i]) << ','
           << format_double(t.record.predicted[i]) << ',' << t.record.fold[i] << '\n';
    for (const auto& w : t.warnings) out << "warning: " << t.target << ": " << w << '\n';
    out << t.target << ": r = " << t.stats.r << " [" << t.stats.low << ", " << t.stats.high << "]";
    if (p_paired) out << " p_paired = " << *p_paired;
    if (p_perm) out << " p_perm = " << *p_perm;
    out << '\n';
  }

  KeyValueConfig resolved;
  resolved.merge(eval_config(settings), "eval");
  std::map<std::string, std::string> inputs{{"embeddings", absolute(a.embeddings)}, {"cohort", absolute(a.cohort)}};
  if (!a.compare.empty()) inputs["compare"] = absolute(a.compare);
  for (std::size_t i = 0; i < a.null.size(); ++i) inputs["null." + std::to_string(i + 1)] = absolute(a.null[i]);
  write_manifest(dir, "eval", settings.seed, resolved, inputs);
  return kExitOk;
}

struct AblateArgs {
  std::string cohort;
  std::string parcellation;
  int perms = 0;
};

int ablate_into(const fs::path& dir, const Cohort& cohort, const Parcellation& parc,
                const AblationSettings& settings, std::ostream& out) {
  const auto rows = run_ablation(cohort, parc, settings, out, dir / "arms");
  write_ablation_csv(dir / "ablation.csv", rows);
  std::map<std::string, std::vector<double>> null;
  for (const auto& r : rows)
    if (r.table == "permutation" && r.status == "ok" && r.r) null[r.target].push_back(*r.r);
  for (const auto& [target, rs] : null) write_null(dir / ("null_" + target + ".csv"), rs);
  int failed = 0;
  for (const auto& r : rows) failed += r.status == "failed";
  out << "wrote " << rows.size() << " rows to " << (dir / "ablation.csv").string();
  if (failed) out << " (" << failed << " failed)";
  out << '\n';
  return kExitOk;
}

int cmd_ablate(const Globals& g, const AblateArgs& a, std::ostream& out) {
  const KeyValueConfig kv = load_config(g);
  AblationSettings settings = AblationSettings::from_config(kv, resolve_seed(g, kv, ""));
  if (a.perms > 0) settings.perms = a.perms;
  settings.validate();
  const Cohort cohort = io::read_cohort(a.cohort);
  const Parcellation parc = parcellation_for(a.parcellation, a.cohort);
  const fs::path dir = output_dir(g, {"ablation.csv", "manifest.txt"});
  ablate_into(dir, cohort, parc, settings, out);
  write_manifest(dir, "ablate", settings.seed, settings.to_config(), {{"cohort", absolute(a.cohort)}});
  return kExitOk;
}

int cmd_reproduce(const Globals& g, int perms, std::ostream& out) {
  const KeyValueConfig kv = load_config(g);
  const std::uint64_t seed = resolve_seed(g, kv, "");
  synth::SynthSpec spec = synth::SynthSpec::from_config(kv.section("synth"));
  spec.seed = g.seed || !kv.has("synth.seed") ? seed : static_cast<std::uint64_t>(kv.get_int("synth.seed"));
  spec.validate();
  AblationSettings settings = AblationSettings::from_config(kv, seed);
  if (perms > 0) settings.perms = perms;
  settings.validate();

  const fs::path dir = output_dir(g, {"ablation.csv", "manifest.txt", "cohort"});
  const fs::path cohort_dir = dir / "cohort";
  const Cohort cohort = synth::gen_cohort(spec);
  io::write_cohort(cohort_dir, cohort);
  io::write_parcellation(cohort_dir / "parcellation.csv", spec.parcellation());
  out << "synthesized " << cohort.size() << " subjects\n";
  ablate_into(dir, cohort, spec.parcellation(), settings, out);

  KeyValueConfig resolved = settings.to_config();
  resolved.merge(spec.to_config(), "synth");
  write_manifest(dir, "reproduce-ablations", seed, resolved, {});
  return kExitOk;
}

}  // namespace

std::string version() { return NERVE_VERSION; }

stats::DownstreamSettings eval_settings(const KeyValueConfig& e, std::uint64_t seed) {
  stats::DownstreamSettings s;
  s.seed = seed;
  s.folds = static_cast<int>(e.get_int("folds", s.folds));
  s.bins = static_cast<int>(e.get_int("bins", s.bins));
  s.inner_folds = static_cast<int>(e.get_int("inner_folds", s.inner_folds));
  if (e.has("lambda_grid")) {
    s.lambda_grid.clear();
    std::istringstream in(e.get_string("lambda_grid"));
    for (std::string tok; in >> tok;) {
      if (!tok.empty() && tok.back() == ',') tok.pop_back();
      if (!tok.empty()) s.lambda_grid.push_back(io::parse_double(tok, "eval.lambda_grid"));
    }
    if (s.lambda_grid.empty()) throw ConfigError("eval.lambda_grid is empty");
    for (double l : s.lambda_grid)
      if (!(l >= 0.0)) throw ConfigError("eval.lambda_grid values must be >= 0");
  }
  s.kernel = stats::parse_kernel(e.get_string("kernel", stats::to_string(s.kernel)));
  s.bootstrap = static_cast<int>(e.get_int("bootstrap", s.bootstrap));
  s.residualize_features = e.get_bool("residualize_features", s.residualize_features);
  if (s.folds < 2) throw ConfigError("eval.folds must be >= 2");
  if (s.inner_folds < 2) throw ConfigError("eval.inner_folds must be >= 2");
  if (s.bins < 1) throw ConfigError("eval.bins must be >= 1");
  if (s.bootstrap < 1) throw ConfigError("eval.bootstrap must be >= 1");
  return s;
}

KeyValueConfig eval_config(const stats::DownstreamSettings& s) {
  KeyValueConfig kv;
  kv.set("folds", s.folds);
  kv.set("bins", s.bins);
  kv.set("inner_folds", s.inner_folds);
  std::string grid;
  for (double l : s.lambda_grid) grid += (grid.empty() ? "" : " ") + format_double(l);
  kv.set("lambda_grid", grid);
  kv.set("kernel", stats::to_string(s.kernel));
  kv.set("bootstrap", s.bootstrap);
  kv.set("residualize_features", s.residualize_features);
  kv.set("seed", static_cast<std::int64_t>(s.seed));
  return kv;
}

void write_embeddings(const fs::path& path, const std::vector<std::string>& ids, const Matrix& e) {
  if (static_cast<Eigen::Index>(ids.size()) != e.rows()) throw ShapeError("embedding ids and rows differ");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "subject_id";
  for (Eigen::Index j = 0; j < e.cols(); ++j) out << ",e_" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    out << ids[i];
    for (Eigen::Index j = 0; j < e.cols(); ++j) out << ',' << format_double(e(i, j));
    out << '\n';
  }
}

EmbeddingTable read_embeddings(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
  const auto header = io::split_fields(line);
  if (header.size() < 2 || header[0] != "subject_id") throw DataError(path.string() + ": expected subject_id,e_0,...");
  const std::size_t d = header.size() - 1;
  EmbeddingTable t;
  std::vector<double> values;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = io::split_fields(line);
    if (f.size() != d + 1)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(d + 1) +
                      " fields");
    t.ids.push_back(f[0]);
    for (std::size_t j = 1; j <= d; ++j) values.push_back(io::parse_double(f[j], path.string()));
  }
  t.values = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(t.ids.size()), static_cast<Eigen::Index>(d));
  return t;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"nerve: network-aware bilinear tokenization for functional connectivity MAEs"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Global seed (overrides config seeds)");
  app.add_option("--config", g.config, "Key-value config file with [synth] [model] [eval] [ablate] sections")
      ->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory (created when missing)");
  app.add_flag("--force", g.force, "Overwrite existing outputs");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort")
                    ->footer("Writes cohort.csv (subject_id,fc_path,age,sex,<targets>), fc/<id>.fcm,\n"
                             "parcellation.csv (region,network) and manifest.txt.");

  PretrainArgs pa;
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the masked autoencoder")
                       ->footer("Writes model.ckpt, loss.csv (epoch,loss,lr) and manifest.txt.");
  pretrain->add_option("--cohort", pa.cohort, "Cohort manifest (cohort.csv)")->required()->check(CLI::ExistingFile);
  pretrain->add_option("--parcellation", pa.parcellation, "Parcellation CSV (default: next to the cohort)");
  pretrain->add_option("--tokenizer", pa.tokenizer, "shared | specific | bilinear");
  pretrain->add_option("--epochs", pa.epochs, "Total epochs (overrides model.epochs)");
  pretrain->add_option("--resume", pa.resume, "Continue from a checkpoint with optimizer state")
      ->check(CLI::ExistingFile);
  pretrain->add_option("--stop-after", pa.stop_after, "Stop after this epoch; the schedule is unchanged");

  EmbedArgs ea;
  auto* embed = app.add_subcommand("embed", "Extract frozen embeddings")
                    ->footer("Writes embeddings.csv (subject_id,e_0..e_{d-1}) and manifest.txt.");
  embed->add_option("--checkpoint", ea.checkpoint, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
  embed->add_option("--cohort", ea.cohort, "Cohort manifest")->required()->check(CLI::ExistingFile);
  embed->add_option("--pooling", ea.pooling, "cls | mean")->capture_default_str();

  EvalArgs va;
  auto* eval = app.add_subcommand("eval", "Kernel ridge evaluation of embeddings")
                   ->footer("Writes report.csv (target,r,ci_low,ci_high,delta,p_paired,p_perm,n,seed),\n"
                            "predictions.csv (target,subject_id,truth,predicted,fold),\n"
                            "null_<target>.csv (perm_index,r) with --null, and manifest.txt.");
  eval->add_option("--embeddings", va.embeddings, "Embeddings CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--cohort", va.cohort, "Cohort manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--compare", va.compare, "Second embeddings CSV for the paired bootstrap test")
      ->check(CLI::ExistingFile);
  eval->add_option("--null", va.null, "Embeddings from region-permuted runs for the permutation test")
      ->check(CLI::ExistingFile);

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Run the tokenizer and parcellation ablation matrix")
                     ->footer(std::string("Writes ablation.csv (") + kAblationHeader +
                              "),\nnull_<target>.csv (perm_index,r), arms/<arm>/ and manifest.txt.");
  ablate->add_option("--cohort", aa.cohort, "Cohort manifest")->required()->check(CLI::ExistingFile);
  ablate->add_option("--parcellation", aa.parcellation, "Parcellation CSV (default: next to the cohort)");
  ablate->add_option("--perms", aa.perms, "Number of region-permutation baselines (overrides ablate.perms)");

  int rperms = 0;
  auto* reproduce = app.add_subcommand("reproduce-ablations", "synth, then the full ablation matrix")
                        ->footer("Writes cohort/, ablation.csv, null_<target>.csv, arms/ and manifest.txt.");
  reproduce->add_option("--perms", rperms, "Number of region-permutation baselines");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(g, out);
    if (*pretrain) return cmd_pretrain(g, pa, out);
    if (*embed) return cmd_embed(g, ea, out);
    if (*eval) return cmd_eval(g, va, out);
    if (*ablate) return cmd_ablate(g, aa, out);
    if (*reproduce) return cmd_reproduce(g, rperms, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitConfig;
}

}  // namespace nerve::cli
