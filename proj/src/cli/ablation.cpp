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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "nerve/cli.hpp"
#include "nerve/error.hpp"
#include "nerve/fc_io.hpp"
#include "nerve/rng.hpp"

namespace nerve::cli {

namespace {

constexpr std::uint64_t kPermStream = 0x7065726d;
constexpr std::uint64_t kPairedStream = 0x70616972;

std::string perm_name(int i) {
  std::ostringstream s;
  s << "perm-" << std::setw(3) << std::setfill('0') << i;
  return s.str();
}

std::string field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

struct ArmRun {
  bool ok = false;
  std::string message;
  int n_patch = 0;
  stats::EvaluationReport report;
};

ArmRun run_arm(const Arm& arm, const Cohort& cohort, const AblationSettings& settings,
               const std::filesystem::path& dir) {
  ArmRun out;
  try {
    MAEConfig cfg = settings.model;
    cfg.tokenizer = arm.tokenizer;
    MAEModel model(cfg, arm.parcellation);
    out.n_patch = model.layout().n_patch();
    TrainState state = TrainState::fresh(model);
    const TrainResult trained = train(model, cohort, state);
    const Matrix emb = encode_cohort(model, cohort, settings.pooling);
    if (!emb.allFinite()) throw NumericError("embeddings contain non-finite values");

    std::vector<std::string> ids;
    std::vector<Confounds> conf;
    for (const auto& s : cohort.subjects) {
      ids.push_back(s.id);
      conf.push_back(s.confounds);
    }
    std::vector<std::vector<double>> targets;
    for (int t = 0; t < static_cast<int>(cohort.target_names.size()); ++t)
      targets.push_back(cohort.target_column(t));
    out.report = stats::run_downstream(emb, ids, cohort.target_names, targets, conf, settings.eval);

    if (!dir.empty()) {
      std::filesystem::create_directories(dir);
      std::ofstream loss(dir / "loss.csv");
      loss << "epoch,loss,lr\n";
      for (const auto& p : trained.curve)
        loss << p.epoch << ',' << format_double(p.loss) << ',' << format_double(p.lr) << '\n';
      write_embeddings(dir / "embeddings.csv", ids, emb);
    }
    out.ok = true;
  } catch (const Error& e) {
    out.message = e.what();
  }
  return out;
}

}  // namespace

void AblationSettings::validate() const {
  model.validate();
  if (perms < 1) throw ConfigError("ablate.perms must be >= 1");
  if (square_side < 1) throw ConfigError("ablate.square_side must be >= 1");
  if (coarsen_factor < 2) throw ConfigError("ablate.coarsen_factor must be >= 2");
  if (eval.folds < 2) throw ConfigError("eval.folds must be >= 2");
  if (eval.bootstrap < 1) throw ConfigError("eval.bootstrap must be >= 1");
}

AblationSettings AblationSettings::from_config(const KeyValueConfig& kv, std::uint64_t seed) {
  AblationSettings s;
  s.seed = seed;
  s.model = MAEConfig::from_config(kv.section("model"));
  s.model.seed = seed;
  s.eval = eval_settings(kv.section("eval"), seed);
  const KeyValueConfig a = kv.section("ablate");
  s.pooling = parse_pooling(a.get_string("pooling", to_string(s.pooling)));
  s.perms = static_cast<int>(a.get_int("perms", s.perms));
  s.square_side = static_cast<int>(a.get_int("square_side", s.square_side));
  s.coarsen_factor = static_cast<int>(a.get_int("coarsen_factor", s.coarsen_factor));
  return s;
}

KeyValueConfig AblationSettings::to_config() const {
  KeyValueConfig kv;
  kv.set("seed", static_cast<std::int64_t>(seed));
  kv.merge(model.to_config(), "model");
  kv.merge(eval_config(eval), "eval");
  kv.set("ablate.pooling", to_string(pooling));
  kv.set("ablate.perms", perms);
  kv.set("ablate.square_side", square_side);
  kv.set("ablate.coarsen_factor", coarsen_factor);
  return kv;
}

std::vector<Arm> ablation_arms(const Parcellation& base, const AblationSettings& settings) {
  const TokenizerKind kinds[] = {TokenizerKind::Shared, TokenizerKind::Specific, TokenizerKind::Bilinear};
  std::vector<Arm> arms;
  for (auto k : kinds)
    arms.push_back({"tokenization", "network-" + to_string(k), k, "network", base, -1});
  const std::string square = "square-" + std::to_string(settings.square_side);
  const Parcellation tiles = square_layout(base.region_count(), settings.square_side).first;
  for (auto k : kinds) arms.push_back({"parcellation", square + "-" + to_string(k), k, square, tiles, -1});
  arms.push_back({"parcellation", "coarse-bilinear", TokenizerKind::Bilinear, "coarse",
                  coarsen(base, settings.coarsen_factor), -1});
  arms.push_back({"parcellation", "fine-bilinear", TokenizerKind::Bilinear, "network", base, -1});
  for (int i = 1; i <= settings.perms; ++i)
    arms.push_back({"permutation", perm_name(i), TokenizerKind::Bilinear, "permuted",
                    permute_regions(base, derive_seed(settings.seed, kPermStream, i)), i});
  return arms;
}

std::vector<AblationRow> run_ablation(const Cohort& cohort, const Parcellation& base,
                                      const AblationSettings& settings, std::ostream& log,
                                      const std::filesystem::path& arm_dir) {
  settings.validate();
  cohort.validate();
  if (cohort.region_count() != base.region_count())
    throw DataError("cohort has " + std::to_string(cohort.region_count()) + " regions but the parcellation has " +
                    std::to_string(base.region_count()));
  const auto arms = ablation_arms(base, settings);

  // Arms sharing tokenizer, layout and permutation reuse one run.
  std::map<std::tuple<TokenizerKind, std::string, int>, ArmRun> runs;
  std::vector<const ArmRun*> per_arm;
  for (const auto& arm : arms) {
    const auto key = std::make_tuple(arm.tokenizer, arm.layout, arm.perm_index);
    auto it = runs.find(key);
    if (it == runs.end()) {
      log << "arm " << arm.name << " ..." << std::flush;
      ArmRun r = run_arm(arm, cohort, settings, arm_dir.empty() ? arm_dir : arm_dir / arm.name);
      log << (r.ok ? " ok" : " failed: " + r.message) << '\n';
      it = runs.emplace(key, std::move(r)).first;
    }
    per_arm.push_back(&it->second);
  }

  const ArmRun* reference = nullptr;
  for (std::size_t a = 0; a < arms.size(); ++a)
    if (arms[a].name == "network-bilinear" && per_arm[a]->ok) reference = per_arm[a];

  std::vector<AblationRow> rows;
  for (const auto& target : cohort.target_names) {
    std::vector<double> null;
    for (std::size_t a = 0; a < arms.size(); ++a)
      if (arms[a].perm_index > 0 && per_arm[a]->ok) null.push_back(per_arm[a]->report.at(target).stats.r);

    for (std::size_t a = 0; a < arms.size(); ++a) {
      const Arm& arm = arms[a];
      const ArmRun& run = *per_arm[a];
      AblationRow row;
      row.table = arm.table;
      row.arm = arm.name;
      row.tokenizer = to_string(arm.tokenizer);
      row.layout = arm.layout;
      row.n_patch = run.n_patch;
      row.target = target;
      if (!run.ok) {
        row.status = "failed";
        row.message = run.message;
        rows.push_back(row);
        continue;
      }
      const auto& tr = run.report.at(target);
      row.r = tr.stats.r;
      row.ci_low = tr.stats.low;
      row.ci_high = tr.stats.high;
      row.delta = tr.stats.delta;
      row.status = "ok";
      if (arm.perm_index < 0) {
        if (reference && &run != reference)
          row.p_paired = stats::paired_bootstrap_test(tr.record, reference->report.at(target).record,
                                                      settings.eval.bootstrap,
                                                      derive_seed(settings.seed, kPairedStream));
        if (!null.empty()) row.p_perm = stats::permutation_test(tr.stats.r, null);
      }
      rows.push_back(row);
    }

    AblationRow summary;
    summary.table = "permutation";
    summary.arm = "permutation-summary";
    summary.tokenizer = "bilinear";
    summary.layout = "permuted";
    summary.n_patch = build_layout(base).n_patch();
    summary.target = target;
    summary.status = "summary";
    if (!null.empty()) {
      double mean = 0.0;
      for (double v : null) mean += v;
      mean /= static_cast<double>(null.size());
      double var = 0.0;
      for (double v : null) var += (v - mean) * (v - mean);
      summary.r = mean;
      summary.delta = null.size() > 1 ? std::sqrt(var / static_cast<double>(null.size() - 1)) : 0.0;
      summary.message = "mean and sd over " + std::to_string(null.size()) + " permutations";
    } else {
      summary.message = "no successful permutation arms";
    }
    rows.push_back(summary);
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << kAblationHeader << '\n';
  for (const auto& r : rows) {
    out << r.table << ',' << r.arm << ',' << r.tokenizer << ',' << r.layout << ',' << r.n_patch << ','
        << r.target << ',' << field(r.r) << ',' << field(r.ci_low) << ',' << field(r.ci_high) << ','
        << field(r.delta) << ',' << field(r.p_paired) << ',' << field(r.p_perm) << ',' << r.status << ','
        << csv_escape(r.message) << '\n';
  }
}

std::vector<AblationRow> read_ablation_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kAblationHeader) throw DataError(path.string() + ": unexpected header");
  auto opt = [&](const std::string& s, const char* what) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    return io::parse_double(s, what);
  };
  std::vector<AblationRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // Split on commas; the trailing message may be quoted.
    std::vector<std::string> f;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        f.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    f.push_back(cur);
    if (f.size() != 14) throw DataError(path.string() + ": expected 14 columns, got " + std::to_string(f.size()));
    AblationRow r;
    r.table = f[0];
    r.arm = f[1];
    r.tokenizer = f[2];
    r.layout = f[3];
    r.n_patch = io::parse_int(f[4], "n_patch");
    r.target = f[5];
    r.r = opt(f[6], "r");
    r.ci_low = opt(f[7], "ci_low");
    r.ci_high = opt(f[8], "ci_high");
    r.delta = opt(f[9], "delta");
    r.p_paired = opt(f[10], "p_paired");
    r.p_perm = opt(f[11], "p_perm");
    r.status = f[12];
    r.message = f[13];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace nerve::cli
