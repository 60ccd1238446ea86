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
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nerve/config.hpp"
#include "nerve/fc.hpp"
#include "nerve/mae.hpp"
#include "nerve/stats.hpp"

namespace nerve::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Parses `args` (args[0] is the program name) and runs one subcommand.
/// Errors are reported on `err` and mapped to exit codes 1 (config),
/// 2 (data) and 3 (numeric).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string version();

/// Evaluation settings from an `[eval]` section.
stats::DownstreamSettings eval_settings(const KeyValueConfig& section, std::uint64_t seed);
KeyValueConfig eval_config(const stats::DownstreamSettings& settings);

struct AblationSettings {
  MAEConfig model;
  stats::DownstreamSettings eval;
  Pooling pooling = Pooling::Mean;
  int perms = 20;
  int square_side = 6;
  int coarsen_factor = 2;
  std::uint64_t seed = 0;

  void validate() const;
  /// Reads `[model]`, `[eval]` and `[ablate]`; `seed` applies to every stage.
  static AblationSettings from_config(const KeyValueConfig& kv, std::uint64_t seed);
  KeyValueConfig to_config() const;
};

struct AblationRow {
  std::string table;  // tokenization, parcellation, permutation
  std::string arm;
  std::string tokenizer;
  std::string layout;
  int n_patch = 0;
  std::string target;
  std::optional<double> r;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::optional<double> delta;
  std::optional<double> p_paired;
  std::optional<double> p_perm;
  std::string status;  // ok, failed, summary
  std::string message;
};

/// Arm definition inside the ablation matrix.
struct Arm {
  std::string table;
  std::string name;
  TokenizerKind tokenizer = TokenizerKind::Bilinear;
  std::string layout;
  Parcellation parcellation;
  int perm_index = -1;
};

std::vector<Arm> ablation_arms(const Parcellation& base, const AblationSettings& settings);

/// Pretrains, embeds and evaluates every arm on `cohort`. Arm artifacts go under
/// `arm_dir` when it is non-empty. Failing arms become rows with status "failed".
std::vector<AblationRow> run_ablation(const Cohort& cohort, const Parcellation& base,
                                      const AblationSettings& settings, std::ostream& log,
                                      const std::filesystem::path& arm_dir = {});

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_ablation_csv(const std::filesystem::path& path);

inline constexpr const char* kAblationHeader =
    "table,arm,tokenizer,layout,n_patch,target,r,ci_low,ci_high,delta,p_paired,p_perm,status,message";
inline constexpr const char* kReportHeader = "target,r,ci_low,ci_high,delta,p_paired,p_perm,n,seed";

/// Embedding CSV `subject_id,e_0..e_{d-1}`.
void write_embeddings(const std::filesystem::path& path, const std::vector<std::string>& ids,
                      const Matrix& embeddings);
struct EmbeddingTable {
  std::vector<std::string> ids;
  Matrix values;
};
EmbeddingTable read_embeddings(const std::filesystem::path& path);

}  // namespace nerve::cli
