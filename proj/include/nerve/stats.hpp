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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nerve/fc.hpp"

namespace nerve::stats {

/// Fold assignment for k-fold cross-validation.
struct CVPlan {
  int k = 0;
  int bins = 0;
  std::uint64_t seed = 0;
  std::vector<int> fold;  // per subject

  std::vector<int> train_indices(int f) const;
  std::vector<int> test_indices(int f) const;
};

/// Subjects are binned by target quantile (a single bin when the target is
/// constant), each bin is shuffled and dealt round-robin into folds. Fold sizes
/// differ by at most one. Throws DataError when n < k.
CVPlan stratified_kfold(std::span<const double> targets, int k, int bins, std::uint64_t seed);

struct Residualization {
  std::vector<double> adjusted;   // all subjects, target minus fitted confound effect
  std::vector<double> coefficients;  // intercept, age[, sex]
  bool used_sex = true;
  std::vector<std::string> warnings;
};

/// OLS of the target on [1, age, sex] fit on `train` rows only and applied to every
/// subject. A rank-deficient design drops columns (sex first, then age) with a warning.
Residualization residualize_confounds(std::span<const double> targets,
                                      std::span<const Confounds> confounds,
                                      std::span<const int> train);

enum class KernelKind { Linear, Rbf };
std::string to_string(KernelKind k);
KernelKind parse_kernel(const std::string& name);

struct KRRModel {
  KernelKind kernel = KernelKind::Linear;
  double bandwidth = 1.0;  // rbf only
  double lambda = 0.0;
  Eigen::VectorXd dual;
  Matrix train_features;  // standardized
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;
};

/// alpha = (K + lambda n I)^-1 y on train-standardized features (unless `standardize`
/// is false). The RBF bandwidth is the median pairwise training distance. Throws
/// NumericError when the system is numerically singular.
KRRModel krr_fit(const Matrix& features, std::span<const double> targets, KernelKind kernel,
                 double lambda, bool standardize = true);
Eigen::VectorXd krr_predict(const KRRModel& model, const Matrix& features);

/// Inner k-fold CV on the given rows; returns the grid value with the highest
/// out-of-fold Pearson r (ties go to the smallest value). When that best r is not
/// significantly positive (one-sided Fisher z, 5%) the largest grid value is returned.
double select_lambda(const Matrix& features, std::span<const double> targets,
                     std::span<const double> grid, int inner_k, std::uint64_t seed,
                     KernelKind kernel = KernelKind::Linear, int bins = 5);

/// Product-moment correlation. Throws NumericError when either input is constant.
double pearson(std::span<const double> y, std::span<const double> yhat);

struct PredictionRecord {
  std::vector<std::string> ids;
  std::vector<double> truth;
  std::vector<double> predicted;
  std::vector<int> fold;

  std::size_t size() const { return truth.size(); }
};

struct StatResult {
  double r = 0.0;
  double low = 0.0;
  double high = 0.0;
  double delta = 0.0;
  int skipped = 0;
  std::optional<double> p_paired;
  std::optional<double> p_perm;
};

/// Percentile bootstrap over subjects. Replicate b draws from a stream seeded by
/// (seed, b). Constant replicates are skipped; more than 10% skipped is an error.
StatResult bootstrap_ci(const PredictionRecord& record, int replicates = 1000, double level = 0.95,
                        std::uint64_t seed = 0);

/// Two-sided paired bootstrap test of r_A - r_B; p is clamped to [1/B, 1].
double paired_bootstrap_test(const PredictionRecord& a, const PredictionRecord& b,
                             int replicates = 1000, std::uint64_t seed = 0);

/// One-sided: (1 + #{null >= observed}) / (1 + P).
double permutation_test(double observed, std::span<const double> null);

struct DownstreamSettings {
  int folds = 10;
  int bins = 5;
  int inner_folds = 5;
  std::vector<double> lambda_grid{1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0};
  KernelKind kernel = KernelKind::Linear;
  int bootstrap = 1000;
  std::uint64_t seed = 0;
  bool residualize_features = false;
};

struct TargetReport {
  std::string target;
  PredictionRecord record;
  StatResult stats;
  std::vector<double> fold_lambda;
  std::vector<std::string> warnings;
};

struct EvaluationReport {
  std::vector<TargetReport> targets;
  const TargetReport& at(const std::string& name) const;
};

/// For each target: residualize on training folds, standardize features on training
/// folds, pick lambda by inner CV, fit and predict the held-out fold; Pearson r and a
/// bootstrap CI on the concatenated out-of-fold predictions.
EvaluationReport run_downstream(const Matrix& embeddings, std::span<const std::string> ids,
                                std::span<const std::string> target_names,
                                const std::vector<std::vector<double>>& targets,
                                std::span<const Confounds> confounds,
                                const DownstreamSettings& settings);

}  // namespace nerve::stats
