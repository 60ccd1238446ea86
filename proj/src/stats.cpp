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

#include "nerve/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "nerve/config.hpp"
#include "nerve/error.hpp"
#include "nerve/rng.hpp"

namespace nerve::stats {

// --- folds ----------------------------------------------------------------

std::vector<int> CVPlan::train_indices(int f) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] != f) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> CVPlan::test_indices(int f) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] == f) out.push_back(static_cast<int>(i));
  return out;
}

CVPlan stratified_kfold(std::span<const double> targets, int k, int bins, std::uint64_t seed) {
  const int n = static_cast<int>(targets.size());
  if (k < 2) throw ConfigError("cross-validation needs k >= 2");
  if (n < k) throw DataError("cannot split " + std::to_string(n) + " subjects into " + std::to_string(k) + " folds");
  if (bins < 1) throw ConfigError("stratification needs at least one bin");
  const auto [lo, hi] = std::minmax_element(targets.begin(), targets.end());
  CVPlan plan;
  plan.k = k;
  plan.bins = (*lo == *hi) ? 1 : std::min(bins, n);
  plan.seed = seed;
  plan.fold.assign(n, 0);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return targets[a] < targets[b]; });
  std::vector<std::vector<int>> members(plan.bins);
  for (int rank = 0; rank < n; ++rank)
    members[static_cast<std::size_t>(rank) * plan.bins / n].push_back(order[rank]);

  std::mt19937_64 rng(seed);
  int next = 0;
  for (auto& bin : members) {
    for (int i = static_cast<int>(bin.size()) - 1; i > 0; --i) {
      std::uniform_int_distribution<int> pick(0, i);
      std::swap(bin[i], bin[pick(rng)]);
    }
    for (int s : bin) plan.fold[s] = next++ % k;
  }
  return plan;
}

// --- confounds ------------------------------------------------------------

Residualization residualize_confounds(std::span<const double> targets,
                                      std::span<const Confounds> confounds,
                                      std::span<const int> train) {
  if (targets.size() != confounds.size()) throw DataError("targets and confounds are not aligned");
  if (train.empty()) throw DataError("residualization needs training rows");
  Residualization out;
  auto design = [&](std::span<const int> rows, int cols) {
    Eigen::MatrixXd x(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& c = confounds[rows[r]];
      x(r, 0) = 1.0;
      if (cols > 1) x(r, 1) = c.age;
      if (cols > 2) x(r, 2) = c.sex;
    }
    return x;
  };
  Eigen::VectorXd y(train.size());
  for (std::size_t r = 0; r < train.size(); ++r) y(r) = targets[train[r]];

  Eigen::VectorXd coef;
  int cols = 3;
  for (; cols >= 1; --cols) {
    const Eigen::MatrixXd x = design(train, cols);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() == cols) {
      coef = qr.solve(y);
      break;
    }
    out.warnings.push_back(cols == 3 ? "confound design rank deficient on training rows; dropped sex"
                                     : "confound design rank deficient on training rows; dropped age");
  }
  out.used_sex = cols == 3;
  out.coefficients.assign(coef.data(), coef.data() + coef.size());

  std::vector<int> all(targets.size());
  std::iota(all.begin(), all.end(), 0);
  const Eigen::VectorXd fitted = design(all, cols) * coef;
  out.adjusted.resize(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) out.adjusted[i] = targets[i] - fitted(i);
  return out;
}

// --- kernel ridge ---------------------------------------------------------

std::string to_string(KernelKind k) { return k == KernelKind::Linear ? "linear" : "rbf"; }

KernelKind parse_kernel(const std::string& name) {
  if (name == "linear") return KernelKind::Linear;
  if (name == "rbf") return KernelKind::Rbf;
  throw ConfigError("unknown kernel '" + name + "' (expected linear or rbf)");
}

namespace {

Eigen::MatrixXd squared_distances(const Matrix& a, const Matrix& b) {
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::VectorXd nb = b.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * a * b.transpose();
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

Eigen::MatrixXd kernel_matrix(const KRRModel& m, const Matrix& a, const Matrix& b) {
  if (m.kernel == KernelKind::Linear) return a * b.transpose();
  const double inv = 1.0 / (2.0 * m.bandwidth * m.bandwidth);
  return (-inv * squared_distances(a, b)).array().exp().matrix();
}

Matrix standardize_with(const Matrix& x, const KRRModel& m) {
  Matrix out = x.rowwise() - m.mean;
  out.array().rowwise() /= m.scale.array();
  return out;
}

}  // namespace

KRRModel krr_fit(const Matrix& features, std::span<const double> targets, KernelKind kernel,
                 double lambda, bool standardize) {
  const auto n = features.rows();
  if (n == 0 || static_cast<std::size_t>(n) != targets.size())
    throw DataError("krr_fit: features and targets are not aligned");
  if (!(lambda >= 0.0)) throw ConfigError("krr_fit: lambda must be >= 0");
  KRRModel m;
  m.kernel = kernel;
  m.lambda = lambda;
  if (standardize) {
    m.mean = features.colwise().mean();
    m.scale = ((features.rowwise() - m.mean).array().square().colwise().sum() / static_cast<double>(n))
                  .sqrt()
                  .matrix();
    for (Eigen::Index j = 0; j < m.scale.size(); ++j)
      if (!(m.scale(j) > 1e-12)) m.scale(j) = 1.0;
  } else {
    m.mean = Eigen::RowVectorXd::Zero(features.cols());
    m.scale = Eigen::RowVectorXd::Ones(features.cols());
  }
  m.train_features = standardize_with(features, m);
  if (kernel == KernelKind::Rbf) {
    const Eigen::MatrixXd d = squared_distances(m.train_features, m.train_features);
    std::vector<double> dist;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) dist.push_back(std::sqrt(d(i, j)));
    if (dist.empty()) {
      m.bandwidth = 1.0;
    } else {
      auto mid = dist.begin() + dist.size() / 2;
      std::nth_element(dist.begin(), mid, dist.end());
      m.bandwidth = *mid > 0.0 ? *mid : 1.0;
    }
  }
  Eigen::MatrixXd system = kernel_matrix(m, m.train_features, m.train_features);
  system.diagonal().array() += lambda * static_cast<double>(n);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(system);
  // LDLT tolerates semidefinite input, so look at the pivots as well as rcond.
  const Eigen::VectorXd piv = ldlt.vectorD();
  const double piv_max = piv.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-13) || !(piv.minCoeff() > 1e-13 * piv_max))
    throw NumericError("kernel ridge system is singular (lambda = " + format_double(lambda) + ")");
  const Eigen::Map<const Eigen::VectorXd> y(targets.data(), n);
  m.dual = ldlt.solve(y);
  if (!m.dual.allFinite()) throw NumericError("kernel ridge solve produced non-finite coefficients");
  return m;
}

Eigen::VectorXd krr_predict(const KRRModel& model, const Matrix& features) {
  if (features.cols() != model.train_features.cols()) throw ShapeError("krr_predict: feature width mismatch");
  return kernel_matrix(model, standardize_with(features, model), model.train_features) * model.dual;
}

namespace {

Matrix take_rows(const Matrix& x, std::span<const int> rows) {
  Matrix out(rows.size(), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(r) = x.row(rows[r]);
  return out;
}

std::vector<double> take(std::span<const double> v, std::span<const int> rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(v[r]);
  return out;
}

}  // namespace

double select_lambda(const Matrix& features, std::span<const double> targets,
                     std::span<const double> grid, int inner_k, std::uint64_t seed, KernelKind kernel,
                     int bins) {
  if (grid.empty()) throw ConfigError("lambda grid is empty");
  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.size() == 1) return sorted.front();
  const CVPlan plan = stratified_kfold(targets, inner_k, bins, seed);
  double best = sorted.front();
  double best_r = -std::numeric_limits<double>::infinity();
  for (double lambda : sorted) {
    std::vector<double> pred(targets.size());
    bool ok = true;
    for (int f = 0; f < plan.k && ok; ++f) {
      const auto tr = plan.train_indices(f);
      const auto te = plan.test_indices(f);
      try {
        const auto ytr = take(targets, tr);
        const KRRModel m = krr_fit(take_rows(features, tr), ytr, kernel, lambda);
        const Eigen::VectorXd p = krr_predict(m, take_rows(features, te));
        for (std::size_t i = 0; i < te.size(); ++i) pred[te[i]] = p(i);
      } catch (const NumericError&) {
        ok = false;
      }
    }
    if (!ok) continue;
    double r = -std::numeric_limits<double>::infinity();
    try {
      r = pearson(targets, pred);
    } catch (const NumericError&) {
    }
    if (r > best_r) {
      best_r = r;
      best = lambda;
    }
  }
  // No inner evidence of signal (one-sided Fisher z at 5%): take the strongest shrinkage.
  const double n = static_cast<double>(targets.size());
  if (n > 3 && !(std::atanh(std::min(best_r, 0.999999)) * std::sqrt(n - 3.0) > 1.6448536269514722))
    return sorted.back();
  return best;
}

// --- correlation and resampling -------------------------------------------

double pearson(std::span<const double> y, std::span<const double> yhat) {
  const std::size_t n = y.size();
  if (n != yhat.size()) throw DataError("pearson: inputs differ in length");
  if (n < 2) throw NumericError("pearson: needs at least two observations");
  double my = 0.0, mp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    my += y[i];
    mp += yhat[i];
  }
  my /= static_cast<double>(n);
  mp /= static_cast<double>(n);
  double syy = 0.0, spp = 0.0, syp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = y[i] - my, b = yhat[i] - mp;
    syy += a * a;
    spp += b * b;
    syp += a * b;
  }
  if (!(syy > 0.0) || !(spp > 0.0)) throw NumericError("pearson: correlation undefined for a constant input");
  return std::clamp(syp / std::sqrt(syy * spp), -1.0, 1.0);
}

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void resample(std::size_t n, std::uint64_t seed, std::vector<std::size_t>& idx) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  idx.resize(n);
  for (auto& i : idx) i = pick(rng);
}

}  // namespace

StatResult bootstrap_ci(const PredictionRecord& record, int replicates, double level, std::uint64_t seed) {
  const std::size_t n = record.size();
  if (record.predicted.size() != n) throw DataError("prediction record is not aligned");
  if (n < 10) throw DataError("bootstrap needs at least 10 subjects");
  if (replicates < 1) throw ConfigError("bootstrap needs at least one replicate");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  StatResult res;
  res.r = pearson(record.truth, record.predicted);
  std::vector<double> rs;
  rs.reserve(replicates);
  std::vector<std::size_t> idx;
  std::vector<double> y(n), p(n);
  for (int b = 0; b < replicates; ++b) {
    resample(n, derive_seed(seed, static_cast<std::uint64_t>(b)), idx);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = record.truth[idx[i]];
      p[i] = record.predicted[idx[i]];
    }
    try {
      rs.push_back(pearson(y, p));
    } catch (const NumericError&) {
      ++res.skipped;
    }
  }
  if (res.skipped * 10 > replicates)
    throw NumericError("bootstrap skipped " + std::to_string(res.skipped) + " of " +
                       std::to_string(replicates) + " replicates with constant resamples");
  std::sort(rs.begin(), rs.end());
  const double alpha = 1.0 - level;
  res.low = std::min(quantile_sorted(rs, alpha / 2.0), res.r);
  res.high = std::max(quantile_sorted(rs, 1.0 - alpha / 2.0), res.r);
  res.delta = (res.high - res.low) / 2.0;
  return res;
}

double paired_bootstrap_test(const PredictionRecord& a, const PredictionRecord& b, int replicates,
                             std::uint64_t seed) {
  const std::size_t n = a.size();
  if (b.size() != n || a.ids != b.ids || a.truth != b.truth)
    throw DataError("paired bootstrap needs records over identical subjects");
  if (replicates < 1) throw ConfigError("bootstrap needs at least one replicate");
  if (n < 2) throw DataError("paired bootstrap needs at least two subjects");
  std::vector<std::size_t> idx;
  std::vector<double> y(n), pa(n), pb(n);
  int le = 0, ge = 0, valid = 0;
  for (int r = 0; r < replicates; ++r) {
    resample(n, derive_seed(seed, static_cast<std::uint64_t>(r)), idx);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = a.truth[idx[i]];
      pa[i] = a.predicted[idx[i]];
      pb[i] = b.predicted[idx[i]];
    }
    double diff = 0.0;
    try {
      diff = pearson(y, pa) - pearson(y, pb);
    } catch (const NumericError&) {
      continue;
    }
    ++valid;
    if (diff <= 0.0) ++le;
    if (diff >= 0.0) ++ge;
  }
  if (valid == 0) throw NumericError("paired bootstrap: every replicate was constant");
  const double p = 2.0 * std::min(le, ge) / static_cast<double>(valid);
  return std::clamp(p, 1.0 / replicates, 1.0);
}

double permutation_test(double observed, std::span<const double> null) {
  if (null.empty()) throw DataError("permutation test needs at least one null value");
  const auto exceed = std::count_if(null.begin(), null.end(), [&](double v) { return v >= observed; });
  return (1.0 + static_cast<double>(exceed)) / (1.0 + static_cast<double>(null.size()));
}

// --- pipeline -------------------------------------------------------------

const TargetReport& EvaluationReport::at(const std::string& name) const {
  for (const auto& t : targets)
    if (t.target == name) return t;
  throw DataError("no evaluation for target " + name);
}

namespace {

// Regresses each feature column on [1, age, sex] fit on the training rows.
Matrix residualize_feature_columns(const Matrix& x, std::span<const Confounds> confounds,
                                   std::span<const int> train) {
  Matrix out(x.rows(), x.cols());
  std::vector<double> col(x.rows());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) col[i] = x(i, j);
    const auto res = residualize_confounds(col, confounds, train);
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, j) = res.adjusted[i];
  }
  return out;
}

}  // namespace

EvaluationReport run_downstream(const Matrix& embeddings, std::span<const std::string> ids,
                                std::span<const std::string> target_names,
                                const std::vector<std::vector<double>>& targets,
                                std::span<const Confounds> confounds,
                                const DownstreamSettings& settings) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  if (ids.size() != n || confounds.size() != n)
    throw DataError("embeddings, ids and confounds are not aligned");
  if (target_names.size() != targets.size()) throw DataError("target names and columns differ in count");
  EvaluationReport report;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto& y = targets[t];
    if (y.size() != n) throw DataError("target " + target_names[t] + " is not aligned with the embeddings");
    TargetReport tr;
    tr.target = target_names[t];
    const CVPlan plan = stratified_kfold(y, settings.folds, settings.bins, derive_seed(settings.seed, t));
    tr.record.ids.assign(ids.begin(), ids.end());
    tr.record.truth.assign(n, 0.0);
    tr.record.predicted.assign(n, 0.0);
    tr.record.fold = plan.fold;
    for (int f = 0; f < plan.k; ++f) {
      const auto train = plan.train_indices(f);
      const auto test = plan.test_indices(f);
      auto res = residualize_confounds(y, confounds, train);
      for (auto& w : res.warnings) tr.warnings.push_back("fold " + std::to_string(f) + ": " + w);
      const Matrix x = settings.residualize_features
                           ? residualize_feature_columns(embeddings, confounds, train)
                           : embeddings;
      const Matrix xtr = take_rows(x, train);
      const auto ytr = take(res.adjusted, train);
      const double lambda = select_lambda(xtr, ytr, settings.lambda_grid, settings.inner_folds,
                                          derive_seed(settings.seed, t, f + 1), settings.kernel,
                                          settings.bins);
      tr.fold_lambda.push_back(lambda);
      const KRRModel model = krr_fit(xtr, ytr, settings.kernel, lambda);
      const Eigen::VectorXd pred = krr_predict(model, take_rows(x, test));
      for (std::size_t i = 0; i < test.size(); ++i) {
        tr.record.truth[test[i]] = res.adjusted[test[i]];
        tr.record.predicted[test[i]] = pred(i);
      }
    }
    tr.stats = bootstrap_ci(tr.record, settings.bootstrap, 0.95, derive_seed(settings.seed, t, 0xB007));
    report.targets.push_back(std::move(tr));
  }
  return report;
}

}  // namespace nerve::stats
