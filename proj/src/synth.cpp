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

#include "nerve/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "nerve/error.hpp"
#include "nerve/rng.hpp"

namespace nerve::synth {

int SynthSpec::region_count() const {
  return std::accumulate(network_sizes.begin(), network_sizes.end(), 0);
}

void SynthSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("synth." + field + ": " + why);
  };
  if (network_sizes.empty()) fail("network_sizes", "needs at least one network");
  for (int s : network_sizes)
    if (s < 1) fail("network_sizes", "every network needs at least one region");
  if (!(within > 0.0 && within < 1.0)) fail("within", "must lie in (0, 1)");
  if (!(between > -0.3 && between < 0.3)) fail("between", "must lie in (-0.3, 0.3)");
  if (!(coupling_jitter >= 0.0)) fail("coupling_jitter", "must be >= 0");
  if (!(network_factor >= 0.0 && network_factor <= 1.0)) fail("network_factor", "must lie in [0, 1]");
  if (!(obs_noise >= 0.0)) fail("obs_noise", "must be >= 0");
  if (!(target_noise >= 0.0)) fail("target_noise", "must be >= 0");
  if (!std::isfinite(age_slope)) fail("age_slope", "must be finite");
  if (!std::isfinite(sex_offset)) fail("sex_offset", "must be finite");
  if (subjects < 1) fail("subjects", "must be >= 1");
  if (projection_max_iter < 1) fail("projection_max_iter", "must be >= 1");
  if (!(projection_tol > 0.0)) fail("projection_tol", "must be > 0");
  if (targets.empty()) fail("targets", "needs at least one target");
  for (const auto& t : targets) {
    if (t.name.empty() || t.name.find_first_of(",; \t") != std::string::npos)
      fail("targets", "target names must be non-empty without separators");
    if (!std::isfinite(t.effect)) fail("target." + t.name + ".effect", "must be finite");
    for (const auto& [l, m] : t.blocks)
      if (l < 0 || m < l || m >= network_count())
        fail("target." + t.name + ".blocks", "pair " + std::to_string(l) + "-" + std::to_string(m) +
                                                  " is not a valid l <= m network pair");
  }
}

namespace {

std::vector<NetworkPair> parse_blocks(const std::string& key, const std::string& text) {
  std::vector<NetworkPair> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    if (b == std::string::npos) continue;
    item = item.substr(b);
    const auto dash = item.find('-');
    try {
      if (dash == std::string::npos) throw std::invalid_argument(item);
      std::size_t u1 = 0, u2 = 0;
      const std::string a = item.substr(0, dash), c = item.substr(dash + 1);
      const int l = std::stoi(a, &u1), m = std::stoi(c, &u2);
      if (u1 != a.size() || u2 != c.find_last_not_of(' ') + 1) throw std::invalid_argument(item);
      out.emplace_back(std::min(l, m), std::max(l, m));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected pairs like 0-1,2-2, got '" + item + "'");
    }
  }
  return out;
}

std::string format_blocks(const std::vector<NetworkPair>& blocks) {
  std::ostringstream os;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    os << (i ? "," : "") << blocks[i].first << '-' << blocks[i].second;
  return os.str();
}

}  // namespace

SynthSpec SynthSpec::from_config(const KeyValueConfig& kv) {
  SynthSpec s;
  if (kv.has("network_sizes")) {
    s.network_sizes = kv.get_int_list("network_sizes");
  } else if (kv.has("regions") || kv.has("networks")) {
    const auto r = kv.get_int("regions", s.region_count());
    const auto n = kv.get_int("networks", s.network_count());
    if (n < 1 || r < 1 || r % n != 0)
      throw ConfigError("synth.regions: " + std::to_string(r) + " regions cannot split evenly into " +
                        std::to_string(n) + " networks");
    s.network_sizes.assign(static_cast<std::size_t>(n), static_cast<int>(r / n));
  }
  s.within = kv.get_double("within", s.within);
  s.between = kv.get_double("between", s.between);
  s.coupling_jitter = kv.get_double("coupling_jitter", s.coupling_jitter);
  s.network_factor = kv.get_double("network_factor", s.network_factor);
  s.obs_noise = kv.get_double("obs_noise", s.obs_noise);
  s.age_slope = kv.get_double("age_slope", s.age_slope);
  s.sex_offset = kv.get_double("sex_offset", s.sex_offset);
  s.target_noise = kv.get_double("target_noise", s.target_noise);
  s.subjects = static_cast<int>(kv.get_int("subjects", s.subjects));
  s.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(s.seed)));
  s.projection_max_iter = static_cast<int>(kv.get_int("projection_max_iter", s.projection_max_iter));
  s.projection_tol = kv.get_double("projection_tol", s.projection_tol);
  if (kv.has("targets")) {
    std::vector<TargetSpec> targets;
    std::istringstream in(kv.get_string("targets"));
    std::string name;
    while (std::getline(in, name, ',')) {
      const auto b = name.find_first_not_of(' ');
      const auto e = name.find_last_not_of(' ');
      if (b == std::string::npos) continue;
      TargetSpec t;
      t.name = name.substr(b, e - b + 1);
      const std::string key = "target." + t.name;
      t.blocks = parse_blocks(key + ".blocks", kv.get_string(key + ".blocks", ""));
      t.effect = kv.get_double(key + ".effect", 0.0);
      targets.push_back(std::move(t));
    }
    s.targets = std::move(targets);
  } else {
    if (kv.has("signal_blocks")) s.targets[0].blocks = parse_blocks("signal_blocks", kv.get_string("signal_blocks"));
    s.targets[0].effect = kv.get_double("effect", s.targets[0].effect);
  }
  s.validate();
  return s;
}

KeyValueConfig SynthSpec::to_config() const {
  KeyValueConfig kv;
  std::ostringstream sizes, names;
  for (std::size_t i = 0; i < network_sizes.size(); ++i) sizes << (i ? "," : "") << network_sizes[i];
  kv.set("network_sizes", sizes.str());
  kv.set("within", within);
  kv.set("between", between);
  kv.set("coupling_jitter", coupling_jitter);
  kv.set("network_factor", network_factor);
  kv.set("obs_noise", obs_noise);
  kv.set("age_slope", age_slope);
  kv.set("sex_offset", sex_offset);
  kv.set("target_noise", target_noise);
  kv.set("subjects", subjects);
  kv.set("seed", std::to_string(seed));
  kv.set("projection_max_iter", projection_max_iter);
  kv.set("projection_tol", projection_tol);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    names << (i ? "," : "") << targets[i].name;
    kv.set("target." + targets[i].name + ".blocks", format_blocks(targets[i].blocks));
    kv.set("target." + targets[i].name + ".effect", targets[i].effect);
  }
  kv.set("targets", names.str());
  return kv;
}

namespace {

using EigenSolver = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>;

double min_eigenvalue(const Matrix& m) {
  EigenSolver es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Matrix psd_part(const Matrix& m) {
  EigenSolver es(m);
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  Matrix out = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

// Exact symmetry, unit diagonal and entries clipped to [-1, 1].
Matrix tidy(Matrix m) {
  const Eigen::Index n = m.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    m(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = std::clamp(0.5 * (m(i, j) + m(j, i)), -1.0, 1.0);
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

}  // namespace

ProjectionResult nearest_correlation(const Matrix& a, int max_iter, double tol) {
  if (a.rows() != a.cols()) throw ShapeError("nearest_correlation needs a square matrix");
  Matrix y = tidy(a);
  ProjectionResult res;
  res.min_eigenvalue = min_eigenvalue(y);
  if (res.min_eigenvalue >= -tol) {
    res.matrix = std::move(y);
    return res;
  }
  Matrix correction = Matrix::Zero(a.rows(), a.cols());
  Matrix x;
  for (int it = 1; it <= max_iter; ++it) {
    const Matrix r = y - correction;
    x = psd_part(r);
    correction = x - r;
    Matrix next = x;
    next.diagonal().setOnes();
    const double change = (next - y).norm() / std::max(y.norm(), 1e-300);
    y = std::move(next);
    res.iterations = it;
    res.min_eigenvalue = min_eigenvalue(y);
    if (res.min_eigenvalue >= -tol) {
      res.matrix = tidy(std::move(y));
      res.min_eigenvalue = min_eigenvalue(res.matrix);
      return res;
    }
    if (change < tol) {
      // Converged to the boundary of the PSD cone: rescale the PSD iterate to unit
      // diagonal, which keeps it PSD.
      const Eigen::VectorXd d = x.diagonal();
      if (d.minCoeff() <= 0.0) break;
      const Eigen::VectorXd s = d.cwiseSqrt().cwiseInverse();
      res.matrix = tidy(s.asDiagonal() * x * s.asDiagonal());
      res.min_eigenvalue = min_eigenvalue(res.matrix);
      if (res.min_eigenvalue >= -tol) return res;
      break;
    }
  }
  throw NumericError("nearest-correlation projection did not converge in " + std::to_string(max_iter) +
                     " iterations (min eigenvalue " + format_double(res.min_eigenvalue) + ")");
}

double block_mean(const Matrix& fc, const Parcellation& parc, const NetworkPair& pair) {
  const auto& rows = parc.members(pair.first);
  const auto& cols = parc.members(pair.second);
  double s = 0.0;
  for (int i : rows)
    for (int j : cols) s += fc(i, j);
  return s / static_cast<double>(rows.size() * cols.size());
}

Subject generate_subject(const SynthSpec& spec, int index) {
  const Parcellation parc = spec.parcellation();
  const int R = parc.region_count();
  const int N = parc.network_count();
  std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> age_dist(8.0, 18.0);
  std::bernoulli_distribution sex_dist(0.5);

  Subject s;
  std::ostringstream id;
  id << "sub-" << std::setw(5) << std::setfill('0') << index;
  s.id = id.str();
  s.confounds.age = age_dist(rng);
  s.confounds.sex = sex_dist(rng) ? 1 : 0;

  const double a = spec.network_factor;
  std::vector<double> factor(N, 0.0);
  if (a > 0.0)
    for (double& f : factor) f = normal(rng);
  Matrix coupling(N, N);
  for (int l = 0; l < N; ++l) {
    for (int m = l; m < N; ++m) {
      const double base = l == m ? spec.within : spec.between;
      double jitter = normal(rng);
      if (a > 0.0) {
        const double shared = l == m ? factor[l] : (factor[l] + factor[m]) / std::numbers::sqrt2;
        jitter = a * shared + std::sqrt(1.0 - a * a) * jitter;
      }
      coupling(l, m) = coupling(m, l) = base + spec.coupling_jitter * jitter;
    }
  }
  Matrix latent(R, R);
  for (int i = 0; i < R; ++i) {
    latent(i, i) = 1.0;
    for (int j = i + 1; j < R; ++j) {
      const double v = coupling(parc.network_of(i), parc.network_of(j)) + spec.obs_noise * normal(rng);
      latent(i, j) = latent(j, i) = v;
    }
  }
  auto projected = nearest_correlation(latent, spec.projection_max_iter, spec.projection_tol);
  s.fc = FCMatrix(std::move(projected.matrix));

  for (const auto& t : spec.targets) {
    double y = 0.0;
    for (const auto& pair : t.blocks) y += t.effect * block_mean(s.fc.values(), parc, pair);
    y += spec.age_slope * s.confounds.age + spec.sex_offset * s.confounds.sex;
    y += spec.target_noise * normal(rng);
    s.targets.push_back(y);
  }
  return s;
}

Cohort gen_cohort(const SynthSpec& spec) {
  spec.validate();
  Cohort c;
  for (const auto& t : spec.targets) c.target_names.push_back(t.name);
  c.subjects.reserve(spec.subjects);
  for (int i = 0; i < spec.subjects; ++i) c.subjects.push_back(generate_subject(spec, i));
  return c;
}

}  // namespace nerve::synth
