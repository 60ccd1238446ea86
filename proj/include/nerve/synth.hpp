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
#include <string>
#include <vector>

#include "nerve/config.hpp"
#include "nerve/fc.hpp"

namespace nerve::synth {

/// A behavioural score planted as effect * (sum of block means over `blocks`).
struct TargetSpec {
  std::string name = "score";
  std::vector<NetworkPair> blocks;
  double effect = 0.0;
};

struct SynthSpec {
  std::vector<int> network_sizes{10, 10, 10, 10, 10, 10};
  double within = 0.5;           // w, mean within-network coupling
  double between = 0.1;          // b, mean between-network coupling
  double coupling_jitter = 0.1;  // sigma_c, per-subject jitter of each pair coupling
  // Share of the jitter carried by per-network subject factors f_l: pair (l, m) gets
  // sigma_c * (a * (f_l + f_m) / sqrt 2 + sqrt(1 - a^2) * e_lm), a diagonal block
  // a * f_l in place of the factor sum. 0 keeps pairs independent.
  double network_factor = 0.0;
  double obs_noise = 0.1;        // sigma_o, entrywise noise
  std::vector<TargetSpec> targets{{"score", {{0, 1}, {2, 2}}, 5.0}};
  double age_slope = 0.05;
  double sex_offset = 0.1;
  double target_noise = 0.2;
  int subjects = 200;
  std::uint64_t seed = 0;
  int projection_max_iter = 100;
  double projection_tol = 1e-8;

  int region_count() const;
  int network_count() const { return static_cast<int>(network_sizes.size()); }
  /// Throws ConfigError naming the invalid field.
  void validate() const;
  Parcellation parcellation() const { return Parcellation::contiguous(network_sizes); }

  /// Keys: network_sizes (list) or regions + networks (equal sizes), within, between,
  /// coupling_jitter, network_factor, obs_noise, age_slope, sex_offset, target_noise, subjects, seed,
  /// targets (list of names) with per-target `target.<name>.blocks` ("l-m,...") and
  /// `target.<name>.effect`. Missing keys keep defaults.
  static SynthSpec from_config(const KeyValueConfig& kv);
  KeyValueConfig to_config() const;
};

struct ProjectionResult {
  Matrix matrix;
  int iterations = 0;
  double min_eigenvalue = 0.0;
};

/// Nearest-correlation projection by alternating projections (with Dykstra's
/// correction) between the PSD cone and the unit-diagonal set. Stops when the
/// unit-diagonal iterate has min eigenvalue >= -tol or the relative change drops
/// below tol. Throws NumericError when neither happens within max_iter.
ProjectionResult nearest_correlation(const Matrix& a, int max_iter = 100, double tol = 1e-8);

/// One subject's FC; stream seeded from (spec.seed, index).
Subject generate_subject(const SynthSpec& spec, int index);
Cohort gen_cohort(const SynthSpec& spec);

/// Mean of the (l, m) block of `fc` under `parc`.
double block_mean(const Matrix& fc, const Parcellation& parc, const NetworkPair& pair);

}  // namespace nerve::synth
