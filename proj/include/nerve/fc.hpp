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
#include <utility>
#include <vector>

#include "nerve/types.hpp"

namespace nerve {

/// Symmetric R x R correlation matrix with unit diagonal and entries in [-1, 1].
class FCMatrix {
 public:
  static constexpr double kTolerance = 1e-9;

  FCMatrix() = default;
  /// Validates the invariants and throws DataError on violation.
  explicit FCMatrix(Matrix values);

  int size() const { return static_cast<int>(values_.rows()); }
  const Matrix& values() const { return values_; }
  double operator()(int i, int j) const { return values_(i, j); }

  /// Returns an empty string when `m` is a valid correlation matrix, else the reason.
  static std::string check(const Matrix& m, double tol = kTolerance);

 private:
  Matrix values_;
};

/// Region -> network assignment. Regions inside a network keep their matrix order.
class Parcellation {
 public:
  Parcellation() = default;
  /// `assignment[r]` is the zero-based network of region r. Throws DataError when
  /// a network id is negative or a network in 0..max is empty.
  explicit Parcellation(std::vector<int> assignment);

  int region_count() const { return static_cast<int>(assignment_.size()); }
  int network_count() const { return static_cast<int>(members_.size()); }
  const std::vector<int>& assignment() const { return assignment_; }
  int network_of(int region) const { return assignment_.at(region); }
  int network_size(int network) const { return static_cast<int>(members_.at(network).size()); }
  std::vector<int> network_sizes() const;
  /// Region indices of a network, in matrix order.
  const std::vector<int>& members(int network) const { return members_.at(network); }

  /// Contiguous networks of the given sizes (regions 0..s0-1 in network 0, ...).
  static Parcellation contiguous(const std::vector<int>& sizes);

  bool operator==(const Parcellation& other) const { return assignment_ == other.assignment_; }

 private:
  std::vector<int> assignment_;
  std::vector<std::vector<int>> members_;
};

using NetworkPair = std::pair<int, int>;

/// Ordered list of network pairs (l <= m) that define the patches.
class PatchLayout {
 public:
  PatchLayout() = default;
  PatchLayout(std::vector<NetworkPair> pairs, std::vector<int> network_sizes);

  int n_patch() const { return static_cast<int>(pairs_.size()); }
  int network_count() const { return static_cast<int>(sizes_.size()); }
  const std::vector<NetworkPair>& pairs() const { return pairs_; }
  const NetworkPair& pair(int p) const { return pairs_.at(p); }
  const std::vector<int>& network_sizes() const { return sizes_; }
  int rows(int p) const { return sizes_[pairs_[p].first]; }
  int cols(int p) const { return sizes_[pairs_[p].second]; }
  int flat_size(int p) const { return rows(p) * cols(p); }
  int max_flat_size() const;
  int total_flat_size() const;
  int region_count() const;
  /// Index of (l, m) in pairs(), or -1.
  int index_of(const NetworkPair& pair) const;

  bool operator==(const PatchLayout& other) const {
    return pairs_ == other.pairs_ && sizes_ == other.sizes_;
  }

 private:
  std::vector<NetworkPair> pairs_;
  std::vector<int> sizes_;
};

/// Connectivity block between networks l (rows) and m (columns).
struct Patch {
  NetworkPair pair;
  Matrix block;
};

struct Confounds {
  double age = 0.0;
  int sex = 0;
};

struct Subject {
  std::string id;
  FCMatrix fc;
  Confounds confounds;
  std::vector<double> targets;
};

struct Cohort {
  std::vector<std::string> target_names;
  std::vector<Subject> subjects;

  int size() const { return static_cast<int>(subjects.size()); }
  int region_count() const { return subjects.empty() ? 0 : subjects.front().fc.size(); }
  /// Throws DataError when region counts or target arity disagree.
  void validate() const;
  std::vector<double> target_column(int t) const;
};

/// All N(N+1)/2 pairs (l <= m) in lexicographic order.
PatchLayout build_layout(const Parcellation& parc);

std::vector<Patch> extract_patches(const FCMatrix& fc, const Parcellation& parc,
                                   const PatchLayout& layout);
std::vector<Patch> extract_patches(const Matrix& fc, const Parcellation& parc,
                                   const PatchLayout& layout);

/// Inverse of extract_patches without validation of the result. Lower blocks mirror
/// the upper ones. Throws DataError on missing or duplicate pairs and shape mismatch.
Matrix reassemble_matrix(const std::vector<Patch>& patches, const PatchLayout& layout,
                         const Parcellation& parc);
FCMatrix reassemble(const std::vector<Patch>& patches, const PatchLayout& layout,
                    const Parcellation& parc);

/// Row-major flattening: entry (i, j) lands at i * cols + j.
Vector vec(const Patch& p);
Matrix unvec(const Vector& v, int rows, int cols);

/// Uniform random permutation of 0..n-1, deterministic per seed.
std::vector<int> region_permutation(int n, std::uint64_t seed);
/// Region r takes the network that region perm[r] had.
Parcellation apply_permutation(const Parcellation& parc, const std::vector<int>& perm);
std::vector<int> invert_permutation(const std::vector<int>& perm);
Parcellation permute_regions(const Parcellation& parc, std::uint64_t seed);

/// Contiguous pseudo-networks of `side` regions each, with the upper-triangle layout.
std::pair<Parcellation, PatchLayout> square_layout(int region_count, int side);

/// Merges consecutive networks in groups of `factor` (the last group may be smaller).
Parcellation coarsen(const Parcellation& parc, int factor);

}  // namespace nerve
