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

#include "nerve/fc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "nerve/error.hpp"

namespace nerve {

std::string FCMatrix::check(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return "matrix is not square";
  if (m.rows() == 0) return "matrix is empty";
  const Eigen::Index n = m.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(m(i, i)) || std::abs(m(i, i) - 1.0) > tol) {
      std::ostringstream os;
      os << "diagonal entry " << i << " is " << m(i, i) << ", expected 1";
      return os.str();
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = m(i, j);
      if (!std::isfinite(v) || v < -1.0 - tol || v > 1.0 + tol) {
        std::ostringstream os;
        os << "entry (" << i << "," << j << ") = " << v << " outside [-1, 1]";
        return os.str();
      }
      if (j > i && std::abs(v - m(j, i)) > tol) {
        std::ostringstream os;
        os << "matrix is not symmetric at (" << i << "," << j << ")";
        return os.str();
      }
    }
  }
  return {};
}

FCMatrix::FCMatrix(Matrix values) : values_(std::move(values)) {
  if (auto why = check(values_); !why.empty()) throw DataError("invalid FC matrix: " + why);
}

Parcellation::Parcellation(std::vector<int> assignment) : assignment_(std::move(assignment)) {
  if (assignment_.empty()) throw DataError("parcellation has no regions");
  const int max_id = *std::max_element(assignment_.begin(), assignment_.end());
  members_.resize(max_id + 1);
  for (int r = 0; r < region_count(); ++r) {
    if (assignment_[r] < 0) throw DataError("negative network id for region " + std::to_string(r));
    members_[assignment_[r]].push_back(r);
  }
  for (int l = 0; l <= max_id; ++l) {
    if (members_[l].empty()) throw DataError("network " + std::to_string(l) + " has no regions");
  }
}

std::vector<int> Parcellation::network_sizes() const {
  std::vector<int> sizes;
  sizes.reserve(members_.size());
  for (const auto& m : members_) sizes.push_back(static_cast<int>(m.size()));
  return sizes;
}

Parcellation Parcellation::contiguous(const std::vector<int>& sizes) {
  std::vector<int> a;
  for (std::size_t l = 0; l < sizes.size(); ++l) a.insert(a.end(), sizes[l], static_cast<int>(l));
  return Parcellation(std::move(a));
}

PatchLayout::PatchLayout(std::vector<NetworkPair> pairs, std::vector<int> network_sizes)
    : pairs_(std::move(pairs)), sizes_(std::move(network_sizes)) {
  for (std::size_t p = 0; p < pairs_.size(); ++p) {
    const auto [l, m] = pairs_[p];
    if (l < 0 || m < l || m >= network_count()) throw DataError("invalid network pair in layout");
    if (p > 0 && !(pairs_[p - 1] < pairs_[p])) throw DataError("layout pairs must be strictly sorted");
  }
}

int PatchLayout::max_flat_size() const {
  int s = 0;
  for (int p = 0; p < n_patch(); ++p) s = std::max(s, flat_size(p));
  return s;
}

int PatchLayout::total_flat_size() const {
  int s = 0;
  for (int p = 0; p < n_patch(); ++p) s += flat_size(p);
  return s;
}

int PatchLayout::region_count() const { return std::accumulate(sizes_.begin(), sizes_.end(), 0); }

int PatchLayout::index_of(const NetworkPair& pair) const {
  auto it = std::lower_bound(pairs_.begin(), pairs_.end(), pair);
  if (it == pairs_.end() || *it != pair) return -1;
  return static_cast<int>(it - pairs_.begin());
}

void Cohort::validate() const {
  for (const auto& s : subjects) {
    if (s.fc.size() != region_count())
      throw DataError("subject " + s.id + " has a different region count");
    if (s.targets.size() != target_names.size())
      throw DataError("subject " + s.id + " has the wrong number of targets");
  }
}

std::vector<double> Cohort::target_column(int t) const {
  std::vector<double> col;
  col.reserve(subjects.size());
  for (const auto& s : subjects) col.push_back(s.targets.at(t));
  return col;
}

PatchLayout build_layout(const Parcellation& parc) {
  std::vector<NetworkPair> pairs;
  const int n = parc.network_count();
  pairs.reserve(n * (n + 1) / 2);
  for (int l = 0; l < n; ++l)
    for (int m = l; m < n; ++m) pairs.emplace_back(l, m);
  return PatchLayout(std::move(pairs), parc.network_sizes());
}

std::vector<Patch> extract_patches(const Matrix& fc, const Parcellation& parc,
                                   const PatchLayout& layout) {
  if (fc.rows() != parc.region_count() || fc.cols() != parc.region_count())
    throw DataError("FC size does not match the parcellation region count");
  if (layout.network_sizes() != parc.network_sizes())
    throw DataError("layout does not match the parcellation");
  std::vector<Patch> out;
  out.reserve(layout.n_patch());
  for (const auto& pair : layout.pairs()) {
    const auto& rows = parc.members(pair.first);
    const auto& cols = parc.members(pair.second);
    Matrix block(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < cols.size(); ++j) block(i, j) = fc(rows[i], cols[j]);
    out.push_back({pair, std::move(block)});
  }
  return out;
}

std::vector<Patch> extract_patches(const FCMatrix& fc, const Parcellation& parc,
                                   const PatchLayout& layout) {
  return extract_patches(fc.values(), parc, layout);
}

Matrix reassemble_matrix(const std::vector<Patch>& patches, const PatchLayout& layout,
                         const Parcellation& parc) {
  if (layout.network_sizes() != parc.network_sizes())
    throw DataError("layout does not match the parcellation");
  std::vector<char> seen(layout.n_patch(), 0);
  const int R = parc.region_count();
  Matrix out = Matrix::Zero(R, R);
  for (const auto& patch : patches) {
    const int p = layout.index_of(patch.pair);
    if (p < 0) throw DataError("patch pair not present in layout");
    if (seen[p]) throw DataError("duplicate patch pair in reassembly");
    seen[p] = 1;
    if (patch.block.rows() != layout.rows(p) || patch.block.cols() != layout.cols(p))
      throw DataError("patch shape does not match layout");
    const auto& rows = parc.members(patch.pair.first);
    const auto& cols = parc.members(patch.pair.second);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < cols.size(); ++j) {
        const double v = patch.block(i, j);
        out(rows[i], cols[j]) = v;
        if (patch.pair.first != patch.pair.second) out(cols[j], rows[i]) = v;
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw DataError("missing patch pair in reassembly");
  return out;
}

FCMatrix reassemble(const std::vector<Patch>& patches, const PatchLayout& layout,
                    const Parcellation& parc) {
  return FCMatrix(reassemble_matrix(patches, layout, parc));
}

Vector vec(const Patch& p) {
  Vector v(p.block.size());
  const Eigen::Index cols = p.block.cols();
  for (Eigen::Index i = 0; i < p.block.rows(); ++i)
    for (Eigen::Index j = 0; j < cols; ++j) v(i * cols + j) = p.block(i, j);
  return v;
}

Matrix unvec(const Vector& v, int rows, int cols) {
  if (v.size() != static_cast<Eigen::Index>(rows) * cols)
    throw DataError("unvec: length does not match block shape");
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = v(i * cols + j);
  return m;
}

std::vector<int> region_permutation(int n, std::uint64_t seed) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  // Explicit Fisher-Yates: std::shuffle's draw sequence is implementation-defined.
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(perm[i], perm[pick(rng)]);
  }
  return perm;
}

Parcellation apply_permutation(const Parcellation& parc, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != parc.region_count())
    throw DataError("permutation length does not match region count");
  std::vector<int> a(perm.size());
  for (std::size_t r = 0; r < perm.size(); ++r) a[r] = parc.network_of(perm[r]);
  return Parcellation(std::move(a));
}

std::vector<int> invert_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
  return inv;
}

Parcellation permute_regions(const Parcellation& parc, std::uint64_t seed) {
  return apply_permutation(parc, region_permutation(parc.region_count(), seed));
}

std::pair<Parcellation, PatchLayout> square_layout(int region_count, int side) {
  if (side < 1 || region_count < 1 || region_count % side != 0)
    throw ConfigError("square patch side " + std::to_string(side) + " does not divide " +
                      std::to_string(region_count) + " regions");
  Parcellation parc = Parcellation::contiguous(std::vector<int>(region_count / side, side));
  PatchLayout layout = build_layout(parc);
  return {std::move(parc), std::move(layout)};
}

Parcellation coarsen(const Parcellation& parc, int factor) {
  if (factor < 1) throw ConfigError("coarsening factor must be >= 1");
  std::vector<int> a(parc.assignment());
  for (int& v : a) v /= factor;
  return Parcellation(std::move(a));
}

}  // namespace nerve
