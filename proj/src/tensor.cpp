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

#include "nerve/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

#include "nerve/error.hpp"

namespace nerve::nn {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  if (shape_.empty()) throw NumericError("tensor shape must have at least one dimension");
  std::size_t n = 1;
  for (auto d : shape_) {
    if (d == 0) throw NumericError("tensor dimensions must be >= 1");
    n *= d;
  }
  data_.assign(n, fill);
}

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  t.mat() = m;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw NumericError("expected a rank-2 tensor, got " + shape_string());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw NumericError("expected a rank-2 tensor, got " + shape_string());
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw NumericError("item() on a tensor of shape " + shape_string());
  return data_[0];
}

MatrixMap Tensor::mat() {
  return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
}

ConstMatrixMap Tensor::mat() const {
  return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ']';
  return os.str();
}

Parameter& ParameterStore::add(std::string name, Tensor init) {
  if (find(name)) throw ConfigError("duplicate parameter name " + name);
  auto p = std::make_unique<Parameter>();
  p->grad = Tensor(init.shape());
  p->value = std::move(init);
  entries_.push_back({std::move(name), std::move(p)});
  return *entries_.back().param;
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return e.param.get();
  return nullptr;
}

Parameter& ParameterStore::get(const std::string& name) {
  if (auto* p = find(name)) return *p;
  throw ConfigError("unknown parameter " + name);
}

const Parameter& ParameterStore::get(const std::string& name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.param->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) std::fill(e.param->grad.values().begin(), e.param->grad.values().end(), 0.0);
}

}  // namespace nerve::nn
