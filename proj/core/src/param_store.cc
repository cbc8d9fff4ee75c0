// Copyright 2026 The ATFM Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "atfm/param_store.h"

#include <cmath>
#include <utility>

#include "atfm/error.h"

namespace atfm {

void Gradients::Zero() {
  for (Tensor& t : tensors_) t.Fill(0.0);
}

void Gradients::Add(const Gradients& other) {
  if (other.size() != size()) {
    throw ShapeError("Gradients::Add: parameter count mismatch");
  }
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    tensors_[i].Add(other.tensors_[i]);
  }
}

void Gradients::Scale(double alpha) {
  for (Tensor& t : tensors_) {
    for (double& v : t.values()) v *= alpha;
  }
}

double Gradients::GlobalNorm() const {
  double s = 0.0;
  for (const Tensor& t : tensors_) {
    for (double v : t.values()) s += v * v;
  }
  return std::sqrt(s);
}

ParamId ParamStore::Add(std::string name, Shape shape, ParamKind kind,
                        int64_t fan_in, int64_t fan_out) {
  if (by_name_.count(name) != 0) {
    throw ArgumentError("duplicate parameter name '" + name + "'");
  }
  ParamId id{specs_.size()};
  by_name_.emplace(name, id.index);
  values_.emplace_back(shape);
  grads_.Append(Tensor(shape));
  specs_.push_back(ParamSpec{std::move(name), std::move(shape), kind, fan_in,
                             fan_out});
  return id;
}

int64_t ParamStore::num_scalars() const {
  int64_t n = 0;
  for (const Tensor& t : values_) n += static_cast<int64_t>(t.size());
  return n;
}

std::optional<ParamId> ParamStore::Find(std::string_view name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return ParamId{it->second};
}

ParamId ParamStore::Get(std::string_view name) const {
  auto id = Find(name);
  if (!id) throw ArgumentError("unknown parameter '" + std::string(name) + "'");
  return *id;
}

Gradients ParamStore::MakeGradients() const {
  std::vector<Tensor> g;
  g.reserve(specs_.size());
  for (const ParamSpec& s : specs_) g.emplace_back(s.shape);
  return Gradients(std::move(g));
}

void ParamStore::Restore(const std::vector<Tensor>& values) {
  if (values.size() != values_.size()) {
    throw ShapeError("ParamStore::Restore: parameter count mismatch");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    CheckSameShape(values_[i].shape(), values[i].shape(), specs_[i].name.c_str());
  }
  values_ = values;
}

void ParamStore::RoundToStoragePrecision() {
  for (Tensor& t : values_) {
    for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace atfm
