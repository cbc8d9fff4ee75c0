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

#ifndef ATFM_PARAM_STORE_H_
#define ATFM_PARAM_STORE_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "atfm/tensor.h"

namespace atfm {

// Index of a parameter inside its ParamStore.
struct ParamId {
  std::size_t index = 0;
  friend bool operator==(ParamId a, ParamId b) { return a.index == b.index; }
};

// How a parameter is initialized. Weights get Xavier-uniform samples from
// their fan sizes; biases and peephole tensors start at zero.
enum class ParamKind { kWeight, kBias, kPeephole };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamKind kind = ParamKind::kWeight;
  int64_t fan_in = 0;
  int64_t fan_out = 0;
};

// One gradient tensor per parameter, aligned with a ParamStore.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> tensors) : tensors_(std::move(tensors)) {}

  std::size_t size() const { return tensors_.size(); }
  Tensor& operator[](ParamId id) { return tensors_[id.index]; }
  const Tensor& operator[](ParamId id) const { return tensors_[id.index]; }
  Tensor& at(std::size_t i) { return tensors_[i]; }
  const Tensor& at(std::size_t i) const { return tensors_[i]; }

  void Append(Tensor t) { tensors_.push_back(std::move(t)); }
  void Zero();
  void Add(const Gradients& other);
  void Scale(double alpha);
  double GlobalNorm() const;

 private:
  std::vector<Tensor> tensors_;
};

// Named learnable tensors with paired gradient accumulators.
class ParamStore {
 public:
  ParamStore() = default;

  // Registers a parameter. Names must be unique.
  ParamId Add(std::string name, Shape shape, ParamKind kind,
              int64_t fan_in = 0, int64_t fan_out = 0);

  std::size_t size() const { return specs_.size(); }
  // Total number of scalar parameters.
  int64_t num_scalars() const;

  const ParamSpec& spec(ParamId id) const { return specs_[id.index]; }
  const std::string& name(ParamId id) const { return specs_[id.index].name; }
  const Tensor& value(ParamId id) const { return values_[id.index]; }
  Tensor& mutable_value(ParamId id) { return values_[id.index]; }
  const Tensor& grad(ParamId id) const { return grads_[id]; }
  Tensor& mutable_grad(ParamId id) { return grads_[id]; }

  Gradients& grads() { return grads_; }
  const Gradients& grads() const { return grads_; }

  std::optional<ParamId> Find(std::string_view name) const;
  ParamId Get(std::string_view name) const;  // throws ArgumentError

  void ZeroGrad() { grads_.Zero(); }
  // A zero-filled gradient set shaped like this store.
  Gradients MakeGradients() const;

  std::vector<Tensor> Snapshot() const { return values_; }
  void Restore(const std::vector<Tensor>& values);

  // Rounds every value to the nearest 32-bit float, the checkpoint storage
  // precision.
  void RoundToStoragePrecision();

 private:
  std::vector<ParamSpec> specs_;
  std::vector<Tensor> values_;
  Gradients grads_;
  std::map<std::string, std::size_t, std::less<>> by_name_;
};

}  // namespace atfm

#endif  // ATFM_PARAM_STORE_H_
