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

#ifndef ATFM_TAPE_H_
#define ATFM_TAPE_H_

#include <functional>
#include <unordered_map>
#include <vector>

#include "atfm/param_store.h"
#include "atfm/tensor.h"

namespace atfm {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape is alive.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Records a forward computation as a list of nodes in evaluation order and
// replays it in reverse to compute gradients. A tape is single-threaded;
// parameters are referenced, not copied, so the ParamStore must outlive the
// tape and stay unmodified while it is in use.
class Tape {
 public:
  // Called with the node's output gradient; adds into the input gradients.
  using BackwardFn = std::function<void(Tape& tape, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf without gradient.
  Var Constant(Tensor value);
  // Leaf with gradient, not tied to a ParamStore.
  Var Variable(Tensor value);
  // Leaf bound to a stored parameter. Repeated calls for the same id return
  // the same node so every use accumulates into one gradient.
  Var Param(const ParamStore& store, ParamId id);

  const Tensor& value(Var v) const;
  const Tensor& value(int id) const;
  // Gradient of the last Backward output w.r.t. `v`; empty if `v` did not
  // contribute.
  const Tensor& grad(Var v) const;

  // Reverse pass from a scalar output. Previous node gradients are cleared.
  void Backward(Var output);
  // Reverse pass, then adds `weight` times each parameter gradient into the
  // store's accumulators.
  void Backward(Var output, ParamStore& store, double weight = 1.0);
  // Adds the parameter gradients of the last reverse pass into `sink`.
  void AccumulateParamGrads(Gradients& sink, double weight = 1.0) const;

  std::size_t num_nodes() const { return nodes_.size(); }

  // Operator plumbing.
  Var Record(Tensor value, bool requires_grad, BackwardFn backward);
  bool RequiresGrad(int id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of node `id`, zero-allocated on first access.
  Tensor& GradBuffer(int id);
  // Tape that owns every operand; throws ArgumentError on mixing.
  static Tape& Of(std::initializer_list<Var> vars);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    const ParamStore* store = nullptr;
    long param_index = -1;

    const Tensor& value() const { return external ? *external : owned; }
  };

  std::vector<Node> nodes_;
  std::unordered_map<const ParamStore*, std::unordered_map<std::size_t, int>>
      param_nodes_;
  bool has_backward_ = false;
};

}  // namespace atfm

#endif  // ATFM_TAPE_H_
