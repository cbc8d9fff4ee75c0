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

#include "atfm/tape.h"

#include <utility>

#include "atfm/error.h"

namespace atfm {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw StateError("use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::Constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Variable(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Param(const ParamStore& store, ParamId id) {
  if (id.index >= store.size()) throw ArgumentError("Tape::Param: bad id");
  auto& cache = param_nodes_[&store];
  if (auto it = cache.find(id.index); it != cache.end()) {
    return Var(this, it->second);
  }
  Node n;
  n.external = &store.value(id);
  n.requires_grad = true;
  n.store = &store;
  n.param_index = static_cast<long>(id.index);
  nodes_.push_back(std::move(n));
  int node_id = static_cast<int>(nodes_.size()) - 1;
  cache.emplace(id.index, node_id);
  return Var(this, node_id);
}

const Tensor& Tape::value(Var v) const {
  if (v.tape_ != this) throw ArgumentError("Var belongs to another tape");
  return nodes_[v.id_].value();
}

const Tensor& Tape::value(int id) const { return nodes_[id].value(); }

const Tensor& Tape::grad(Var v) const {
  if (v.tape_ != this) throw ArgumentError("Var belongs to another tape");
  return nodes_[v.id_].grad;
}

Var Tape::Record(Tensor value, bool requires_grad, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor& Tape::GradBuffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && n.value().size() > 0) n.grad = Tensor(n.value().shape());
  return n.grad;
}

Tape& Tape::Of(std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) continue;
    if (tape == nullptr) {
      tape = v.tape();
    } else if (tape != v.tape()) {
      throw ArgumentError("operands recorded on different tapes");
    }
  }
  if (tape == nullptr) throw StateError("operation on unbound Vars");
  return *tape;
}

void Tape::Backward(Var output) {
  if (nodes_.empty() || output.tape_ != this) {
    throw StateError("backward called without a recorded forward computation");
  }
  if (output.value().size() != 1) {
    throw ShapeError("backward requires a scalar output, got " +
                     output.shape().ToString());
  }
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[output.id_].requires_grad) {
    has_backward_ = true;
    return;
  }
  GradBuffer(output.id_)[0] = 1.0;
  for (int i = output.id_; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    // The callback may append to nodes_ only through GradBuffer, which never
    // reallocates the vector, so holding `n` is safe.
    n.backward(*this, n.grad);
  }
  has_backward_ = true;
}

void Tape::Backward(Var output, ParamStore& store, double weight) {
  Backward(output);
  AccumulateParamGrads(store.grads(), weight);
}

void Tape::AccumulateParamGrads(Gradients& sink, double weight) const {
  if (!has_backward_) throw StateError("no reverse pass has been run");
  for (const Node& n : nodes_) {
    if (n.param_index < 0 || n.grad.empty()) continue;
    if (static_cast<std::size_t>(n.param_index) >= sink.size()) {
      throw ShapeError("gradient sink smaller than parameter store");
    }
    sink.at(static_cast<std::size_t>(n.param_index)).AddScaled(n.grad, weight);
  }
}

}  // namespace atfm
