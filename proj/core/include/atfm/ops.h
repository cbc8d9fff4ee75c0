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

// Differentiable operators. Every function records its result on the tape
// that owns its operands and registers the exact vector-Jacobian product for
// the reverse pass.

#ifndef ATFM_OPS_H_
#define ATFM_OPS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "atfm/tape.h"

namespace atfm {

// 2-D cross-correlation with zero padding.
//   x: [Cin, H, W], kernels: [Cout, Cin, kh, kw], bias: [Cout] or unbound.
// Output [Cout, (H + 2 pad - kh) / stride + 1, (W + 2 pad - kw) / stride + 1].
Var Conv2d(Var x, Var kernels, Var bias, int stride = 1, int pad = 0);

// weight [m, n] times x [n] plus bias [m] (bias may be unbound).
Var FullyConnected(Var x, Var weight, Var bias);

Var Sigmoid(Var x);
Var Tanh(Var x);
Var Relu(Var x);

// While alive, collects the sign of every ReLU input evaluated on the calling
// thread. Two forward passes with equal patterns lie on the same linear piece
// of every ReLU.
class ActivationTrace {
 public:
  ActivationTrace();
  ~ActivationTrace();
  ActivationTrace(const ActivationTrace&) = delete;
  ActivationTrace& operator=(const ActivationTrace&) = delete;

  const std::vector<bool>& pattern() const { return pattern_; }

 private:
  friend Var Relu(Var x);
  std::vector<bool> pattern_;
  ActivationTrace* previous_;
};

Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Hadamard(Var a, Var b);
// alpha * x + beta, elementwise.
Var Affine(Var x, double alpha, double beta = 0.0);
inline Var Scale(Var x, double alpha) { return Affine(x, alpha, 0.0); }
// x times a one-element tensor.
Var ScaleBy(Var x, Var scalar);
// x [C, H, W] times map [1, H, W], broadcast over channels.
Var BroadcastMulChannelwise(Var x, Var map);
// Elementwise sum of equally shaped tensors.
Var AddN(std::span<const Var> xs);

// Concatenation along axis 0; trailing extents must agree.
Var ConcatChannels(std::span<const Var> xs);
Var ConcatChannels(Var a, Var b);
// Channels [begin, end) of x.
Var SliceChannels(Var x, int64_t begin, int64_t end);
Var Reshape(Var x, Shape shape);
inline Var Flatten(Var x) { return Reshape(x, Shape{x.shape().num_elements()}); }

// Sum of all elements, shape [1].
Var Sum(Var x);
// Mean of squared differences over all elements, shape [1].
Var MeanSquaredError(Var prediction, Var target);

}  // namespace atfm

#endif  // ATFM_OPS_H_
