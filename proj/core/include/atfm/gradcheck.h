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

// Central finite-difference verification of tape gradients.

#ifndef ATFM_GRADCHECK_H_
#define ATFM_GRADCHECK_H_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "atfm/layers.h"
#include "atfm/models.h"
#include "atfm/param_store.h"

namespace atfm {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  double denominator_floor = 1e-6;
  // Random entries per parameter tensor in addition to the entry with the
  // largest analytic gradient. Non-positive checks every entry.
  int samples_per_param = 6;
  uint64_t seed = 0;
};

struct GradCheckGroup {
  std::string name;  // parameter name without its last component
  int64_t checked = 0;
  int64_t kinks = 0;  // entries whose perturbation flipped a ReLU
  double max_relative_error = 0.0;
  std::string worst_entry;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_relative_error = 0.0;
  int64_t checked = 0;
  int64_t kinks = 0;
  bool passed = true;

  std::string ToText() const;
};

// |a - n| / max(|a|, |n|, floor).
double RelativeError(double analytic, double numeric, double floor);

// Builds the scalar loss on a fresh tape from the current parameter values.
using LossBuilder = std::function<Var(const GraphContext& ctx)>;

// Compares tape gradients of `loss` with central differences over selected
// entries of every parameter. An entry whose +/- step changes the sign of any
// ReLU input is not differentiable along the step; it is counted as a kink and
// replaced by another entry. Parameter values are restored afterwards.
GradCheckReport CheckGradients(ParamStore& params, const LossBuilder& loss,
                               const GradCheckOptions& options = {});

// Gradient check of a freshly initialized forecaster on random inputs and
// targets. Biases and peepholes get small random values so that every path
// carries signal.
GradCheckReport CheckForecasterGradients(const SpnConfig& config, uint64_t seed,
                                         const GradCheckOptions& options = {});

}  // namespace atfm

#endif  // ATFM_GRADCHECK_H_
