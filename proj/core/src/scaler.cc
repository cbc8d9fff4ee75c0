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

#include "atfm/scaler.h"

#include <algorithm>
#include <cmath>

#include "atfm/error.h"

namespace atfm {

Scaler::Scaler(double min, double max, double low, double high)
    : fitted_(true), min_(min), max_(max), low_(low), high_(high) {
  if (!(max > min) || !(high > low)) {
    throw DegenerateScalerError("scaler requires max > min and high > low");
  }
}

Scaler Scaler::Fit(std::span<const double> values, double low, double high) {
  if (values.empty()) throw DegenerateScalerError("cannot fit a scaler on no data");
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (!std::isfinite(*lo) || !std::isfinite(*hi)) {
    throw DegenerateScalerError("cannot fit a scaler on non-finite data");
  }
  if (!(*hi > *lo)) {
    throw DegenerateScalerError("cannot fit a scaler on constant data");
  }
  return Scaler(*lo, *hi, low, high);
}

void Scaler::CheckFitted() const {
  if (!fitted_) throw StateError("scaler used before fitting");
}

double Scaler::Apply(double x) const {
  CheckFitted();
  return low_ + (x - min_) / (max_ - min_) * (high_ - low_);
}

double Scaler::Invert(double y) const {
  CheckFitted();
  return min_ + (y - low_) / (high_ - low_) * (max_ - min_);
}

Tensor Scaler::Apply(const Tensor& x) const {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = Apply(x[i]);
  return out;
}

Tensor Scaler::Invert(const Tensor& y) const {
  Tensor out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = Invert(y[i]);
  return out;
}

}  // namespace atfm
