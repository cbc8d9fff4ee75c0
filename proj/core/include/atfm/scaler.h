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

#ifndef ATFM_SCALER_H_
#define ATFM_SCALER_H_

#include <span>

#include "atfm/tensor.h"

namespace atfm {

// Min-max linear normalization onto [low, high]. Flow maps use [-1, 1];
// meteorological scalars use [0, 1].
class Scaler {
 public:
  // An unfitted scaler; Apply/Invert throw StateError.
  Scaler() = default;
  // Restores a scaler from stored statistics.
  Scaler(double min, double max, double low, double high);

  // Throws DegenerateScalerError unless `values` holds two distinct values.
  static Scaler Fit(std::span<const double> values, double low = -1.0,
                    double high = 1.0);

  bool fitted() const { return fitted_; }
  double min() const { return min_; }
  double max() const { return max_; }
  double low() const { return low_; }
  double high() const { return high_; }

  double Apply(double x) const;
  double Invert(double y) const;
  Tensor Apply(const Tensor& x) const;
  Tensor Invert(const Tensor& y) const;

 private:
  void CheckFitted() const;

  bool fitted_ = false;
  double min_ = 0.0;
  double max_ = 1.0;
  double low_ = -1.0;
  double high_ = 1.0;
};

}  // namespace atfm

#endif  // ATFM_SCALER_H_
