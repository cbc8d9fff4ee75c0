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

#ifndef ATFM_ERROR_H_
#define ATFM_ERROR_H_

#include <stdexcept>
#include <string>

namespace atfm {

// Root of every error thrown by the toolkit. The category drives the CLI exit
// code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or parameter extents do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An object was used in a state that does not allow the call (no recorded
// forward pass, unfitted scaler, unpopulated gradients).
class StateError : public Error {
 public:
  using Error::Error;
};

// Invalid argument value (empty sequence, non-positive extent, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Input violates a documented contract, e.g. flow maps that were not scaled
// into [-1, 1] or sidecar metadata that disagrees between two files.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (unknown key, inconsistent options).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A sample references an interval that is absent from the series.
class SampleError : public DataError {
 public:
  using DataError::DataError;
};

// Scaler fit on data with a single distinct value.
class DegenerateScalerError : public Error {
 public:
  using Error::Error;
};

// Numerical failure (non-finite loss, failed gradient check).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace atfm

#endif  // ATFM_ERROR_H_
