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

#include "atfm/tensor.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include "atfm/error.h"

namespace atfm {

Shape::Shape(std::initializer_list<int64_t> dims) : dims_(dims) {
  for (int64_t d : dims_) {
    if (d < 0) throw ShapeError("negative extent in shape " + ToString());
  }
}

Shape::Shape(std::vector<int64_t> dims) : dims_(std::move(dims)) {
  for (int64_t d : dims_) {
    if (d < 0) throw ShapeError("negative extent in shape " + ToString());
  }
}

int64_t Shape::dim(int axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     ToString());
  }
  return dims_[axis];
}

int64_t Shape::num_elements() const {
  int64_t n = 1;
  for (int64_t d : dims_) n *= d;
  return n;
}

std::string Shape::ToString() const {
  std::string s = "(";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i > 0) s += ",";
    s += std::to_string(dims_[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)),
      data_(static_cast<std::size_t>(shape_.num_elements()), fill) {}

Tensor::Tensor(Shape shape, const std::vector<double>& values)
    : Tensor(std::move(shape), AlignedVector(values.begin(), values.end())) {}

Tensor::Tensor(Shape shape, AlignedVector values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (static_cast<int64_t>(data_.size()) != shape_.num_elements()) {
    throw ShapeError("tensor of shape " + shape_.ToString() + " given " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::Reshaped(Shape shape) const {
  if (shape.num_elements() != shape_.num_elements()) {
    throw ShapeError("cannot reshape " + shape_.ToString() + " to " +
                     shape.ToString());
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::Fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::Add(const Tensor& other) {
  CheckSameShape(shape_, other.shape_, "Tensor::Add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::AddScaled(const Tensor& other, double alpha) {
  CheckSameShape(shape_, other.shape_, "Tensor::AddScaled");
  for (std::size_t i = 0; i < data_.size(); ++i) {
    data_[i] += alpha * other.data_[i];
  }
}

bool Tensor::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor::Sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::MaxAbs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

void CheckSameShape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.ToString() +
                     " vs " + b.ToString());
  }
}

}  // namespace atfm
