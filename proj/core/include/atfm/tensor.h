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

#ifndef ATFM_TENSOR_H_
#define ATFM_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace atfm {

// Extents of a dense tensor, outermost first.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int64_t> dims);
  explicit Shape(std::vector<int64_t> dims);

  int rank() const { return static_cast<int>(dims_.size()); }
  int64_t operator[](int axis) const { return dims_[axis]; }
  int64_t dim(int axis) const;
  // Product of all extents; 1 for a rank-0 shape.
  int64_t num_elements() const;
  const std::vector<int64_t>& dims() const { return dims_; }

  std::string ToString() const;

  friend bool operator==(const Shape& a, const Shape& b) {
    return a.dims_ == b.dims_;
  }

 private:
  std::vector<int64_t> dims_;
};

// Allocator for cache-line aligned buffers. Vectorized kernels peel a
// different number of leading elements at different alignments, which
// changes the order of floating-point reductions; a fixed alignment keeps
// results reproducible from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

using AlignedVector = std::vector<double, AlignedAllocator<double>>;

// Dense row-major array of 64-bit reals.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, const std::vector<double>& values);
  Tensor(Shape shape, AlignedVector values);

  static Tensor Scalar(double value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank(); }
  int64_t dim(int axis) const { return shape_.dim(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Element of a rank-3 tensor [C, H, W].
  double& at(int64_t c, int64_t y, int64_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at(int64_t c, int64_t y, int64_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  // Same data under a new shape with equal element count.
  Tensor Reshaped(Shape shape) const;

  void Fill(double value);
  // this += other (shapes must match).
  void Add(const Tensor& other);
  void AddScaled(const Tensor& other, double alpha);

  bool AllFinite() const;
  double Sum() const;
  double MaxAbs() const;

 private:
  Shape shape_;
  AlignedVector data_;
};

// Throws ShapeError with `what` as context unless the shapes are equal.
void CheckSameShape(const Shape& a, const Shape& b, const char* what);

}  // namespace atfm

#endif  // ATFM_TENSOR_H_
