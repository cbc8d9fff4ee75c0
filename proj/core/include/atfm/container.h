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

#ifndef ATFM_CONTAINER_H_
#define ATFM_CONTAINER_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "atfm/tensor.h"

namespace atfm {

// Named tensors in insertion order, persisted in the binary container format
// shared by checkpoints, cached series and attention exports:
//
//   "ATFM"  u32 version (=1)  u32 entry count
//   per entry: u16 name length, UTF-8 name, u8 rank, rank x u32 extents,
//              row-major f32 values
//
// All integers and floats are little-endian. Values are narrowed to f32 on
// write and widened back to f64 on read.
class TensorContainer {
 public:
  static constexpr uint32_t kVersion = 1;

  // Replaces an existing entry of the same name in place.
  void Put(std::string name, Tensor tensor);
  bool Contains(std::string_view name) const;
  // Throws DataError if absent.
  const Tensor& Get(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }

  std::string Serialize() const;
  static TensorContainer Deserialize(std::string_view bytes);

  void Save(const std::filesystem::path& path) const;
  static TensorContainer Load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Whole-file helpers used by the container and JSON sidecars.
std::string ReadFileBytes(const std::filesystem::path& path);
void WriteFileBytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace atfm

#endif  // ATFM_CONTAINER_H_
