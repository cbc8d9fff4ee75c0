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

#include "atfm/container.h"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

#include "atfm/error.h"

namespace atfm {
namespace {

constexpr char kMagic[4] = {'A', 'T', 'F', 'M'};

template <typename T>
void PutLittleEndian(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T Read() {
    Need(sizeof(T));
    uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view Take(std::size_t n) {
    Need(n);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void Need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("tensor container is truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void TensorContainer::Put(std::string name, Tensor tensor) {
  if (name.size() > std::numeric_limits<uint16_t>::max()) {
    throw ArgumentError("container entry name too long");
  }
  if (tensor.rank() > std::numeric_limits<uint8_t>::max()) {
    throw ArgumentError("container entry rank too large");
  }
  for (auto& [n, t] : entries_) {
    if (n == name) {
      t = std::move(tensor);
      return;
    }
  }
  entries_.emplace_back(std::move(name), std::move(tensor));
}

bool TensorContainer::Contains(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& TensorContainer::Get(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw DataError("container has no entry '" + std::string(name) + "'");
}

std::string TensorContainer::Serialize() const {
  std::string out(kMagic, 4);
  PutLittleEndian<uint32_t>(out, kVersion);
  PutLittleEndian<uint32_t>(out, static_cast<uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) {
    PutLittleEndian<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out += name;
    PutLittleEndian<uint8_t>(out, static_cast<uint8_t>(t.rank()));
    for (int64_t d : t.shape().dims()) {
      if (d > std::numeric_limits<uint32_t>::max()) {
        throw ArgumentError("container extent exceeds u32");
      }
      PutLittleEndian<uint32_t>(out, static_cast<uint32_t>(d));
    }
    for (double v : t.values()) {
      PutLittleEndian<uint32_t>(out, std::bit_cast<uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

TensorContainer TensorContainer::Deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.Take(4) != std::string_view(kMagic, 4)) {
    throw DataError("not a tensor container (bad magic)");
  }
  const uint32_t version = r.Read<uint32_t>();
  if (version != kVersion) {
    throw DataError("unsupported tensor container version " + std::to_string(version));
  }
  const uint32_t count = r.Read<uint32_t>();
  TensorContainer c;
  for (uint32_t e = 0; e < count; ++e) {
    const uint16_t name_len = r.Read<uint16_t>();
    std::string name(r.Take(name_len));
    const uint8_t rank = r.Read<uint8_t>();
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) d = r.Read<uint32_t>();
    Tensor t{Shape(dims)};
    for (double& v : t.values()) {
      v = static_cast<double>(std::bit_cast<float>(r.Read<uint32_t>()));
    }
    if (c.Contains(name)) throw DataError("duplicate container entry '" + name + "'");
    c.entries_.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw DataError("trailing bytes after tensor container");
  return c;
}

void TensorContainer::Save(const std::filesystem::path& path) const {
  WriteFileBytes(path, Serialize());
}

TensorContainer TensorContainer::Load(const std::filesystem::path& path) {
  return Deserialize(ReadFileBytes(path));
}

std::string ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void WriteFileBytes(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

}  // namespace atfm
