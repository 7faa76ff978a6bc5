// Copyright 2026 The pvnet Authors. All Rights Reserved.
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

// Binary parameter checkpoints:
//
//   "PVNET1"
//   repeated until EOF:
//     u32 name length, name bytes,
//     u32 rank, rank x u64 extents,
//     numel x f32 values
//
// All integers and floats are little-endian.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "pvnet/tensor.hpp"

namespace pvnet {

inline constexpr char kCheckpointMagic[] = "PVNET1";

using CheckpointRecords = std::vector<std::pair<std::string, Tensor<float>>>;

namespace detail {

template <typename U>
void put_le(std::string& buf, U value) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const std::string& buf, std::size_t& pos, const std::string& path) {
  require(pos + sizeof(U) <= buf.size(), "checkpoint ", path, ": truncated at byte ", pos);
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    value |= static_cast<U>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += sizeof(U);
  return value;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const CheckpointRecords& records) {
  std::string buf(kCheckpointMagic, 6);
  for (const auto& [name, t] : records) {
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::put_le<std::uint64_t>(buf, e);
    for (float v : t.values()) detail::put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  detail::require(static_cast<bool>(out), "cannot open checkpoint for writing: ", path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  detail::require(static_cast<bool>(out), "failed writing checkpoint: ", path.string());
}

template <typename T>
CheckpointRecords to_records(const std::vector<std::pair<std::string, Tensor<T>>>& recs) {
  CheckpointRecords out;
  out.reserve(recs.size());
  for (const auto& [name, t] : recs) out.emplace_back(name, t.template cast<float>());
  return out;
}

inline CheckpointRecords load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require(static_cast<bool>(in), "cannot open checkpoint: ", path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string p = path.string();
  detail::require(buf.size() >= 6 && buf.compare(0, 6, kCheckpointMagic) == 0, "checkpoint ", p,
                  ": missing PVNET1 magic");
  CheckpointRecords records;
  std::size_t pos = 6;
  while (pos < buf.size()) {
    const auto len = detail::get_le<std::uint32_t>(buf, pos, p);
    detail::require(pos + len <= buf.size(), "checkpoint ", p, ": truncated name at byte ", pos);
    std::string name = buf.substr(pos, len);
    pos += len;
    const auto rank = detail::get_le<std::uint32_t>(buf, pos, p);
    detail::require(rank <= 8, "checkpoint ", p, ": implausible rank ", rank, " for '", name, "'");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(detail::get_le<std::uint64_t>(buf, pos, p));
    const std::size_t n = shape_numel(shape);
    detail::require(pos + 4 * n <= buf.size(), "checkpoint ", p, ": truncated values for '", name, "'");
    std::vector<float> values(n);
    for (auto& v : values) v = std::bit_cast<float>(detail::get_le<std::uint32_t>(buf, pos, p));
    records.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  return records;
}

}  // namespace pvnet
