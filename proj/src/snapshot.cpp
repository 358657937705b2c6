// Copyright 2026 The GMRL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "gmrl/snapshot.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace gmrl {
namespace {

constexpr std::array<char, 8> kMagic = {'G', 'M', 'R', 'L', 'T', 'S', 'R', '1'};

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw FormatError("truncated tensor archive");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_archive(std::ostream& out, const std::vector<NamedTensor>& entries) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const Shape& s = e.tensor.shape();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.rank()));
    for (Index d : s.dims()) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < e.tensor.size(); ++i) {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(e.tensor[i]));
    }
  }
  if (!out) throw FormatError("failed writing tensor archive");
}

std::vector<NamedTensor> read_archive(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw FormatError("not a tensor archive (bad magic)");
  }
  const auto count = get_le<std::uint32_t>(in);
  std::vector<NamedTensor> entries;
  entries.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    NamedTensor e;
    const auto name_len = get_le<std::uint32_t>(in);
    e.name.resize(name_len);
    if (name_len && !in.read(e.name.data(), name_len)) throw FormatError("truncated entry name");
    const auto rank = get_le<std::uint32_t>(in);
    if (rank > Shape::kMaxRank) {
      throw FormatError("entry '" + e.name + "' has rank " + std::to_string(rank));
    }
    std::vector<Index> dims(rank);
    for (auto& d : dims) d = static_cast<Index>(get_le<std::uint64_t>(in));
    Tensor t{Shape(dims)};
    for (Index i = 0; i < t.size(); ++i) t[i] = std::bit_cast<double>(get_le<std::uint64_t>(in));
    e.tensor = std::move(t);
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  write_archive(out, entries);
}

std::vector<NamedTensor> read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return read_archive(in);
}

}  // namespace gmrl
