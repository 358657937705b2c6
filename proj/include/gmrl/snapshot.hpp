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

// Tensor archive ("snapshot") container. Byte layout, all integers
// little-endian:
//
//   magic        8 bytes  "GMRLTSR1"
//   count        uint32   number of entries
//   per entry:
//     name_len   uint32
//     name       name_len bytes, UTF-8
//     rank       uint32   (0..5)
//     dims       rank x uint64
//     values     prod(dims) x IEEE-754 binary64, row-major
//
// Used for checkpoints and for binary datasets (single entry "values").

#ifndef GMRL_SNAPSHOT_HPP_
#define GMRL_SNAPSHOT_HPP_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gmrl/tensor.hpp"

namespace gmrl {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_archive(std::ostream& out, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_archive(std::istream& in);

void write_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_archive(const std::filesystem::path& path);

}  // namespace gmrl

#endif  // GMRL_SNAPSHOT_HPP_
