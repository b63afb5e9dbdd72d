// SPDX-License-Identifier: Apache-2.0
// Little-endian scalar I/O shared by the binary file formats.
#pragma once

#include "derd/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace derd::detail {

template <typename T>
void write_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), bytes.size())) throw DataError("truncated " + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& what) {
  char got[4];
  if (!in.read(got, 4) || std::memcmp(got, magic, 4) != 0)
    throw DataError(what + ": bad magic (expected " + std::string(magic, 4) + ")");
}

}  // namespace derd::detail
