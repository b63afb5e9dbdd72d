// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace derd {

/// Inconsistent or invalid configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, missing or out-of-range input data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during training or inference (CLI exit code 4).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace derd
