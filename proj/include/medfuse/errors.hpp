// Copyright 2026 The medfuse Authors. All Rights Reserved.
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

#pragma once

#include <stdexcept>
#include <string>

namespace medfuse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or combination. The CLI maps this to exit 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file (bad header, bad magic, unknown version, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A loss or log-density became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Transient failure (timeout, malformed response); the caller may retry.
class RetriableError : public Error {
 public:
  using Error::Error;
};

/// Vector width disagrees with the store or model it is meant for.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a documented precondition (shape mismatch, index out of range).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace medfuse
