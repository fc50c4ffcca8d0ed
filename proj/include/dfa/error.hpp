// Copyright 2026 The DFA Authors.
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
#include <string_view>

namespace dfa {

/// Coarse error categories. The CLI reports the category name in its
/// machine-readable error output, so keep the strings stable.
enum class ErrorKind {
  kInvalidArgument,
  kShape,
  kConfig,
  kLoad,
  kData,
  kDetectionInvalid,
  kUninitialized,
  kNumerical,
  kUndefinedMetric,
  kIo,
  kUsage,  // bad command line, including unknown config overrides
};

std::string_view error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kShape: return "shape_error";
    case ErrorKind::kConfig: return "config_error";
    case ErrorKind::kLoad: return "load_error";
    case ErrorKind::kData: return "data_error";
    case ErrorKind::kDetectionInvalid: return "detection_invalid";
    case ErrorKind::kUninitialized: return "uninitialized";
    case ErrorKind::kNumerical: return "numerical_error";
    case ErrorKind::kUndefinedMetric: return "undefined_metric";
    case ErrorKind::kIo: return "io_error";
    case ErrorKind::kUsage: return "usage_error";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void check(bool ok, ErrorKind kind, const std::string& message) {
  if (!ok) fail(kind, message);
}

}  // namespace dfa
