// Copyright 2026 The Crashcast Authors.
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

#ifndef CRASHCAST_ERROR_HPP_
#define CRASHCAST_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace crashcast {

enum class ErrorKind {
  kMalformed,         // unparsable input document
  kDanglingReference, // edge endpoint names a missing node
  kInvalidValue,      // nonpositive length/speed, bad weights, bad config
  kEmptyTerminals,
  kNoPath,
  kRetriesExhausted,
  kUnresolvableConflict,
  kUnsatisfiable,     // accident template constraints cannot be met
  kShapeMismatch,
  kDomain,            // log of nonpositive, etc.
  kDivergence,
  kIo,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kMalformed: return "malformed";
    case ErrorKind::kDanglingReference: return "dangling-reference";
    case ErrorKind::kInvalidValue: return "invalid-value";
    case ErrorKind::kEmptyTerminals: return "empty-terminals";
    case ErrorKind::kNoPath: return "no-path";
    case ErrorKind::kRetriesExhausted: return "retries-exhausted";
    case ErrorKind::kUnresolvableConflict: return "unresolvable-conflict";
    case ErrorKind::kUnsatisfiable: return "unsatisfiable";
    case ErrorKind::kShapeMismatch: return "shape-mismatch";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace crashcast

#endif  // CRASHCAST_ERROR_HPP_
