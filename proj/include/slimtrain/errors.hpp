// Copyright 2026 The slimtrain Authors. All Rights Reserved.
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

#ifndef SLIMTRAIN_ERRORS_HPP_
#define SLIMTRAIN_ERRORS_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace slimtrain {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid architecture, hyperparameter or config key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad labels or other malformed user input.
class InputError : public Error {
 public:
  using Error::Error;
};

// A group index, mask or plan that no longer matches the graph it is applied to.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// Penalty-coefficient setup with degenerate inputs.
class SetupError : public Error {
 public:
  using Error::Error;
};

// Invariant broken inside the library; should be unreachable.
class InternalError : public Error {
 public:
  using Error::Error;
};

// Malformed checkpoint / dataset file. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace slimtrain

#endif  // SLIMTRAIN_ERRORS_HPP_
