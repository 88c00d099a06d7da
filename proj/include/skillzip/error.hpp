// Copyright 2026 The skillzip Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace skillzip {

// Base for every error raised by the library. The CLI maps IoError to exit
// code 3 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not chain or do not match.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad magic, bad version, CRC mismatch, truncated payload, malformed record.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Argument or configuration outside its documented domain.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures (open, read, write, rename).
class IoError : public Error {
 public:
  using Error::Error;
};

// A request carried a label with no registered skillpack.
class RoutingError : public Error {
 public:
  RoutingError(const std::string& label)
      : Error("unknown task label '" + label + "'"), label_(label) {}
  const std::string& label() const { return label_; }

 private:
  std::string label_;
};

// Numerical failure (rank-deficient draw, indefinite Hessian).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace skillzip
