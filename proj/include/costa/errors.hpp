// Copyright 2026 The costa-workbench Authors
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

namespace costa {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are inconsistent for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A named graph input was requested but never bound.
class UnboundInputError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument value failed (ranges, empty inputs, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// The CTC lattice admits no path: too few frames for the label sequence.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// A file on disk is malformed or truncated.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long last_finite_step)
      : Error(what), last_finite_step_(last_finite_step) {}
  long last_finite_step() const { return last_finite_step_; }

 private:
  long last_finite_step_;
};

}  // namespace costa
