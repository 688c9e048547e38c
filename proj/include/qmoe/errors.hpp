/* Copyright 2026 The qmoe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef QMOE_ERRORS_HPP_
#define QMOE_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qmoe {

// Bad shapes, out-of-range options, malformed configs. Maps to CLI exit code 1.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, exp overflow, failed finite differences. Maps to exit code 2.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public NumericalFailure {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : NumericalFailure("diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// A Voronoi cell whose size has no known exact rbar value.
class UnsupportedCellSize : public InvalidArgument {
 public:
  explicit UnsupportedCellSize(std::size_t cell_size)
      : InvalidArgument("no exact rbar value for Voronoi cell of size " +
                        std::to_string(cell_size)),
        cell_size_(cell_size) {}
  std::size_t cell_size() const noexcept { return cell_size_; }

 private:
  std::size_t cell_size_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

}  // namespace qmoe

#endif  // QMOE_ERRORS_HPP_
