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

#ifndef QMOE_DATASET_HPP_
#define QMOE_DATASET_HPP_

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "qmoe/errors.hpp"

namespace qmoe {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Provenance {
  std::uint64_t seed = 0;
  std::string config_hash;
};

// Paired inputs (one row per sample) and responses.
struct Dataset {
  RowMat X;
  Eigen::VectorXd Y;
  Provenance provenance;

  std::size_t size() const noexcept { return static_cast<std::size_t>(Y.size()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(X.cols()); }

  void validate() const {
    require(Y.size() >= 1, "dataset is empty");
    require(X.rows() == Y.size(), "dataset: X rows must equal length of Y");
    require(X.cols() >= 1, "dataset: inputs need at least one column");
  }
};

}  // namespace qmoe

#endif  // QMOE_DATASET_HPP_
