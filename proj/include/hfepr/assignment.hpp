/* Copyright 2026 The hfepr Authors. All Rights Reserved.
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

#pragma once

#include <Eigen/Dense>
#include <limits>
#include <vector>

namespace hfepr {

/// Minimum-cost one-to-one assignment of rows to columns (Hungarian method).
/// Returns the column for each row, -1 for rows left over when rows > cols.
std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost);

/// Same contract by exhaustive branch-and-bound search; only for small instances.
/// Only assignments cheaper than `upper_bound` are explored; returns an empty
/// vector when none exists.
std::vector<int> exhaustive_assignment(const Eigen::MatrixXd& cost,
                                       double upper_bound = std::numeric_limits<double>::infinity());

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& assignment);

}  // namespace hfepr
