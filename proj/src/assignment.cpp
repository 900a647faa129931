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

#include "hfepr/assignment.hpp"

#include <algorithm>
#include <limits>

namespace hfepr {

namespace {

// Classic potentials formulation for n <= m; rows and columns are 1-based inside.
std::vector<int> hungarian_rows_le_cols(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> out(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) out[p[j] - 1] = j - 1;
  return out;
}

void search(const Eigen::MatrixXd& cost, int row, std::vector<char>& used, std::vector<int>& current, double acc,
            double& best, std::vector<int>& best_assignment, int skips_left) {
  if (acc >= best) return;
  if (row == cost.rows()) {
    best = acc;
    best_assignment = current;
    return;
  }
  for (int j = 0; j < cost.cols(); ++j) {
    if (used[j]) continue;
    used[j] = 1;
    current[row] = j;
    search(cost, row + 1, used, current, acc + cost(row, j), best, best_assignment, skips_left);
    used[j] = 0;
  }
  if (skips_left > 0) {
    current[row] = -1;
    search(cost, row + 1, used, current, acc, best, best_assignment, skips_left - 1);
  }
}

}  // namespace

std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost) {
  if (cost.rows() == 0) return {};
  if (cost.cols() == 0) return std::vector<int>(cost.rows(), -1);
  if (cost.rows() <= cost.cols()) return hungarian_rows_le_cols(cost);
  const std::vector<int> by_col = hungarian_rows_le_cols(cost.transpose());
  std::vector<int> out(cost.rows(), -1);
  for (int j = 0; j < static_cast<int>(by_col.size()); ++j) out[by_col[j]] = j;
  return out;
}

std::vector<int> exhaustive_assignment(const Eigen::MatrixXd& cost, double upper_bound) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  std::vector<char> used(m, 0);
  std::vector<int> current(n, -1), best_assignment;
  double best = upper_bound;
  search(cost, 0, used, current, 0.0, best, best_assignment, std::max(0, n - m));
  return best_assignment;
}

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& assignment) {
  double total = 0.0;
  for (int i = 0; i < static_cast<int>(assignment.size()); ++i)
    if (assignment[i] >= 0) total += cost(i, assignment[i]);
  return total;
}

}  // namespace hfepr
