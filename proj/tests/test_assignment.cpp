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

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "hfepr/assignment.hpp"

using namespace hfepr;

namespace {

// Brute force over all injective maps from rows to columns (rows <= cols).
double brute_force(const Eigen::MatrixXd& c) {
  std::vector<int> cols(c.cols());
  std::iota(cols.begin(), cols.end(), 0);
  double best = 1e300;
  do {
    double s = 0;
    for (int r = 0; r < c.rows(); ++r) s += c(r, cols[r]);
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

}  // namespace

TEST_CASE("identity cost yields the identity assignment") {
  Eigen::MatrixXd c = Eigen::MatrixXd::Ones(4, 4) - Eigen::MatrixXd::Identity(4, 4);
  CHECK(min_cost_assignment(c) == std::vector<int>{0, 1, 2, 3});
  CHECK(assignment_cost(c, {0, 1, 2, 3}) == 0.0);
}

TEST_CASE("rectangular problems") {
  Eigen::MatrixXd wide(2, 4);
  wide << 5, 1, 9, 9, 9, 9, 2, 0.5;
  CHECK(min_cost_assignment(wide) == std::vector<int>{1, 3});
  Eigen::MatrixXd tall = wide.transpose();
  const auto a = min_cost_assignment(tall);
  CHECK(a == std::vector<int>{-1, 0, -1, 1});
}

TEST_CASE("property: Hungarian and exhaustive agree with brute force") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::uniform_int_distribution<int> size(1, 6);
  for (int trial = 0; trial < 300; ++trial) {
    const int rows = size(rng), cols = rows + size(rng) % 3;
    Eigen::MatrixXd c(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int q = 0; q < cols; ++q) c(r, q) = std::floor(u(rng));
    const double truth = brute_force(c);
    const auto h = min_cost_assignment(c);
    CHECK(assignment_cost(c, h) == doctest::Approx(truth));
    std::vector<int> seen;
    for (int v : h) {
      CHECK(v >= 0);
      seen.push_back(v);
    }
    std::sort(seen.begin(), seen.end());
    CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
    const auto e = exhaustive_assignment(c);
    CHECK(assignment_cost(c, e) == doctest::Approx(truth));
  }
}

TEST_CASE("exhaustive search respects an upper bound") {
  Eigen::MatrixXd c(2, 2);
  c << 1, 2, 2, 1;
  CHECK(exhaustive_assignment(c, 1.5).empty());
  CHECK(exhaustive_assignment(c, 2.5) == std::vector<int>{0, 1});
}
