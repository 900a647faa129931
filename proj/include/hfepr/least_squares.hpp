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
#include <functional>
#include <vector>

namespace hfepr {

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

struct LeastSquaresOptions {
  int max_iterations = 200;
  double step_tol = 1e-8;   // relative parameter step
  double cost_tol = 0.0;    // relative improvement of the sum of squares; 0 disables
  double initial_damping = 1e-3;
};

struct LeastSquaresResult {
  Eigen::VectorXd params;
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;  // at params
  double cost = 0.0;         // sum of squared residuals
  int iterations = 0;
  bool converged = false;
  std::vector<double> cost_history;  // cost after every accepted step, starting with the initial cost
};

/// Central-difference Jacobian with absolute per-parameter steps.
Eigen::MatrixXd finite_difference_jacobian(const ResidualFn& residuals, const Eigen::VectorXd& x,
                                           const Eigen::VectorXd& steps);

/// Damped Gauss-Newton (Levenberg-Marquardt with Marquardt diagonal scaling).
/// Accepted steps never increase the cost. Does not throw on non-convergence;
/// callers inspect `converged`.
LeastSquaresResult levenberg_marquardt(const ResidualFn& residuals, const JacobianFn& jacobian,
                                       const Eigen::VectorXd& x0, const LeastSquaresOptions& options = {});

}  // namespace hfepr
