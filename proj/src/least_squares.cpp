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

#include "hfepr/least_squares.hpp"

#include <algorithm>
#include <cmath>

namespace hfepr {

Eigen::MatrixXd finite_difference_jacobian(const ResidualFn& residuals, const Eigen::VectorXd& x,
                                           const Eigen::VectorXd& steps) {
  Eigen::MatrixXd jac;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd up = x, down = x;
    up[k] += steps[k];
    down[k] -= steps[k];
    const Eigen::VectorXd col = (residuals(up) - residuals(down)) / (2.0 * steps[k]);
    if (k == 0) jac.resize(col.size(), x.size());
    jac.col(k) = col;
  }
  return jac;
}

LeastSquaresResult levenberg_marquardt(const ResidualFn& residuals, const JacobianFn& jacobian,
                                       const Eigen::VectorXd& x0, const LeastSquaresOptions& options) {
  LeastSquaresResult out;
  out.params = x0;
  out.residuals = residuals(x0);
  out.cost = out.residuals.squaredNorm();
  out.jacobian = jacobian(x0);
  out.cost_history.push_back(out.cost);

  double lambda = options.initial_damping;
  for (int it = 0; it < options.max_iterations; ++it) {
    out.iterations = it + 1;
    if (out.cost == 0.0) {
      out.converged = true;
      return out;
    }
    const Eigen::MatrixXd& j = out.jacobian;
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd gradient = j.transpose() * out.residuals;
    Eigen::VectorXd diag = jtj.diagonal();
    const double floor = std::max(diag.maxCoeff(), 1e-300) * 1e-12;
    diag = diag.cwiseMax(floor);

    bool accepted = false;
    while (lambda < 1e16) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * diag;
      const Eigen::VectorXd step = a.ldlt().solve(-gradient);
      const Eigen::VectorXd trial = out.params + step;
      const Eigen::VectorXd r = residuals(trial);
      const double cost = r.squaredNorm();
      if (std::isfinite(cost) && cost <= out.cost) {
        const double improvement = (out.cost - cost) / out.cost;
        const double rel_step = step.norm() / (out.params.norm() + options.step_tol);
        out.params = trial;
        out.residuals = r;
        out.cost = cost;
        out.jacobian = jacobian(trial);
        out.cost_history.push_back(cost);
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (rel_step < options.step_tol || (options.cost_tol > 0.0 && improvement < options.cost_tol)) {
          out.converged = true;
          return out;
        }
        break;
      }
      lambda *= 10.0;
    }
    // No downhill step at any damping: the current point is a minimum to working precision.
    if (!accepted) {
      out.converged = true;
      return out;
    }
  }
  return out;
}

}  // namespace hfepr
