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

#include "hfepr/spin_core.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/KroneckerProduct>
#include <cmath>
#include <sstream>

#include "hfepr/constants.hpp"
#include "hfepr/errors.hpp"

namespace hfepr {

namespace {

bool is_half_integer(double j) {
  const double twice = 2.0 * j;
  return std::isfinite(j) && j >= 0.0 && std::abs(twice - std::round(twice)) < 1e-12;
}

int multiplicity(double j) { return static_cast<int>(std::lround(2.0 * j)) + 1; }

// Largest-magnitude component made real and positive so eigenvectors are reproducible.
void fix_phase(Matrix& states) {
  for (Eigen::Index c = 0; c < states.cols(); ++c) {
    Eigen::Index k = 0;
    states.col(c).cwiseAbs().maxCoeff(&k);
    const std::complex<double> pivot = states(k, c);
    if (std::abs(pivot) > 0.0) states.col(c) *= std::conj(pivot) / std::abs(pivot);
  }
}

}  // namespace

int SpinSystem::dimension() const { return multiplicity(electron_spin) * multiplicity(nuclear_spin); }

void SpinSystem::validate() const {
  if (!is_half_integer(electron_spin))
    throw ConfigError("electron_spin must be a nonnegative integer or half-integer");
  if (!is_half_integer(nuclear_spin))
    throw ConfigError("nuclear_spin must be a nonnegative integer or half-integer");
  for (double v : {g_parallel, g_perp, a_parallel, a_perp, quadrupole_p})
    if (!std::isfinite(v)) throw ConfigError("spin system parameters must be finite");
}

double FieldVector::magnitude() const { return std::sqrt(x * x + y * y + z * z); }

Vec3 direction_from_angles(double theta_deg, double phi_deg) {
  const double t = deg_to_rad(theta_deg);
  const double p = deg_to_rad(phi_deg);
  return {std::sin(t) * std::cos(p), std::sin(t) * std::sin(p), std::cos(t)};
}

AngularMomentum build_angular_momentum(double j) {
  if (!is_half_integer(j)) {
    std::ostringstream msg;
    msg << "angular momentum j=" << j << " is not a nonnegative integer or half-integer";
    throw ConfigError(msg.str());
  }
  const int d = multiplicity(j);
  AngularMomentum out;
  out.z = Matrix::Zero(d, d);
  Matrix raise = Matrix::Zero(d, d);
  for (int k = 0; k < d; ++k) {
    const double m = j - k;
    out.z(k, k) = m;
    // <m+1| J+ |m> sits one row above the diagonal.
    if (k > 0) raise(k - 1, k) = std::sqrt(j * (j + 1.0) - m * (m + 1.0));
  }
  const Matrix lower = raise.adjoint();
  out.x = (raise + lower) * 0.5;
  out.y = (raise - lower) * std::complex<double>(0.0, -0.5);
  out.sq = Matrix::Identity(d, d) * (j * (j + 1.0));
  return out;
}

SpinOperators::SpinOperators(double electron_spin, double nuclear_spin)
    : s_(electron_spin), i_(nuclear_spin) {
  const AngularMomentum s = build_angular_momentum(electron_spin);
  const AngularMomentum n = build_angular_momentum(nuclear_spin);
  const Matrix es = Matrix::Identity(s.z.rows(), s.z.cols());
  const Matrix en = Matrix::Identity(n.z.rows(), n.z.cols());
  sx = Eigen::kroneckerProduct(s.x, en);
  sy = Eigen::kroneckerProduct(s.y, en);
  sz = Eigen::kroneckerProduct(s.z, en);
  ix = Eigen::kroneckerProduct(es, n.x);
  iy = Eigen::kroneckerProduct(es, n.y);
  iz = Eigen::kroneckerProduct(es, n.z);
  isq = Eigen::kroneckerProduct(es, n.sq);
  fz = sz + iz;
  dim_ = static_cast<int>(sz.rows());
}

Matrix quadrupole_operator(const SpinOperators& ops, QuadrupoleForm form) {
  const double sign = form == QuadrupoleForm::Traceless ? -1.0 : 1.0;
  return (3.0 * ops.iz * ops.iz + sign * ops.isq) / 3.0;
}

Matrix assemble_hamiltonian(const SpinSystem& system, const SpinOperators& ops, const FieldVector& field) {
  if (system.dimension() != ops.dimension() || system.electron_spin != ops.electron_spin() ||
      system.nuclear_spin != ops.nuclear_spin()) {
    std::ostringstream msg;
    msg << "operator cache of dimension " << ops.dimension() << " does not match spin system of dimension "
        << system.dimension();
    throw ConfigError(msg.str());
  }
  Matrix h = kBohrMhzPerMt * (system.g_perp * (field.x * ops.sx + field.y * ops.sy) +
                              system.g_parallel * field.z * ops.sz);
  h += system.a_perp * (ops.sx * ops.ix + ops.sy * ops.iy) + system.a_parallel * ops.sz * ops.iz;
  if (system.quadrupole_p != 0.0) h += system.quadrupole_p * quadrupole_operator(ops, system.quadrupole_form);
  return h;
}

Matrix assemble_hamiltonian(const SpinSystem& system, const FieldVector& field) {
  system.validate();
  return assemble_hamiltonian(system, SpinOperators(system.electron_spin, system.nuclear_spin), field);
}

Matrix zeeman_derivative(const SpinSystem& system, const SpinOperators& ops, const Vec3& direction) {
  return kBohrMhzPerMt * (system.g_perp * (direction.x() * ops.sx + direction.y() * ops.sy) +
                          system.g_parallel * direction.z() * ops.sz);
}

Matrix drive_operator(const SpinSystem& system, const SpinOperators& ops, const Vec3& b1) {
  return system.g_perp * (b1.x() * ops.sx + b1.y() * ops.sy) + system.g_parallel * b1.z() * ops.sz;
}

double hermiticity_defect(const Matrix& h) {
  const double scale = h.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return (h - h.adjoint()).cwiseAbs().maxCoeff() / scale;
}

std::vector<int> degenerate_blocks(const Eigen::VectorXd& energies, double tol) {
  std::vector<int> starts;
  for (Eigen::Index k = 0; k < energies.size(); ++k)
    if (k == 0 || energies[k] - energies[k - 1] > tol) starts.push_back(static_cast<int>(k));
  return starts;
}

EigenSystem eigensystem(const Matrix& h, const FieldVector& field, const EigenOptions& options,
                        const Matrix* label_operator) {
  if (h.rows() != h.cols()) throw DataError("Hamiltonian must be square");
  const double defect = hermiticity_defect(h);
  if (defect > options.hermiticity_tol) {
    std::ostringstream msg;
    msg << "matrix is not Hermitian: relative asymmetry " << defect << " exceeds " << options.hermiticity_tol;
    throw DataError(msg.str());
  }
  // Solve the exactly Hermitian part so round-off asymmetry cannot leak in.
  const Matrix herm = (h + h.adjoint()) * 0.5;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(herm);
  if (solver.info() != Eigen::Success) throw DataError("eigensolver failed");

  EigenSystem out{solver.eigenvalues(), solver.eigenvectors(), field};

  if (label_operator != nullptr) {
    if (label_operator->rows() != h.rows()) throw ConfigError("label operator dimension mismatch");
    const std::vector<int> starts = degenerate_blocks(out.energies, options.degeneracy_tol);
    const int d = out.dimension();
    for (std::size_t b = 0; b < starts.size(); ++b) {
      const int begin = starts[b];
      const int end = b + 1 < starts.size() ? starts[b + 1] : d;
      const int n = end - begin;
      if (n < 2) continue;
      const Matrix block = out.states.middleCols(begin, n);
      const Matrix projected = block.adjoint() * (*label_operator) * block;
      Eigen::SelfAdjointEigenSolver<Matrix> inner((projected + projected.adjoint()) * 0.5);
      out.states.middleCols(begin, n) = block * inner.eigenvectors();
    }
  }
  fix_phase(out.states);
  return out;
}

SpinModel::SpinModel(SpinSystem system, EigenOptions options)
    : system_((system.validate(), system)),
      ops_(system_.electron_spin, system_.nuclear_spin),
      options_(options) {}

Matrix SpinModel::hamiltonian(const FieldVector& field) const { return assemble_hamiltonian(system_, ops_, field); }

EigenSystem SpinModel::solve(const FieldVector& field) const {
  return eigensystem(hamiltonian(field), field, options_, &ops_.fz);
}

}  // namespace hfepr
