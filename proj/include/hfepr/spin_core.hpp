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
#include <string>
#include <vector>

namespace hfepr {

using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using Vec3 = Eigen::Vector3d;

/// Selects the constant part of the axial quadrupole operator. Both choices
/// differ by a multiple of identity, so transition frequencies agree.
enum class QuadrupoleForm { Traceless, Verbatim };

/// Axial spin Hamiltonian parameters. Frequencies in MHz, crystal c-axis = z.
struct SpinSystem {
  double electron_spin = 0.5;
  double nuclear_spin = 3.5;
  double g_parallel = 0.0;
  double g_perp = 0.0;
  double a_parallel = 0.0;    // MHz
  double a_perp = 0.0;        // MHz
  double quadrupole_p = 0.0;  // MHz
  QuadrupoleForm quadrupole_form = QuadrupoleForm::Traceless;

  int dimension() const;

  /// Throws ConfigError on non half-integer spins or non-finite parameters.
  void validate() const;
};

/// Static field in the crystal frame, mT.
struct FieldVector {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double magnitude() const;
  Vec3 as_vec() const { return {x, y, z}; }

  static FieldVector from_vec(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
};

/// Unit vector at polar angle theta from c and azimuth phi (degrees).
Vec3 direction_from_angles(double theta_deg, double phi_deg);

struct AngularMomentum {
  Matrix x, y, z, sq;
};

/// Spin-j matrices in the |j, m> basis ordered m = j, j-1, ..., -j.
AngularMomentum build_angular_momentum(double j);

/// Electron and nuclear operators embedded in the (2S+1)(2I+1) product space
/// (electron factor first). Immutable after construction.
class SpinOperators {
 public:
  SpinOperators(double electron_spin, double nuclear_spin);

  int dimension() const { return dim_; }
  double electron_spin() const { return s_; }
  double nuclear_spin() const { return i_; }

  Matrix sx, sy, sz;
  Matrix ix, iy, iz, isq;
  Matrix fz;  // S_z + I_z

 private:
  double s_;
  double i_;
  int dim_;
};

/// The quadrupole operator (3 Iz^2 -/+ I(I+1)) / 3 for the selected form.
Matrix quadrupole_operator(const SpinOperators& ops, QuadrupoleForm form);

/// Full Hamiltonian in MHz. Throws ConfigError if ops do not match system.
Matrix assemble_hamiltonian(const SpinSystem& system, const SpinOperators& ops, const FieldVector& field);
Matrix assemble_hamiltonian(const SpinSystem& system, const FieldVector& field);

/// dH/d|B| along a unit direction (the Zeeman term per mT).
Matrix zeeman_derivative(const SpinSystem& system, const SpinOperators& ops, const Vec3& direction);

/// g-tensor contracted with a unit drive direction: g·b1·S (no mu_B).
Matrix drive_operator(const SpinSystem& system, const SpinOperators& ops, const Vec3& b1);

struct EigenSystem {
  Eigen::VectorXd energies;  // ascending, MHz
  Matrix states;             // columns are eigenvectors
  FieldVector field;

  int dimension() const { return static_cast<int>(energies.size()); }
};

struct EigenOptions {
  double hermiticity_tol = 1e-9;  // relative to max |H_ij|
  double degeneracy_tol = 1e-3;   // MHz
};

/// Max |H - H^dagger| entry divided by max |H| entry (0 for the zero matrix).
double hermiticity_defect(const Matrix& h);

/// Diagonalizes a Hermitian matrix. Rejects (DataError) asymmetry beyond tolerance.
/// When `label_operator` is non-null, eigenvectors inside each degenerate block
/// are rotated to diagonalize it, which fixes the m_F labels at zero field.
EigenSystem eigensystem(const Matrix& h, const FieldVector& field, const EigenOptions& options = {},
                        const Matrix* label_operator = nullptr);

/// Groups ascending energies into runs closer than tol; returns block start offsets.
std::vector<int> degenerate_blocks(const Eigen::VectorXd& energies, double tol);

/// A SpinSystem together with its cached operators.
class SpinModel {
 public:
  explicit SpinModel(SpinSystem system, EigenOptions options = {});

  const SpinSystem& system() const { return system_; }
  const SpinOperators& operators() const { return ops_; }
  const EigenOptions& options() const { return options_; }

  Matrix hamiltonian(const FieldVector& field) const;
  EigenSystem solve(const FieldVector& field) const;

 private:
  SpinSystem system_;
  SpinOperators ops_;
  EigenOptions options_;
};

}  // namespace hfepr
