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

#include <cmath>
#include <random>

#include "hfepr/constants.hpp"
#include "hfepr/errors.hpp"
#include "hfepr/presets.hpp"
#include "hfepr/spin_core.hpp"

using namespace hfepr;

namespace {

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

SpinSystem random_system(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> twice_i(0, 4);
  SpinSystem s;
  s.nuclear_spin = 0.5 * (2 * twice_i(rng) + 1);
  s.g_parallel = 4.0 + 3.0 * u(rng);
  s.g_perp = 4.0 + 3.0 * u(rng);
  s.a_parallel = 900.0 * u(rng);
  s.a_perp = 900.0 * u(rng);
  s.quadrupole_p = 15.0 * u(rng);
  return s;
}

}  // namespace

TEST_CASE("angular momentum commutation and Casimir") {
  for (double j : {0.5, 1.0, 1.5, 3.5, 4.5}) {
    const auto J = build_angular_momentum(j);
    const std::complex<double> i(0, 1);
    CHECK(max_abs(J.x * J.y - J.y * J.x - i * J.z) < 1e-12);
    CHECK(max_abs(J.y * J.z - J.z * J.y - i * J.x) < 1e-12);
    CHECK(max_abs(J.z * J.x - J.x * J.z - i * J.y) < 1e-12);
    const int d = static_cast<int>(2 * j + 1);
    CHECK(max_abs(J.sq - j * (j + 1) * Matrix::Identity(d, d)) < 1e-12);
    CHECK(J.z(0, 0).real() == doctest::Approx(j));  // m descending
  }
}

TEST_CASE("invalid spins are configuration errors") {
  CHECK_THROWS_AS(build_angular_momentum(0.3), ConfigError);
  CHECK_THROWS_AS(build_angular_momentum(-1.0), ConfigError);
  SpinSystem s = preset("this_work");
  s.nuclear_spin = 1.25;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = preset("this_work");
  s.a_perp = NAN;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("operator dimensions and product ordering") {
  const SpinOperators ops(0.5, 3.5);
  CHECK(ops.dimension() == 16);
  // Electron factor first: the first 8 states carry m_S = +1/2.
  CHECK(ops.sz(0, 0).real() == doctest::Approx(0.5));
  CHECK(ops.sz(8, 8).real() == doctest::Approx(-0.5));
  CHECK(ops.iz(0, 0).real() == doctest::Approx(3.5));
  CHECK(max_abs(ops.fz - ops.sz - ops.iz) == 0.0);
}

TEST_CASE("mismatched operators are rejected") {
  const SpinOperators ops(0.5, 1.5);
  CHECK_THROWS_AS(assemble_hamiltonian(preset("this_work"), ops, {}), ConfigError);
}

TEST_CASE("I = 0 Zeeman splitting along c") {
  const SpinModel model(preset("er_i0"));
  const EigenSystem eig = model.solve({0, 0, 10.0});
  REQUIRE(eig.dimension() == 2);
  CHECK(eig.energies[1] - eig.energies[0] == doctest::Approx(3.137 * kBohrMhzPerMt * 10.0).epsilon(1e-12));
  const EigenSystem perp = model.solve({10.0, 0, 0});
  CHECK(perp.energies[1] - perp.energies[0] == doctest::Approx(8.105 * kBohrMhzPerMt * 10.0).epsilon(1e-12));
}

TEST_CASE("isotropic hyperfine oracle: F = 4 and F = 3 split by 4A") {
  SpinSystem s;
  s.g_parallel = s.g_perp = 2.0;
  s.a_parallel = s.a_perp = -250.0;
  const EigenSystem eig = SpinModel(s).solve({});
  // A < 0 puts F = 4 (nine states) lowest.
  for (int k = 0; k < 9; ++k) CHECK(eig.energies[k] == doctest::Approx(7.0 * -250.0 / 4.0));
  for (int k = 9; k < 16; ++k) CHECK(eig.energies[k] == doctest::Approx(-9.0 * -250.0 / 4.0));
  CHECK(eig.energies[15] - eig.energies[0] == doctest::Approx(4.0 * 250.0));
}

TEST_CASE("non-Hermitian input is a data error") {
  Matrix h = Matrix::Zero(2, 2);
  h(0, 1) = 1.0;
  CHECK(hermiticity_defect(h) > 0.5);
  CHECK_THROWS_AS(eigensystem(h, {}), DataError);
  h(1, 0) = 1.0 + 1e-13;
  CHECK_NOTHROW(eigensystem(h, {}));
}

TEST_CASE("degenerate blocks group close energies") {
  Eigen::VectorXd e(5);
  e << 0.0, 0.0005, 1.0, 2.0, 2.0002;
  const auto blocks = degenerate_blocks(e, 1e-3);
  CHECK(blocks == std::vector<int>{0, 2, 3});
}

TEST_CASE("zero-field eigenstates carry definite m_F") {
  const SpinModel model(preset("this_work"));
  const EigenSystem eig = model.solve({});
  const Matrix& fz = model.operators().fz;
  for (int k = 0; k < eig.dimension(); ++k) {
    const Vector v = eig.states.col(k);
    const double m = (v.adjoint() * fz * v)(0, 0).real();
    CHECK(std::abs(m - std::round(m)) < 1e-9);
    CHECK((fz * v - m * v).norm() < 1e-9);
  }
}

TEST_CASE("eigenvector phase convention: largest component real and positive") {
  const SpinModel model(preset("this_work"));
  const EigenSystem eig = model.solve({3.0, 1.0, 7.0});
  for (int k = 0; k < eig.dimension(); ++k) {
    Eigen::Index at = 0;
    eig.states.col(k).cwiseAbs().maxCoeff(&at);
    CHECK(std::abs(eig.states(at, k).imag()) < 1e-12);
    CHECK(eig.states(at, k).real() > 0.0);
  }
}

TEST_CASE("property: Hamiltonian invariants over random systems and fields") {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    SpinSystem s = random_system(rng);
    const FieldVector b{80 * u(rng), 80 * u(rng), 80 * u(rng)};
    const SpinModel model(s);
    const Matrix h = model.hamiltonian(b);
    REQUIRE(hermiticity_defect(h) == 0.0);
    CHECK(std::abs(h.trace()) < 1e-9);  // traceless form
    const EigenSystem eig = model.solve(b);
    const int d = eig.dimension();
    CHECK(max_abs(eig.states.adjoint() * eig.states - Matrix::Identity(d, d)) < 1e-10);
    for (int k = 1; k < d; ++k) CHECK(eig.energies[k] >= eig.energies[k - 1]);

    // Verbatim constant shifts every level equally.
    s.quadrupole_form = QuadrupoleForm::Verbatim;
    const EigenSystem v = SpinModel(s).solve(b);
    const double shift = v.energies[0] - eig.energies[0];
    for (int k = 0; k < d; ++k) CHECK(std::abs(v.energies[k] - eig.energies[k] - shift) < 1e-9);
  }
}

TEST_CASE("zeeman derivative matches a finite difference of the Hamiltonian") {
  const SpinSystem s = preset("this_work");
  const SpinOperators ops(s.electron_spin, s.nuclear_spin);
  const Vec3 dir = direction_from_angles(33.0, 12.0);
  const double b = 17.0, h = 1e-3;
  const Matrix fd = (assemble_hamiltonian(s, ops, FieldVector::from_vec((b + h) * dir)) -
                     assemble_hamiltonian(s, ops, FieldVector::from_vec((b - h) * dir))) /
                    (2 * h);
  CHECK(max_abs(fd - zeeman_derivative(s, ops, dir)) < 1e-8);
}

TEST_CASE("direction from angles") {
  CHECK((direction_from_angles(0, 0) - Vec3::UnitZ()).norm() < 1e-15);
  CHECK((direction_from_angles(90, 0) - Vec3::UnitX()).norm() < 1e-15);
  CHECK((direction_from_angles(90, 90) - Vec3::UnitY()).norm() < 1e-15);
}

TEST_CASE("presets and JSON round trip") {
  const SpinSystem tw = preset("this_work");
  CHECK(tw.a_parallel == -319.6);
  CHECK(tw.a_perp == -844.2);
  CHECK(tw.quadrupole_p == -7.184);
  CHECK_THROWS_AS(preset("nope"), ConfigError);
  for (const auto& name : preset_names()) {
    const SpinSystem s = preset(name);
    const SpinSystem back = spin_system_from_json(spin_system_to_json(s));
    CHECK(back.a_parallel == s.a_parallel);
    CHECK(back.quadrupole_p == s.quadrupole_p);
    CHECK(back.nuclear_spin == s.nuclear_spin);
  }
  auto doc = spin_system_to_json(tw);
  doc["quadrupole_form"] = "sideways";
  CHECK_THROWS_AS(spin_system_from_json(doc), ConfigError);
  doc.erase("g_perp");
  CHECK_THROWS_AS(spin_system_from_json(doc), ConfigError);
}
