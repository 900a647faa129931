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

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hfepr/errors.hpp"
#include "hfepr/spectrum.hpp"
#include "hfepr/transitions.hpp"

namespace hfepr {

// ---------------------------------------------------------------------------
// Peak assignment
// ---------------------------------------------------------------------------

/// Catalog records collapsed onto distinct frequencies (degenerate copies merged).
struct SimulatedLine {
  double frequency = 0.0;
  double intensity = 0.0;
  std::vector<std::pair<int, int>> pairs;  // (initial, final) level indices
};

std::vector<SimulatedLine> merge_lines(const std::vector<TransitionRecord>& catalog, double tol = 1e-3);

struct MatchOptions {
  double gate = 50.0;                 // MHz; larger mismatches are left unassigned
  std::size_t exhaustive_limit = 10;  // exhaustive search up to this many lines on both sides
};

struct Assignment {
  std::vector<std::optional<std::size_t>> simulated;  // per measured peak
  double cost = 0.0;                                   // sum of squared mismatches, MHz^2
};

/// One-to-one assignment minimizing the total squared mismatch. Ties go to the
/// stronger simulated line. Throws DataError when either list is empty.
Assignment match_peaks(const std::vector<double>& measured, const std::vector<SimulatedLine>& simulated,
                       const MatchOptions& options = {});
Assignment match_peaks(const std::vector<double>& measured, const std::vector<TransitionRecord>& simulated,
                       const MatchOptions& options = {});

// ---------------------------------------------------------------------------
// Hamiltonian parameter fit
// ---------------------------------------------------------------------------

enum class FitParameter { APar, APerp, QuadrupoleP, GPar, GPerp, MisalignmentDeg };

std::string parameter_name(FitParameter p);
std::string parameter_unit(FitParameter p);
FitParameter parameter_from_name(const std::string& name);

struct MeasuredPeak {
  double frequency = 0.0;  // MHz
  double weight = 1.0;
  std::size_t field_index = 0;
};

/// Nominal field point: magnitude and direction (the misalignment parameter adds to theta).
struct FieldPoint {
  double magnitude_mt = 0.0;
  double theta_deg = 0.0;
  double phi_deg = 0.0;
};

struct FitProblem {
  std::vector<MeasuredPeak> peaks;
  std::vector<FitParameter> free_parameters;
  SpinSystem baseline;
  double misalignment_deg = 0.0;
  std::vector<FieldPoint> fields{FieldPoint{}};
  GeometryKind geometry = GeometryKind::VoigtLike;
  ThermalModel thermal{0.0, 0.02};
  CatalogOptions catalog{};
  MatchOptions match{};
  int max_iterations = 500;
  double step_tol = 1e-9;
  double cost_tol = 1e-12;
  /// Choose the joint sign of (A_par, A_perp, P) matching A_J/g_J when both signs fit equally.
  bool pin_sign_by_symmetry_rule = true;
};

struct AssignedPeak {
  double measured = 0.0;
  double weight = 1.0;
  std::size_t field_index = 0;
  std::optional<double> simulated;
  std::optional<double> residual;  // simulated - measured, MHz
  std::vector<std::pair<int, int>> pairs;
  bool flagged = false;  // unassigned or an outlier residual
};

struct FitResult {
  std::vector<FitParameter> parameters;
  std::vector<double> values;
  std::vector<double> sigmas;
  SpinSystem system;
  double misalignment_deg = 0.0;
  std::vector<AssignedPeak> peaks;
  double residual_rms = 0.0;  // MHz over assigned peaks
  double chi2 = 0.0;
  bool converged = false;
  int iterations = 0;
  bool sign_ambiguous = false;  // the jointly sign-flipped hyperfine solution fits equally well
  bool sign_flipped = false;    // the reported solution was flipped by the symmetry-rule pin
  std::vector<double> cost_history;
};

/// Raised when the Jacobian cannot determine every free parameter.
class RankDeficiencyError : public DataError {
 public:
  RankDeficiencyError(const std::string& what, std::vector<double> null_direction)
      : DataError(what), null_direction(std::move(null_direction)) {}
  std::vector<double> null_direction;  // per free parameter, unit norm in scaled units
};

/// Damped least squares over the free parameters; assignments are refreshed until stable.
FitResult fit_parameters(const FitProblem& problem);

// ---------------------------------------------------------------------------
// Consistency rules and calibrations
// ---------------------------------------------------------------------------

struct SymmetryReport {
  double ratio = 0.0;               // g_par A_perp / (g_perp A_par)
  double a_par_over_g_par = 0.0;    // MHz
  double a_perp_over_g_perp = 0.0;  // MHz
  double aj_over_gj = 0.0;          // MHz
  double deviation_par = 0.0;       // (A_par/g_par) - (A_J/g_J)
  double deviation_perp = 0.0;
};

SymmetryReport validate_symmetry_rules(const SpinSystem& system);

/// B = f / (g_DPPH mu_B/h). Throws DataError for a negative center.
double calibrate_field(double dpph_center_mhz);
double calibrate_field(const PeakFit& dpph_line);
double dpph_frequency(double field_mt);

enum class NominalAxis { ParallelC, PerpC };

struct MisalignmentResult {
  double angle_deg = 0.0;  // angle between B0 and c, or deviation from 90 deg for PerpC
  double g_eff = 0.0;
  double slope = 0.0;  // MHz/mT
};

double effective_g(double g_parallel, double g_perp, double theta_deg);

/// Fits f = g_eff(theta) mu_B B through the origin on the I = 0 branch.
MisalignmentResult extract_misalignment(const std::vector<std::pair<double, double>>& lines, NominalAxis axis,
                                        double g_parallel, double g_perp);

}  // namespace hfepr
