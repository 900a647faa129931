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

#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "hfepr/spectrum.hpp"
#include "hfepr/transitions.hpp"

namespace hfepr {

struct BranchSample {
  double field_mt = 0.0;  // scan coordinate
  double frequency = 0.0;
  double intensity = 0.0;
  int initial_index = -1;
  int final_index = -1;
  Vector initial_state;  // empty for measured branches
  Vector final_state;
};

/// One level pair followed across a field scan by eigenvector continuity.
struct TransitionBranch {
  int id = 0;
  std::vector<BranchSample> samples;
  std::string diagnostic;  // why the branch ended early, if it did

  double f0() const { return samples.empty() ? 0.0 : samples.front().frequency; }
  double max_intensity() const;
};

struct TrackOptions {
  double overlap_threshold = 0.7;
};

/// Branches seeded from every catalog record; level identity between neighbouring
/// points follows the maximal-overlap permutation of eigenvectors. A level whose
/// overlap drops below the threshold ends its branch with a diagnostic, and the
/// pair restarts as a new branch.
std::vector<TransitionBranch> track_branches(const std::vector<ScanPoint>& scan, const TrackOptions& options = {});

/// Branch built from measured (field, frequency) samples, e.g. fitted line centers.
TransitionBranch branch_from_samples(const std::vector<std::pair<double, double>>& samples, int id = 0);

struct Sensitivity {
  double s1 = 0.0;  // MHz/mT
  double s2 = 0.0;  // MHz/mT^2
};

/// Central finite differences on the branch samples, interpolated linearly between
/// interior samples. Throws DataError within one step of either end.
Sensitivity sensitivity(const TransitionBranch& branch, double field_mt);

/// Re-diagonalizes the Hamiltonian along a fixed scan direction for one branch.
class BranchEvaluator {
 public:
  BranchEvaluator(const SpinModel& model, const Vec3& direction);

  struct Levels {
    int initial_index = -1;
    int final_index = -1;
    double frequency = 0.0;
    double s1_hellmann_feynman = 0.0;  // slope_final - slope_initial
    double slope_initial = 0.0;        // dE/dB of each level, MHz/mT
    double slope_final = 0.0;
    double min_gap = 0.0;  // smallest distance of either level to any other level, MHz
    Vector initial_state;
    Vector final_state;
  };

  /// Levels at coordinate s with maximal overlap to the reference states.
  Levels evaluate(double coordinate, const Vector& initial_ref, const Vector& final_ref) const;
  double frequency(double coordinate, const Vector& initial_ref, const Vector& final_ref) const;

  const SpinModel& model() const { return model_; }
  const Vec3& direction() const { return direction_; }

 private:
  const SpinModel& model_;
  Vec3 direction_;
  Matrix dh_;
};

struct HellmannFeynmanCheck {
  double s1_fd = 0.0;
  double s1_hf = 0.0;
  bool near_degenerate = false;
};

/// Compares the finite-difference slope of a simulated branch with <v|dH/dB|v>.
/// Near-degenerate when a level gap is below 10x the level motion over one step.
HellmannFeynmanCheck cross_check_sensitivity(const TransitionBranch& branch, std::size_t sample_index,
                                             const BranchEvaluator& evaluator);

struct ZefozReport {
  int branch_id = 0;
  double f0 = 0.0;          // branch frequency at the first scan point, MHz
  double b_star = 0.0;      // mT
  double f_star = 0.0;      // MHz
  double s2 = 0.0;          // MHz/mT^2 at b_star
  double s1_residual = 0.0; // |S1| at b_star
  double s1_start = 0.0;    // slope at the first interior sample
  double s1_end = 0.0;      // slope at the last interior sample
};

/// Sign changes of S1 along the branch, refined by bisection on exact frequencies
/// when an evaluator is supplied (otherwise by the vertex of the local parabola).
/// Branches with fewer than 5 samples yield no reports.
std::vector<ZefozReport> find_zefoz(const TransitionBranch& branch, double tolerance = 1e-3,
                                    const BranchEvaluator* evaluator = nullptr);

/// Number of S1 sign changes between consecutive interior samples.
int count_slope_sign_changes(const TransitionBranch& branch);

struct LinewidthReport {
  std::vector<std::pair<double, double>> table;  // (field mT, FWHM MHz)
  bool flat = false;
  std::optional<double> b_min;
  std::optional<double> gamma_min;
  std::optional<double> zefoz_offset;  // |b_min - b_star|
};

/// Linewidth minimum from the parabola through the three narrowest lines.
LinewidthReport linewidth_vs_field(const std::vector<std::pair<double, PeakFit>>& fits,
                                   std::optional<ZefozReport> zefoz = std::nullopt);

struct DirectionSearch {
  double theta_deg = 0.0;
  double phi_deg = 0.0;
  std::vector<TransitionBranch> branches;
  std::vector<ZefozReport> reports;
};

/// One-dimensional ZEFOZ search repeated over a grid of field directions.
std::vector<DirectionSearch> zefoz_direction_batch(const SpinModel& model,
                                                   const std::vector<std::pair<double, double>>& angles_deg,
                                                   const std::vector<double>& coordinates, GeometryKind geometry,
                                                   const ThermalModel& thermal, const CatalogOptions& catalog,
                                                   double tolerance = 1e-3, unsigned threads = 1);

/// Branch starting closest to f0 (within tol) among those with a turning point,
/// falling back to the closest one overall.
std::optional<std::size_t> select_branch(const std::vector<TransitionBranch>& branches, double f0, double tol);

/// CSV: branch_id,f0_MHz,B_star_mT,f_star_MHz,S2_MHz_per_mT2,S1_residual
void write_zefoz_csv(std::ostream& out, const std::vector<ZefozReport>& reports);

/// CSV: field_mT,f_center_MHz,fwhm_MHz (fwhm left empty when unknown).
void write_branch_csv(std::ostream& out, const TransitionBranch& branch,
                      const std::vector<std::pair<double, double>>& fwhm = {});

}  // namespace hfepr
