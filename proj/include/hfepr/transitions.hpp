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
#include <vector>

#include "hfepr/spin_core.hpp"

namespace hfepr {

enum class GeometryKind { FaradayLike, VoigtLike };

/// Static field direction plus the drive-field directions used for intensities.
/// FaradayLike samples two unit vectors perpendicular to B0; VoigtLike adds B0 itself.
struct ExcitationGeometry {
  Vec3 b0_direction = Vec3::UnitZ();
  GeometryKind kind = GeometryKind::FaradayLike;
  std::vector<Vec3> b1_directions;

  static ExcitationGeometry make(const Vec3& b0_direction, GeometryKind kind);
  /// Explicit drive directions (normalized), e.g. a pure B1 || c probe.
  static ExcitationGeometry custom(const Vec3& b0_direction, std::vector<Vec3> b1_directions);
};

/// Sensor temperature and the floor of the spin temperature, both in kelvin.
struct ThermalModel {
  double sensor_temperature = 0.02;
  double t_min = 0.02;
};

/// T_eff = T_min sqrt(1 + (T/T_min)^2). Throws ConfigError when t_min <= 0.
double effective_temperature(const ThermalModel& model);

/// Boltzmann populations of the levels at temperature (K); sums to one.
std::vector<double> populations(const EigenSystem& eig, double temperature);
std::vector<double> populations(const Eigen::VectorXd& energies_mhz, double temperature);

/// |p_f - p_i|. Throws DataError on an index out of range.
double spin_polarisation(const std::vector<double>& pops, int initial_index, int final_index);

struct TransitionRecord {
  int initial_index = 0;
  int final_index = 0;
  double frequency = 0.0;          // MHz
  double matrix_element_sq = 0.0;  // |<f| g.b1.S |i>|^2 for unit b1
  double chi = 0.0;                // population difference
  double intensity = 0.0;          // chi * matrix_element_sq
  std::optional<int> delta_mf;     // empty when the m_F labels are mixed
};

enum class IntensityAggregation { Max, Sum };

struct CatalogOptions {
  double f_min = 0.0;  // MHz
  double f_max = 1e9;  // MHz
  /// Records weaker than this fraction of the strongest record are dropped.
  double relative_threshold = 1e-4;
  IntensityAggregation aggregation = IntensityAggregation::Max;
  /// |<F_z>| further than this from an allowed m_F value marks the level as mixed.
  double mf_label_tolerance = 0.1;
};

/// Expectation values <F_z> for every level.
std::vector<double> mf_expectations(const EigenSystem& eig, const SpinOperators& ops);

/// Every level pair with E_f > E_i and frequency inside the window, sorted by frequency.
std::vector<TransitionRecord> transition_catalog(const EigenSystem& eig, const SpinModel& model,
                                                 const ExcitationGeometry& geometry, const ThermalModel& thermal,
                                                 const CatalogOptions& options);

struct ScanPoint {
  double coordinate = 0.0;  // signed field along the scan direction, mT
  FieldVector field;
  EigenSystem eig;
  std::vector<TransitionRecord> catalog;
};

/// Fields s*u for every s in `coordinates`, u the unit scan direction.
std::vector<FieldVector> field_line(const Vec3& direction, const std::vector<double>& coordinates);

/// Coordinates start, start+step, ..., stop (inclusive within half a step).
std::vector<double> field_grid(double start, double stop, double step);

/// One catalog per field point; points are evaluated on `threads` workers.
/// Per-point failures are rethrown as DataError naming the field value.
std::vector<ScanPoint> field_scan(const SpinModel& model, const Vec3& direction, const std::vector<double>& coordinates,
                                  const ExcitationGeometry& geometry, const ThermalModel& thermal,
                                  const CatalogOptions& options, unsigned threads = 1);

/// CSV with header field_mT,freq_MHz,intensity,chi,i_index,f_index,delta_mF.
void write_catalog_csv(std::ostream& out, const std::vector<ScanPoint>& scan);

/// Normalized P_s(T) curves for one level pair at the given field, evaluated either
/// at the sensor temperatures or at T_eff(T) with the supplied t_min.
std::vector<double> polarisation_curve(const EigenSystem& eig, int initial_index, int final_index,
                                       const std::vector<double>& temperatures, std::optional<double> t_min);

}  // namespace hfepr
