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

#include "hfepr/transitions.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

#include "hfepr/constants.hpp"
#include "hfepr/errors.hpp"

namespace hfepr {

ExcitationGeometry ExcitationGeometry::make(const Vec3& b0_direction, GeometryKind kind) {
  if (!(b0_direction.norm() > 0.0) || !b0_direction.allFinite())
    throw ConfigError("B0 direction must be a finite nonzero vector");
  ExcitationGeometry g;
  g.kind = kind;
  g.b0_direction = b0_direction.normalized();
  // Project the crystal axis least aligned with B0 onto the plane normal to B0.
  Eigen::Index axis = 0;
  g.b0_direction.cwiseAbs().minCoeff(&axis);
  Vec3 a = Vec3::Unit(axis);
  const Vec3 e1 = (a - a.dot(g.b0_direction) * g.b0_direction).normalized();
  const Vec3 e2 = g.b0_direction.cross(e1).normalized();
  g.b1_directions = {e1, e2};
  if (kind == GeometryKind::VoigtLike) g.b1_directions.push_back(g.b0_direction);
  return g;
}

ExcitationGeometry ExcitationGeometry::custom(const Vec3& b0_direction, std::vector<Vec3> b1_directions) {
  if (b1_directions.empty()) throw ConfigError("excitation geometry needs at least one drive direction");
  ExcitationGeometry g;
  g.b0_direction = b0_direction.norm() > 0.0 ? b0_direction.normalized() : Vec3::UnitZ();
  for (auto& d : b1_directions) {
    if (!(d.norm() > 0.0)) throw ConfigError("drive direction must be nonzero");
    d.normalize();
  }
  g.b1_directions = std::move(b1_directions);
  g.kind = GeometryKind::VoigtLike;
  for (const auto& d : g.b1_directions)
    if (std::abs(d.dot(g.b0_direction)) > 1e-12) return g;
  g.kind = GeometryKind::FaradayLike;
  return g;
}

double effective_temperature(const ThermalModel& model) {
  if (!(model.t_min > 0.0)) throw ConfigError("t_min must be positive");
  if (!(model.sensor_temperature >= 0.0)) throw ConfigError("sensor temperature must be nonnegative");
  const double r = model.sensor_temperature / model.t_min;
  return model.t_min * std::sqrt(1.0 + r * r);
}

std::vector<double> populations(const Eigen::VectorXd& energies, double temperature) {
  if (!(temperature > 0.0)) throw DataError("temperature must be positive");
  const double ground = energies.minCoeff();
  std::vector<double> p(energies.size());
  double z = 0.0;
  for (Eigen::Index k = 0; k < energies.size(); ++k) {
    p[k] = std::exp(-(energies[k] - ground) * kKelvinPerMhz / temperature);
    z += p[k];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<double> populations(const EigenSystem& eig, double temperature) {
  return populations(eig.energies, temperature);
}

double spin_polarisation(const std::vector<double>& pops, int initial_index, int final_index) {
  const int n = static_cast<int>(pops.size());
  if (initial_index < 0 || initial_index >= n || final_index < 0 || final_index >= n) {
    std::ostringstream msg;
    msg << "level index (" << initial_index << ", " << final_index << ") out of range for " << n << " levels";
    throw DataError(msg.str());
  }
  return std::abs(pops[final_index] - pops[initial_index]);
}

std::vector<double> mf_expectations(const EigenSystem& eig, const SpinOperators& ops) {
  std::vector<double> mf(eig.dimension());
  for (int k = 0; k < eig.dimension(); ++k) {
    const Vector v = eig.states.col(k);
    mf[k] = (v.adjoint() * ops.fz * v)(0, 0).real();
  }
  return mf;
}

std::vector<TransitionRecord> transition_catalog(const EigenSystem& eig, const SpinModel& model,
                                                 const ExcitationGeometry& geometry, const ThermalModel& thermal,
                                                 const CatalogOptions& options) {
  if (geometry.b1_directions.empty()) throw ConfigError("excitation geometry has no drive directions");
  if (!(options.f_min < options.f_max)) throw ConfigError("frequency window must satisfy f_min < f_max");
  if (!(options.relative_threshold >= 0.0)) throw ConfigError("intensity threshold must be nonnegative");

  const SpinOperators& ops = model.operators();
  const int d = eig.dimension();
  const std::vector<double> pops = populations(eig, effective_temperature(thermal));

  std::vector<Matrix> drive_eigenbasis;
  drive_eigenbasis.reserve(geometry.b1_directions.size());
  for (const Vec3& b1 : geometry.b1_directions)
    drive_eigenbasis.push_back(eig.states.adjoint() * drive_operator(model.system(), ops, b1) * eig.states);

  const std::vector<double> mf = mf_expectations(eig, ops);
  const double offset = std::fmod(ops.electron_spin() + ops.nuclear_spin(), 1.0);
  auto nearest_mf = [&](double x) { return std::round(x - offset) + offset; };
  auto well_defined = [&](double x) { return std::abs(x - nearest_mf(x)) <= options.mf_label_tolerance; };

  const double degenerate = model.options().degeneracy_tol;
  std::vector<TransitionRecord> out;
  for (int i = 0; i < d; ++i) {
    for (int f = i + 1; f < d; ++f) {
      const double freq = eig.energies[f] - eig.energies[i];
      if (freq <= degenerate || freq < options.f_min || freq > options.f_max) continue;
      double m2 = 0.0;
      for (const Matrix& op : drive_eigenbasis) {
        const double w = std::norm(op(f, i));
        m2 = options.aggregation == IntensityAggregation::Max ? std::max(m2, w) : m2 + w;
      }
      TransitionRecord r;
      r.initial_index = i;
      r.final_index = f;
      r.frequency = freq;
      r.matrix_element_sq = m2;
      r.chi = spin_polarisation(pops, i, f);
      r.intensity = r.chi * m2;
      if (well_defined(mf[i]) && well_defined(mf[f]))
        r.delta_mf = static_cast<int>(std::lround(nearest_mf(mf[f]) - nearest_mf(mf[i])));
      out.push_back(r);
    }
  }

  double strongest = 0.0;
  for (const auto& r : out) strongest = std::max(strongest, r.intensity);
  const double cut = options.relative_threshold * strongest;
  std::erase_if(out, [&](const TransitionRecord& r) { return r.intensity < cut; });
  std::stable_sort(out.begin(), out.end(),
                   [](const TransitionRecord& a, const TransitionRecord& b) { return a.frequency < b.frequency; });
  return out;
}

std::vector<FieldVector> field_line(const Vec3& direction, const std::vector<double>& coordinates) {
  const Vec3 u = direction.normalized();
  std::vector<FieldVector> out;
  out.reserve(coordinates.size());
  for (double s : coordinates) out.push_back(FieldVector::from_vec(s * u));
  return out;
}

std::vector<double> field_grid(double start, double stop, double step) {
  if (!(step > 0.0)) throw ConfigError("field step must be positive");
  if (!(start <= stop)) throw ConfigError("field start must not exceed field stop");
  std::vector<double> out;
  const auto n = static_cast<long>(std::floor((stop - start) / step + 0.5));
  for (long k = 0; k <= n; ++k) out.push_back(start + static_cast<double>(k) * step);
  return out;
}

std::vector<ScanPoint> field_scan(const SpinModel& model, const Vec3& direction, const std::vector<double>& coordinates,
                                  const ExcitationGeometry& geometry, const ThermalModel& thermal,
                                  const CatalogOptions& options, unsigned threads) {
  if (coordinates.empty()) throw ConfigError("field scan needs at least one point");
  if (!(direction.norm() > 0.0)) throw ConfigError("scan direction must be nonzero");
  const std::vector<FieldVector> fields = field_line(direction, coordinates);
  std::vector<ScanPoint> out(fields.size());
  std::vector<std::exception_ptr> errors(fields.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t k = next++; k < fields.size(); k = next++) {
      try {
        ScanPoint& p = out[k];
        p.coordinate = coordinates[k];
        p.field = fields[k];
        p.eig = model.solve(fields[k]);
        p.catalog = transition_catalog(p.eig, model, geometry, thermal, options);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(fields.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t k = 0; k < errors.size(); ++k) {
    if (!errors[k]) continue;
    std::ostringstream msg;
    msg << "field point " << coordinates[k] << " mT failed: ";
    try {
      std::rethrow_exception(errors[k]);
    } catch (const std::exception& e) {
      msg << e.what();
    }
    throw DataError(msg.str());
  }
  return out;
}

void write_catalog_csv(std::ostream& out, const std::vector<ScanPoint>& scan) {
  std::vector<const ScanPoint*> order;
  for (const auto& p : scan) order.push_back(&p);
  std::stable_sort(order.begin(), order.end(),
                   [](const ScanPoint* a, const ScanPoint* b) { return a->coordinate < b->coordinate; });
  out << "field_mT,freq_MHz,intensity,chi,i_index,f_index,delta_mF\n";
  char buf[256];
  for (const ScanPoint* p : order) {
    for (const auto& r : p->catalog) {
      const std::string dmf = r.delta_mf ? std::to_string(*r.delta_mf) : std::string("mixed");
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.9e,%.9e,%d,%d,", p->coordinate, r.frequency, r.intensity, r.chi,
                    r.initial_index, r.final_index);
      out << buf << dmf << '\n';
    }
  }
}

std::vector<double> polarisation_curve(const EigenSystem& eig, int initial_index, int final_index,
                                       const std::vector<double>& temperatures, std::optional<double> t_min) {
  std::vector<double> out;
  out.reserve(temperatures.size());
  for (double t : temperatures) {
    const double temp = t_min ? effective_temperature({t, *t_min}) : t;
    out.push_back(spin_polarisation(populations(eig, temp), initial_index, final_index));
  }
  const double peak = out.empty() ? 0.0 : *std::max_element(out.begin(), out.end());
  if (peak > 0.0)
    for (double& v : out) v /= peak;
  return out;
}

}  // namespace hfepr
