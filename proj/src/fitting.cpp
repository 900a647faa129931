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

#include "hfepr/fitting.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "hfepr/assignment.hpp"
#include "hfepr/constants.hpp"
#include "hfepr/least_squares.hpp"

namespace hfepr {

// ---------------------------------------------------------------------------
// Peak assignment
// ---------------------------------------------------------------------------

std::vector<SimulatedLine> merge_lines(const std::vector<TransitionRecord>& catalog, double tol) {
  std::vector<TransitionRecord> sorted = catalog;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.frequency < b.frequency; });
  std::vector<SimulatedLine> out;
  double sum_f = 0.0;
  int count = 0;
  for (const auto& r : sorted) {
    if (out.empty() || r.frequency - out.back().frequency > tol) {
      out.push_back({r.frequency, 0.0, {}});
      sum_f = 0.0;
      count = 0;
    }
    SimulatedLine& line = out.back();
    sum_f += r.frequency;
    ++count;
    line.frequency = sum_f / count;
    line.intensity += r.intensity;
    line.pairs.emplace_back(r.initial_index, r.final_index);
  }
  return out;
}

Assignment match_peaks(const std::vector<double>& measured, const std::vector<SimulatedLine>& simulated,
                       const MatchOptions& options) {
  if (measured.empty()) throw DataError("no measured peaks to assign");
  if (simulated.empty()) throw DataError("no simulated lines to assign");
  const int n = static_cast<int>(measured.size());
  const int m = static_cast<int>(simulated.size());
  const double gate2 = options.gate * options.gate;
  // Leaving a peak unassigned costs gate^2; pairs beyond the gate are effectively forbidden.
  const double forbidden = 10.0 * (n + 1) * (gate2 + 1.0);
  double strongest = 0.0;
  for (const auto& s : simulated) strongest = std::max(strongest, s.intensity);
  const double tie = 1e-9 * std::max(gate2, 1.0);

  Eigen::MatrixXd cost = Eigen::MatrixXd::Constant(n, m + n, forbidden);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double d = measured[i] - simulated[j].frequency;
      if (std::abs(d) <= options.gate) {
        const double weak = strongest > 0.0 ? 1.0 - simulated[j].intensity / strongest : 0.0;
        cost(i, j) = d * d + tie * weak;
      }
    }
    cost(i, m + i) = gate2;
  }

  std::vector<int> best = min_cost_assignment(cost);
  if (static_cast<std::size_t>(n) <= options.exhaustive_limit && static_cast<std::size_t>(m) <= options.exhaustive_limit) {
    const double bound = assignment_cost(cost, best);
    std::vector<int> exact = exhaustive_assignment(cost, bound * (1.0 + 1e-12) + 1e-12);
    if (!exact.empty()) best = std::move(exact);
  }

  Assignment out;
  out.simulated.resize(n);
  for (int i = 0; i < n; ++i) {
    const int j = best[i];
    if (j >= 0 && j < m && std::abs(measured[i] - simulated[j].frequency) <= options.gate) {
      out.simulated[i] = static_cast<std::size_t>(j);
      const double d = measured[i] - simulated[j].frequency;
      out.cost += d * d;
    }
  }
  return out;
}

Assignment match_peaks(const std::vector<double>& measured, const std::vector<TransitionRecord>& simulated,
                       const MatchOptions& options) {
  return match_peaks(measured, merge_lines(simulated), options);
}

// ---------------------------------------------------------------------------
// Hamiltonian parameter fit
// ---------------------------------------------------------------------------

std::string parameter_name(FitParameter p) {
  switch (p) {
    case FitParameter::APar: return "a_parallel";
    case FitParameter::APerp: return "a_perp";
    case FitParameter::QuadrupoleP: return "quadrupole_p";
    case FitParameter::GPar: return "g_parallel";
    case FitParameter::GPerp: return "g_perp";
    case FitParameter::MisalignmentDeg: return "misalignment_deg";
  }
  return "unknown";
}

std::string parameter_unit(FitParameter p) {
  switch (p) {
    case FitParameter::APar:
    case FitParameter::APerp:
    case FitParameter::QuadrupoleP: return "MHz";
    case FitParameter::MisalignmentDeg: return "deg";
    default: return "";
  }
}

FitParameter parameter_from_name(const std::string& name) {
  for (auto p : {FitParameter::APar, FitParameter::APerp, FitParameter::QuadrupoleP, FitParameter::GPar,
                 FitParameter::GPerp, FitParameter::MisalignmentDeg})
    if (parameter_name(p) == name) return p;
  throw ConfigError("unknown fit parameter '" + name + "'");
}

namespace {

double scale_of(FitParameter p) {
  switch (p) {
    case FitParameter::GPar:
    case FitParameter::GPerp: return 1e-3;
    case FitParameter::MisalignmentDeg: return 1e-2;
    default: return 1.0;
  }
}

struct Parameters {
  SpinSystem system;
  double misalignment = 0.0;
};

double& slot(Parameters& p, FitParameter which) {
  switch (which) {
    case FitParameter::APar: return p.system.a_parallel;
    case FitParameter::APerp: return p.system.a_perp;
    case FitParameter::QuadrupoleP: return p.system.quadrupole_p;
    case FitParameter::GPar: return p.system.g_parallel;
    case FitParameter::GPerp: return p.system.g_perp;
    case FitParameter::MisalignmentDeg: return p.misalignment;
  }
  return p.misalignment;
}

// Level pair standing in for each measured peak (empty when unassigned).
using PairMap = std::vector<std::optional<std::pair<int, int>>>;

class FitEvaluator {
 public:
  explicit FitEvaluator(const FitProblem& problem) : pb_(problem) {}

  Parameters unpack(const Eigen::VectorXd& x) const {
    Parameters p{pb_.baseline, pb_.misalignment_deg};
    for (std::size_t k = 0; k < pb_.free_parameters.size(); ++k) slot(p, pb_.free_parameters[k]) = x[k];
    return p;
  }

  Eigen::VectorXd pack(Parameters p) const {
    Eigen::VectorXd x(pb_.free_parameters.size());
    for (std::size_t k = 0; k < pb_.free_parameters.size(); ++k) x[k] = slot(p, pb_.free_parameters[k]);
    return x;
  }

  Vec3 direction(const FieldPoint& fp, double misalignment) const {
    return direction_from_angles(fp.theta_deg + misalignment, fp.phi_deg);
  }

  std::vector<EigenSystem> solve(const SpinModel& model, const Parameters& p) const {
    std::vector<EigenSystem> out;
    for (const auto& fp : pb_.fields)
      out.push_back(model.solve(FieldVector::from_vec(fp.magnitude_mt * direction(fp, p.misalignment))));
    return out;
  }

  struct Matching {
    PairMap pairs;
    std::vector<std::optional<double>> simulated;
  };

  Matching match(const Parameters& p) const { return match(p, pb_.match); }

  Matching match(const Parameters& p, const MatchOptions& options) const {
    const SpinModel model(p.system);
    const auto eigs = solve(model, p);
    Matching out;
    out.pairs.resize(pb_.peaks.size());
    out.simulated.resize(pb_.peaks.size());
    for (std::size_t fi = 0; fi < pb_.fields.size(); ++fi) {
      std::vector<std::size_t> idx;
      std::vector<double> freqs;
      for (std::size_t k = 0; k < pb_.peaks.size(); ++k) {
        if (pb_.peaks[k].field_index != fi) continue;
        idx.push_back(k);
        freqs.push_back(pb_.peaks[k].frequency);
      }
      if (idx.empty()) continue;
      const auto geometry = ExcitationGeometry::make(direction(pb_.fields[fi], p.misalignment), pb_.geometry);
      const auto catalog = transition_catalog(eigs[fi], model, geometry, pb_.thermal, pb_.catalog);
      const auto lines = merge_lines(catalog);
      if (lines.empty()) continue;
      const Assignment a = match_peaks(freqs, lines, options);
      for (std::size_t q = 0; q < idx.size(); ++q) {
        if (!a.simulated[q]) continue;
        const SimulatedLine& line = lines[*a.simulated[q]];
        out.pairs[idx[q]] = line.pairs.front();
        out.simulated[idx[q]] = line.frequency;
      }
    }
    return out;
  }

  Eigen::VectorXd residuals(const Eigen::VectorXd& x, const PairMap& pairs) const {
    const Parameters p = unpack(x);
    const SpinModel model(p.system);
    const auto eigs = solve(model, p);
    std::vector<double> r;
    for (std::size_t k = 0; k < pb_.peaks.size(); ++k) {
      if (!pairs[k]) continue;
      const auto& e = eigs[pb_.peaks[k].field_index].energies;
      const double f = e[pairs[k]->second] - e[pairs[k]->first];
      r.push_back(std::sqrt(pb_.peaks[k].weight) * (f - pb_.peaks[k].frequency));
    }
    return Eigen::Map<Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
  }

  double cost_with_rematch(const Eigen::VectorXd& x) const {
    const Matching m = match(unpack(x));
    const Eigen::VectorXd r = residuals(x, m.pairs);
    // Unassigned peaks carry the gate penalty so solutions that lose peaks never look better.
    double unassigned = 0.0;
    for (std::size_t k = 0; k < pb_.peaks.size(); ++k)
      if (!m.pairs[k]) unassigned += pb_.peaks[k].weight * pb_.match.gate * pb_.match.gate;
    return r.squaredNorm() + unassigned;
  }

  Eigen::VectorXd steps(const Eigen::VectorXd& x) const {
    Eigen::VectorXd h(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k)
      h[k] = 1e-6 * std::max(std::abs(x[k]), scale_of(pb_.free_parameters[k]));
    return h;
  }

 private:
  const FitProblem& pb_;
};

void check_problem(const FitProblem& pb) {
  if (pb.peaks.empty()) throw DataError("no peaks to fit");
  if (pb.free_parameters.empty()) throw ConfigError("no free parameters selected");
  std::set<FitParameter> unique(pb.free_parameters.begin(), pb.free_parameters.end());
  if (unique.size() != pb.free_parameters.size()) throw ConfigError("free parameters must be distinct");
  if (pb.fields.empty()) throw ConfigError("fit needs at least one field point");
  for (const auto& p : pb.peaks) {
    if (!(p.weight > 0.0)) throw DataError("peak weights must be positive");
    if (p.field_index >= pb.fields.size()) throw DataError("peak refers to a missing field point");
  }
  pb.baseline.validate();
}

void check_rank(const Eigen::MatrixXd& jac, const std::vector<FitParameter>& names) {
  const Eigen::Index p = static_cast<Eigen::Index>(names.size());
  Eigen::MatrixXd scaled = jac;
  for (Eigen::Index k = 0; k < p; ++k) scaled.col(k) *= scale_of(names[k]);
  std::vector<double> null_direction(p, 0.0);
  bool deficient = jac.rows() < p;
  if (jac.rows() > 0) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double smax = sv.size() > 0 ? sv[0] : 0.0;
    const double smin = sv.size() == p ? sv[p - 1] : 0.0;
    deficient = deficient || !(smax > 0.0) || smin < 1e-10 * smax;
    for (Eigen::Index k = 0; k < p; ++k) null_direction[k] = svd.matrixV()(k, p - 1);
  } else {
    deficient = true;
    null_direction[0] = 1.0;
  }
  if (!deficient) return;
  std::ostringstream msg;
  msg << "rank-deficient Jacobian (" << jac.rows() << " assigned peaks, " << p << " free parameters); null direction:";
  for (Eigen::Index k = 0; k < p; ++k)
    msg << ' ' << (null_direction[k] >= 0 ? "+" : "") << null_direction[k] << "*" << parameter_name(names[k]);
  throw RankDeficiencyError(msg.str(), null_direction);
}

bool same_pairs(const PairMap& a, const PairMap& b) { return a == b; }

constexpr double kWideGate = 1e4;  // MHz, wider than any zero-field spectrum

}  // namespace

FitResult fit_parameters(const FitProblem& problem) {
  check_problem(problem);
  const FitEvaluator ev(problem);
  Eigen::VectorXd x = ev.pack({problem.baseline, problem.misalignment_deg});
  std::vector<double> history;
  int iterations = 0;
  bool converged = false;

  // Coarse-to-fine gate: distant starting points first see every peak assigned,
  // then the gate tightens to the configured value before convergence is declared.
  auto gate_for = [&](int outer) {
    MatchOptions m = problem.match;
    m.gate = std::max(problem.match.gate, kWideGate / std::pow(4.0, outer));
    return m;
  };
  PairMap pairs = ev.match(ev.unpack(x), gate_for(0)).pairs;
  LeastSquaresResult lsq;
  for (int outer = 0; outer < 20; ++outer) {
    const ResidualFn residuals = [&](const Eigen::VectorXd& v) { return ev.residuals(v, pairs); };
    const JacobianFn jacobian = [&](const Eigen::VectorXd& v) {
      return finite_difference_jacobian(residuals, v, ev.steps(v));
    };
    if (outer == 0) check_rank(jacobian(x), problem.free_parameters);

    LeastSquaresOptions opts;
    opts.max_iterations = std::max(1, problem.max_iterations - iterations);
    opts.step_tol = problem.step_tol;
    opts.cost_tol = problem.cost_tol;
    lsq = levenberg_marquardt(residuals, jacobian, x, opts);
    iterations += lsq.iterations;
    history.insert(history.end(), lsq.cost_history.begin() + (history.empty() ? 0 : 1), lsq.cost_history.end());
    x = lsq.params;
    if (!lsq.converged) break;

    const MatchOptions next = gate_for(outer + 1);
    PairMap refreshed = ev.match(ev.unpack(x), next).pairs;
    if (next.gate == problem.match.gate && same_pairs(refreshed, pairs)) {
      converged = true;
      break;
    }
    pairs = std::move(refreshed);
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "parameter fit did not converge after " << iterations << " iterations; last iterate:";
    for (std::size_t k = 0; k < problem.free_parameters.size(); ++k)
      msg << ' ' << parameter_name(problem.free_parameters[k]) << '=' << x[k];
    throw ConvergenceError(msg.str());
  }

  FitResult out;
  out.parameters = problem.free_parameters;
  out.iterations = iterations;
  out.converged = true;
  out.cost_history = history;

  // Joint sign flip of the hyperfine and quadrupole constants.
  Parameters best = ev.unpack(x);
  Parameters flipped = best;
  flipped.system.a_parallel = -best.system.a_parallel;
  flipped.system.a_perp = -best.system.a_perp;
  flipped.system.quadrupole_p = -best.system.quadrupole_p;
  const double cost = ev.cost_with_rematch(x);
  const Eigen::VectorXd x_flip = ev.pack(flipped);
  const double cost_flip = ev.cost_with_rematch(x_flip);
  const double scale = std::max({cost, cost_flip, 1e-12});
  out.sign_ambiguous = std::abs(cost_flip - cost) <= 1e-6 * scale;
  if (out.sign_ambiguous && problem.pin_sign_by_symmetry_rule) {
    const double lead = best.system.a_parallel != 0.0 ? best.system.a_parallel / best.system.g_parallel
                                                       : best.system.a_perp / best.system.g_perp;
    if (lead * (kErbiumAJMhz / kErbiumGJ) < 0.0) {
      x = x_flip;
      best = flipped;
      out.sign_flipped = true;
      pairs = ev.match(best).pairs;
    }
  }

  const Eigen::VectorXd r = ev.residuals(x, pairs);
  const Eigen::MatrixXd jac = finite_difference_jacobian([&](const Eigen::VectorXd& v) { return ev.residuals(v, pairs); },
                                                         x, ev.steps(x));
  const Eigen::Index n = r.size();
  const Eigen::Index p = x.size();
  const double s2 = r.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(n - p, 1));
  const Eigen::MatrixXd jtj = jac.transpose() * jac;
  const Eigen::MatrixXd cov = s2 * jtj.completeOrthogonalDecomposition().pseudoInverse();

  out.system = best.system;
  out.misalignment_deg = best.misalignment;
  out.chi2 = r.squaredNorm();
  for (Eigen::Index k = 0; k < p; ++k) {
    out.values.push_back(x[k]);
    out.sigmas.push_back(std::sqrt(std::max(cov(k, k), 0.0)));
  }

  double sum2 = 0.0;
  int assigned = 0;
  std::vector<double> abs_res;
  for (std::size_t k = 0; k < problem.peaks.size(); ++k) {
    AssignedPeak a;
    a.measured = problem.peaks[k].frequency;
    a.weight = problem.peaks[k].weight;
    a.field_index = problem.peaks[k].field_index;
    if (pairs[k]) a.pairs.push_back(*pairs[k]);
    out.peaks.push_back(a);
  }
  {
    const SpinModel model(best.system);
    const auto eigs = ev.solve(model, best);
    for (std::size_t k = 0; k < problem.peaks.size(); ++k) {
      auto& a = out.peaks[k];
      if (!pairs[k]) {
        a.flagged = true;
        continue;
      }
      const auto& e = eigs[a.field_index].energies;
      a.simulated = e[pairs[k]->second] - e[pairs[k]->first];
      a.residual = *a.simulated - a.measured;
      sum2 += *a.residual * *a.residual;
      abs_res.push_back(std::abs(*a.residual));
      ++assigned;
    }
  }
  out.residual_rms = assigned > 0 ? std::sqrt(sum2 / assigned) : 0.0;
  // Outliers: residuals well above the typical size and above 1 MHz.
  if (!abs_res.empty()) {
    std::vector<double> sorted = abs_res;
    std::sort(sorted.begin(), sorted.end());
    const double typical = sorted[sorted.size() / 2];
    for (auto& a : out.peaks)
      if (a.residual && std::abs(*a.residual) > std::max(3.0 * typical, 1.0)) a.flagged = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Consistency rules and calibrations
// ---------------------------------------------------------------------------

SymmetryReport validate_symmetry_rules(const SpinSystem& s) {
  SymmetryReport r;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.ratio = (s.g_perp * s.a_parallel) != 0.0 ? s.g_parallel * s.a_perp / (s.g_perp * s.a_parallel) : nan;
  r.a_par_over_g_par = s.g_parallel != 0.0 ? s.a_parallel / s.g_parallel : nan;
  r.a_perp_over_g_perp = s.g_perp != 0.0 ? s.a_perp / s.g_perp : nan;
  r.aj_over_gj = kErbiumAJMhz / kErbiumGJ;
  r.deviation_par = r.a_par_over_g_par - r.aj_over_gj;
  r.deviation_perp = r.a_perp_over_g_perp - r.aj_over_gj;
  return r;
}

double calibrate_field(double dpph_center_mhz) {
  if (!(dpph_center_mhz >= 0.0) || !std::isfinite(dpph_center_mhz))
    throw DataError("DPPH line center must be a nonnegative frequency");
  return dpph_center_mhz / (kDpphG * kBohrMhzPerMt);
}

double calibrate_field(const PeakFit& dpph_line) { return calibrate_field(dpph_line.center); }

double dpph_frequency(double field_mt) { return field_mt * kDpphG * kBohrMhzPerMt; }

double effective_g(double g_parallel, double g_perp, double theta_deg) {
  const double c = std::cos(deg_to_rad(theta_deg));
  const double s = std::sin(deg_to_rad(theta_deg));
  return std::sqrt(g_parallel * g_parallel * c * c + g_perp * g_perp * s * s);
}

MisalignmentResult extract_misalignment(const std::vector<std::pair<double, double>>& lines, NominalAxis axis,
                                        double g_parallel, double g_perp) {
  if (lines.size() < 2) throw DataError("misalignment extraction needs at least two field points");
  double sbf = 0.0, sbb = 0.0;
  for (const auto& [b, f] : lines) {
    sbf += b * f;
    sbb += b * b;
  }
  if (!(sbb > 0.0)) throw DataError("misalignment extraction needs nonzero fields");
  MisalignmentResult out;
  out.slope = sbf / sbb;
  out.g_eff = out.slope / kBohrMhzPerMt;
  const double lo = std::min(g_parallel, g_perp);
  const double hi = std::max(g_parallel, g_perp);
  const double slack = 1e-9 * hi;
  if (out.g_eff < lo - slack || out.g_eff > hi + slack || g_parallel == g_perp) {
    std::ostringstream msg;
    msg << "I=0 branch slope " << out.slope << " MHz/mT (g_eff=" << out.g_eff << ") is outside the range ["
        << lo * kBohrMhzPerMt << ", " << hi * kBohrMhzPerMt << "] MHz/mT";
    throw DataError(msg.str());
  }
  const double g2 = out.g_eff * out.g_eff;
  const double cos2 = std::clamp((g_perp * g_perp - g2) / (g_perp * g_perp - g_parallel * g_parallel), 0.0, 1.0);
  const double theta = rad_to_deg(std::acos(std::sqrt(cos2)));
  out.angle_deg = axis == NominalAxis::ParallelC ? theta : 90.0 - theta;
  return out;
}

}  // namespace hfepr
