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

#include "hfepr/zefoz.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "hfepr/assignment.hpp"
#include "hfepr/errors.hpp"

namespace hfepr {

double TransitionBranch::max_intensity() const {
  double m = 0.0;
  for (const auto& s : samples) m = std::max(m, s.intensity);
  return m;
}

std::vector<TransitionBranch> track_branches(const std::vector<ScanPoint>& scan, const TrackOptions& options) {
  if (scan.empty()) throw DataError("cannot track branches on an empty scan");
  for (std::size_t k = 1; k < scan.size(); ++k)
    if (!(scan[k].coordinate > scan[k - 1].coordinate)) throw DataError("scan fields must be strictly increasing");

  struct Active {
    std::size_t branch;
    int i;
    int f;
  };
  std::vector<TransitionBranch> branches;
  std::vector<Active> active;

  auto intensities = [](const ScanPoint& p) {
    std::map<std::pair<int, int>, double> m;
    for (const auto& r : p.catalog) m[{r.initial_index, r.final_index}] = r.intensity;
    return m;
  };
  auto sample = [](const ScanPoint& p, int i, int f, double intensity) {
    BranchSample s;
    s.field_mt = p.coordinate;
    s.frequency = p.eig.energies[f] - p.eig.energies[i];
    s.intensity = intensity;
    s.initial_index = i;
    s.final_index = f;
    s.initial_state = p.eig.states.col(i);
    s.final_state = p.eig.states.col(f);
    return s;
  };
  auto seed = [&](const ScanPoint& p, const std::map<std::pair<int, int>, double>& lookup,
                  const std::map<std::pair<int, int>, bool>& taken) {
    for (const auto& r : p.catalog) {
      if (taken.count({r.initial_index, r.final_index})) continue;
      TransitionBranch b;
      b.id = static_cast<int>(branches.size());
      b.samples.push_back(sample(p, r.initial_index, r.final_index, lookup.at({r.initial_index, r.final_index})));
      branches.push_back(std::move(b));
      active.push_back({branches.size() - 1, r.initial_index, r.final_index});
    }
  };

  seed(scan.front(), intensities(scan.front()), {});
  for (std::size_t k = 1; k < scan.size(); ++k) {
    const ScanPoint& prev = scan[k - 1];
    const ScanPoint& cur = scan[k];
    const Eigen::MatrixXd overlap = (prev.eig.states.adjoint() * cur.eig.states).cwiseAbs();
    const std::vector<int> perm = min_cost_assignment(-overlap);
    const auto lookup = intensities(cur);

    std::vector<Active> next;
    std::map<std::pair<int, int>, bool> taken;
    for (const Active& a : active) {
      const int ni = perm[a.i];
      const int nf = perm[a.f];
      const double oi = overlap(a.i, ni);
      const double of = overlap(a.f, nf);
      if (oi < options.overlap_threshold || of < options.overlap_threshold) {
        std::ostringstream msg;
        msg << "eigenvector overlap " << std::min(oi, of) << " below " << options.overlap_threshold << " between "
            << prev.coordinate << " and " << cur.coordinate << " mT";
        branches[a.branch].diagnostic = msg.str();
        continue;
      }
      auto it = lookup.find({ni, nf});
      branches[a.branch].samples.push_back(sample(cur, ni, nf, it == lookup.end() ? 0.0 : it->second));
      next.push_back({a.branch, ni, nf});
      taken[{ni, nf}] = true;
    }
    active = std::move(next);
    seed(cur, lookup, taken);
  }
  return branches;
}

TransitionBranch branch_from_samples(const std::vector<std::pair<double, double>>& samples, int id) {
  TransitionBranch b;
  b.id = id;
  for (const auto& [field, freq] : samples) {
    BranchSample s;
    s.field_mt = field;
    s.frequency = freq;
    b.samples.push_back(s);
  }
  std::sort(b.samples.begin(), b.samples.end(),
            [](const BranchSample& x, const BranchSample& y) { return x.field_mt < y.field_mt; });
  for (std::size_t k = 1; k < b.samples.size(); ++k)
    if (!(b.samples[k].field_mt > b.samples[k - 1].field_mt))
      throw DataError("branch fields must be strictly increasing");
  return b;
}

namespace {

// Nonuniform central differences at interior sample j.
Sensitivity central_difference(const std::vector<BranchSample>& s, std::size_t j) {
  const double h1 = s[j].field_mt - s[j - 1].field_mt;
  const double h2 = s[j + 1].field_mt - s[j].field_mt;
  const double d1 = (s[j].frequency - s[j - 1].frequency) / h1;
  const double d2 = (s[j + 1].frequency - s[j].frequency) / h2;
  Sensitivity out;
  out.s1 = (h2 * d1 + h1 * d2) / (h1 + h2);
  out.s2 = 2.0 * (d2 - d1) / (h1 + h2);
  return out;
}

bool nonnegative(double v) { return v >= 0.0; }

}  // namespace

Sensitivity sensitivity(const TransitionBranch& branch, double field_mt) {
  const auto& s = branch.samples;
  const std::size_t n = s.size();
  if (n < 3) throw DataError("sensitivity needs a branch with at least three samples");
  if (field_mt < s[1].field_mt || field_mt > s[n - 2].field_mt) {
    std::ostringstream msg;
    msg << "field " << field_mt << " mT is within one step of the branch ends [" << s.front().field_mt << ", "
        << s.back().field_mt << "] mT";
    throw DataError(msg.str());
  }
  std::size_t j = 1;
  while (j + 1 < n - 1 && s[j + 1].field_mt <= field_mt) ++j;
  const Sensitivity a = central_difference(s, j);
  if (field_mt == s[j].field_mt || j + 1 >= n - 1) return a;
  const Sensitivity b = central_difference(s, j + 1);
  const double t = (field_mt - s[j].field_mt) / (s[j + 1].field_mt - s[j].field_mt);
  return {a.s1 + t * (b.s1 - a.s1), a.s2 + t * (b.s2 - a.s2)};
}

BranchEvaluator::BranchEvaluator(const SpinModel& model, const Vec3& direction)
    : model_(model), direction_(direction.normalized()) {
  dh_ = zeeman_derivative(model.system(), model.operators(), direction_);
}

BranchEvaluator::Levels BranchEvaluator::evaluate(double coordinate, const Vector& initial_ref,
                                                  const Vector& final_ref) const {
  const EigenSystem eig = model_.solve(FieldVector::from_vec(coordinate * direction_));
  const int d = eig.dimension();
  const double tol = model_.options().degeneracy_tol;

  // Resolve a level against its reference, diagonalizing dH/dB inside a degenerate block.
  auto pick = [&](const Vector& ref, int exclude, Vector& state, double& slope) {
    const Eigen::VectorXd ov = (eig.states.adjoint() * ref).cwiseAbs();
    int best = -1;
    for (int k = 0; k < d; ++k)
      if (k != exclude && (best < 0 || ov[k] > ov[best])) best = k;
    int lo = best, hi = best;
    while (lo > 0 && eig.energies[best] - eig.energies[lo - 1] < tol) --lo;
    while (hi + 1 < d && eig.energies[hi + 1] - eig.energies[best] < tol) ++hi;
    const Matrix block = eig.states.middleCols(lo, hi - lo + 1);
    const Matrix projected = block.adjoint() * dh_ * block;
    Eigen::SelfAdjointEigenSolver<Matrix> inner((projected + projected.adjoint()) * 0.5);
    const Matrix rotated = block * inner.eigenvectors();
    Eigen::Index w = 0;
    (rotated.adjoint() * ref).cwiseAbs().maxCoeff(&w);
    state = rotated.col(w);
    slope = inner.eigenvalues()[w];
    return best;
  };

  Levels out;
  out.initial_index = pick(initial_ref, -1, out.initial_state, out.slope_initial);
  out.final_index = pick(final_ref, out.initial_index, out.final_state, out.slope_final);
  out.frequency = eig.energies[out.final_index] - eig.energies[out.initial_index];
  out.s1_hellmann_feynman = out.slope_final - out.slope_initial;
  out.min_gap = std::numeric_limits<double>::infinity();
  for (int level : {out.initial_index, out.final_index})
    for (int k = 0; k < d; ++k)
      if (k != level) out.min_gap = std::min(out.min_gap, std::abs(eig.energies[k] - eig.energies[level]));
  return out;
}

double BranchEvaluator::frequency(double coordinate, const Vector& initial_ref, const Vector& final_ref) const {
  return evaluate(coordinate, initial_ref, final_ref).frequency;
}

HellmannFeynmanCheck cross_check_sensitivity(const TransitionBranch& branch, std::size_t sample_index,
                                             const BranchEvaluator& evaluator) {
  const auto& s = branch.samples;
  if (sample_index == 0 || sample_index + 1 >= s.size())
    throw DataError("Hellmann-Feynman cross-check needs an interior sample");
  const BranchSample& smp = s[sample_index];
  if (smp.initial_state.size() == 0) throw DataError("branch carries no eigenvectors to cross-check");
  HellmannFeynmanCheck out;
  out.s1_fd = central_difference(s, sample_index).s1;
  const auto levels = evaluator.evaluate(smp.field_mt, smp.initial_state, smp.final_state);
  out.s1_hf = levels.s1_hellmann_feynman;
  const double step = 0.5 * (s[sample_index + 1].field_mt - s[sample_index - 1].field_mt);
  const double motion = std::max(std::abs(levels.slope_initial), std::abs(levels.slope_final)) * step;
  out.near_degenerate = levels.min_gap < 10.0 * motion;
  return out;
}

int count_slope_sign_changes(const TransitionBranch& branch) {
  const auto& s = branch.samples;
  if (s.size() < 4) return 0;
  int changes = 0;
  bool prev = nonnegative(central_difference(s, 1).s1);
  for (std::size_t j = 2; j + 1 < s.size(); ++j) {
    const bool cur = nonnegative(central_difference(s, j).s1);
    if (cur != prev) ++changes;
    prev = cur;
  }
  return changes;
}

std::vector<ZefozReport> find_zefoz(const TransitionBranch& branch, double tolerance,
                                    const BranchEvaluator* evaluator) {
  const auto& s = branch.samples;
  const std::size_t n = s.size();
  std::vector<ZefozReport> out;
  if (n < 5) return out;

  std::vector<double> s1(n, 0.0);
  for (std::size_t j = 1; j + 1 < n; ++j) s1[j] = central_difference(s, j).s1;
  const bool exact = evaluator != nullptr && s.front().initial_state.size() > 0;

  for (std::size_t j = 1; j + 2 < n; ++j) {
    if (nonnegative(s1[j]) == nonnegative(s1[j + 1])) continue;
    ZefozReport r;
    r.branch_id = branch.id;
    r.f0 = branch.f0();
    r.s1_start = s1[1];
    r.s1_end = s1[n - 2];

    const std::size_t m = std::abs(s1[j]) <= std::abs(s1[j + 1]) ? j : j + 1;
    bool refined = false;
    if (exact) {
      const Vector& ri = s[m].initial_state;
      const Vector& rf = s[m].final_state;
      const double delta = 1e-3;
      auto slope = [&](double b) {
        return (evaluator->frequency(b + delta, ri, rf) - evaluator->frequency(b - delta, ri, rf)) / (2.0 * delta);
      };
      double lo = s[j].field_mt, hi = s[j + 1].field_mt;
      double g_lo = slope(lo), g_hi = slope(hi);
      if (nonnegative(g_lo) == nonnegative(g_hi)) {
        lo = s[j - 1].field_mt;
        hi = s[j + 2].field_mt;
        g_lo = slope(lo);
        g_hi = slope(hi);
      }
      if (nonnegative(g_lo) != nonnegative(g_hi)) {
        double mid = 0.5 * (lo + hi);
        double g_mid = slope(mid);
        for (int it = 0; it < 200 && std::abs(g_mid) >= tolerance && hi - lo > 1e-12; ++it) {
          if (nonnegative(g_mid) == nonnegative(g_lo)) {
            lo = mid;
            g_lo = g_mid;
          } else {
            hi = mid;
          }
          mid = 0.5 * (lo + hi);
          g_mid = slope(mid);
        }
        const double h = 0.01;
        const double fm = evaluator->frequency(mid - h, ri, rf);
        const double f0 = evaluator->frequency(mid, ri, rf);
        const double fp = evaluator->frequency(mid + h, ri, rf);
        r.b_star = mid;
        r.f_star = f0;
        r.s2 = (fp - 2.0 * f0 + fm) / (h * h);
        r.s1_residual = std::abs(g_mid);
        refined = true;
      }
    }
    if (!refined) {
      // Vertex of the parabola through the three samples around the turning point.
      const double x0 = s[m - 1].field_mt, x1 = s[m].field_mt, x2 = s[m + 1].field_mt;
      const double y0 = s[m - 1].frequency, y1 = s[m].frequency, y2 = s[m + 1].frequency;
      const double denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
      const double a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
      const double b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
      const double c = y0 - a * x0 * x0 - b * x0;
      if (a == 0.0) continue;
      r.b_star = -b / (2.0 * a);
      r.f_star = a * r.b_star * r.b_star + b * r.b_star + c;
      r.s2 = 2.0 * a;
      r.s1_residual = 0.0;
    }
    out.push_back(r);
  }
  return out;
}

LinewidthReport linewidth_vs_field(const std::vector<std::pair<double, PeakFit>>& fits,
                                   std::optional<ZefozReport> zefoz) {
  LinewidthReport out;
  for (const auto& [b, fit] : fits)
    if (std::isfinite(fit.fwhm) && fit.fwhm > 0.0 && std::isfinite(b)) out.table.emplace_back(b, fit.fwhm);
  if (out.table.size() < 3) throw DataError("linewidth analysis needs at least three valid fits");
  std::sort(out.table.begin(), out.table.end());

  double lo = out.table.front().second, hi = lo;
  for (const auto& [b, g] : out.table) {
    lo = std::min(lo, g);
    hi = std::max(hi, g);
  }
  if (hi - lo <= 1e-12 * hi) {
    out.flat = true;
    return out;
  }

  std::vector<std::pair<double, double>> by_width = out.table;
  std::stable_sort(by_width.begin(), by_width.end(),
                   [](const auto& x, const auto& y) { return x.second < y.second; });
  const auto [x0, y0] = by_width[0];
  const auto [x1, y1] = by_width[1];
  const auto [x2, y2] = by_width[2];
  const double denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
  out.b_min = x0;
  out.gamma_min = y0;
  if (denom != 0.0) {
    const double a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
    const double b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
    const double c = y0 - a * x0 * x0 - b * x0;
    if (a > 0.0) {
      out.b_min = -b / (2.0 * a);
      out.gamma_min = c - b * b / (4.0 * a);
    }
  }
  if (zefoz) out.zefoz_offset = std::abs(*out.b_min - zefoz->b_star);
  return out;
}

std::vector<DirectionSearch> zefoz_direction_batch(const SpinModel& model,
                                                   const std::vector<std::pair<double, double>>& angles_deg,
                                                   const std::vector<double>& coordinates, GeometryKind geometry,
                                                   const ThermalModel& thermal, const CatalogOptions& catalog,
                                                   double tolerance, unsigned threads) {
  std::vector<DirectionSearch> out;
  for (const auto& [theta, phi] : angles_deg) {
    DirectionSearch d;
    d.theta_deg = theta;
    d.phi_deg = phi;
    const Vec3 dir = direction_from_angles(theta, phi);
    const auto geo = ExcitationGeometry::make(dir, geometry);
    const auto scan = field_scan(model, dir, coordinates, geo, thermal, catalog, threads);
    d.branches = track_branches(scan);
    const BranchEvaluator evaluator(model, dir);
    for (const auto& b : d.branches)
      for (const auto& r : find_zefoz(b, tolerance, &evaluator)) d.reports.push_back(r);
    out.push_back(std::move(d));
  }
  return out;
}

std::optional<std::size_t> select_branch(const std::vector<TransitionBranch>& branches, double f0, double tol) {
  std::optional<std::size_t> with_turn, closest;
  for (std::size_t k = 0; k < branches.size(); ++k) {
    const double dist = std::abs(branches[k].f0() - f0);
    if (dist > tol) continue;
    if (!closest || dist < std::abs(branches[*closest].f0() - f0)) closest = k;
    if (count_slope_sign_changes(branches[k]) > 0 &&
        (!with_turn || dist < std::abs(branches[*with_turn].f0() - f0)))
      with_turn = k;
  }
  return with_turn ? with_turn : closest;
}

void write_zefoz_csv(std::ostream& out, const std::vector<ZefozReport>& reports) {
  out << "branch_id,f0_MHz,B_star_mT,f_star_MHz,S2_MHz_per_mT2,S1_residual\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.9e,%.3e\n", r.branch_id, r.f0, r.b_star, r.f_star, r.s2,
                  r.s1_residual);
    out << buf;
  }
}

void write_branch_csv(std::ostream& out, const TransitionBranch& branch,
                      const std::vector<std::pair<double, double>>& fwhm) {
  out << "field_mT,f_center_MHz,fwhm_MHz\n";
  char buf[128];
  for (const auto& s : branch.samples) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,", s.field_mt, s.frequency);
    out << buf;
    for (const auto& [b, g] : fwhm) {
      if (std::abs(b - s.field_mt) < 1e-9) {
        std::snprintf(buf, sizeof buf, "%.6f", g);
        out << buf;
        break;
      }
    }
    out << '\n';
  }
}

}  // namespace hfepr
