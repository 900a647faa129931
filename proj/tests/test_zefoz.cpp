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

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hfepr/constants.hpp"
#include "hfepr/errors.hpp"
#include "hfepr/presets.hpp"
#include "hfepr/zefoz.hpp"

using namespace hfepr;

namespace {

std::vector<ScanPoint> scan_of(const SpinSystem& s, double theta, double lo, double hi, double step) {
  const SpinModel m(s);
  const Vec3 dir = direction_from_angles(theta, 0);
  CatalogOptions o;
  o.f_min = 1.0;
  return field_scan(m, dir, field_grid(lo, hi, step), ExcitationGeometry::make(dir, GeometryKind::VoigtLike),
                    {0.0, 0.02}, o, 4);
}

std::optional<TransitionBranch> branch_near(const std::vector<TransitionBranch>& bs, double f0) {
  const auto k = select_branch(bs, f0, 5.0);
  if (!k) return std::nullopt;
  return bs[*k];
}

}  // namespace

TEST_CASE("I = 0: one linear branch with the Zeeman slope") {
  const auto scan = scan_of(preset("er_i0"), 0.0, 1.0, 20.0, 0.5);
  const auto branches = track_branches(scan);
  REQUIRE(branches.size() == 1);
  const auto& b = branches[0];
  CHECK(b.samples.size() == scan.size());
  for (double field : {2.0, 10.0, 19.0}) {
    const auto s = sensitivity(b, field);
    CHECK(s.s1 == doctest::Approx(3.137 * kBohrMhzPerMt).epsilon(1e-9));
    CHECK(std::abs(s.s2) < 1e-6);
  }
  CHECK(find_zefoz(b).empty());
  CHECK(count_slope_sign_changes(b) == 0);
}

TEST_CASE("crossing levels from independent blocks keep their identity") {
  // Block A: E = -B, +B (f = 2B). Block B: E = 1.05 + 0.3B, 1.55 + 0.3B (f = 0.5).
  std::vector<ScanPoint> scan;
  for (int k = 0; k < 40; ++k) {
    const double b = 0.05 + 0.1 * k;
    Matrix h = Matrix::Zero(4, 4);
    h(0, 0) = -b;
    h(1, 1) = b;
    h(2, 2) = 1.05 + 0.3 * b;
    h(3, 3) = 1.55 + 0.3 * b;
    ScanPoint p;
    p.coordinate = b;
    p.eig = eigensystem(h, {0, 0, b});
    auto index_of = [&](int basis) {
      Eigen::Index at = 0;
      p.eig.states.row(basis).cwiseAbs().maxCoeff(&at);
      return static_cast<int>(at);
    };
    if (k == 0) {
      TransitionRecord a, c;
      a.initial_index = index_of(0);
      a.final_index = index_of(1);
      c.initial_index = index_of(2);
      c.final_index = index_of(3);
      a.intensity = c.intensity = 1.0;
      p.catalog = {a, c};
    }
    scan.push_back(p);
  }
  const auto branches = track_branches(scan);
  REQUIRE(branches.size() == 2);
  for (const auto& br : branches) {
    CHECK(br.samples.size() == scan.size());
    CHECK(br.diagnostic.empty());
  }
  for (const auto& s : branches[0].samples) CHECK(s.frequency == doctest::Approx(2 * s.field_mt));
  for (const auto& s : branches[1].samples) CHECK(s.frequency == doctest::Approx(0.5));
}

TEST_CASE("low overlap splits a branch with a diagnostic") {
  std::vector<ScanPoint> scan;
  for (int k = 0; k < 3; ++k) {
    Matrix h = Matrix::Zero(2, 2);
    if (k < 2) {
      h(0, 0) = -1;
      h(1, 1) = 1;
    } else {
      h(0, 1) = h(1, 0) = 1;  // rotated by 45 degrees: overlap 0.707 ... below with a sharper turn
      h(0, 0) = 0.5;
      h(1, 1) = -0.5;
    }
    ScanPoint p;
    p.coordinate = k;
    p.eig = eigensystem(h, {});
    TransitionRecord r;
    r.initial_index = 0;
    r.final_index = 1;
    r.intensity = 1;
    p.catalog = {r};
    scan.push_back(p);
  }
  const auto branches = track_branches(scan, {0.95});
  REQUIRE(branches.size() == 2);
  CHECK(!branches[0].diagnostic.empty());
  CHECK(branches[0].samples.size() == 2);
}

TEST_CASE("synthetic parabola: single turning point with the analytic curvature") {
  std::vector<std::pair<double, double>> samples;
  for (int k = 0; k <= 300; ++k) {
    const double b = 0.1 * k;
    samples.emplace_back(b, 2400.0 + 0.3 * (b - 20.0) * (b - 20.0));
  }
  const auto br = branch_from_samples(samples, 7);
  const auto reports = find_zefoz(br);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].branch_id == 7);
  CHECK(reports[0].b_star == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(reports[0].f_star == doctest::Approx(2400.0).epsilon(1e-12));
  CHECK(reports[0].s2 == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(count_slope_sign_changes(br) == 1);
  CHECK(sensitivity(br, 25.0).s1 == doctest::Approx(3.0).epsilon(1e-9));
  CHECK_THROWS_AS(sensitivity(br, 0.0), DataError);
  CHECK_THROWS_AS(sensitivity(br, 30.0), DataError);
  CHECK_THROWS_AS(branch_from_samples({{1.0, 2.0}, {1.0, 3.0}}, 0), DataError);
}

TEST_CASE("short and linear branches have no turning points") {
  CHECK(find_zefoz(branch_from_samples({{0, 1}, {1, 0}, {2, 1}, {3, 2}}, 0)).empty());
  std::vector<std::pair<double, double>> line;
  for (int k = 0; k < 20; ++k) line.emplace_back(k, 3.0 * k + 1);
  CHECK(find_zefoz(branch_from_samples(line, 0)).empty());
}

TEST_CASE("2414 MHz branch along c is tracked through 30 mT without splits") {
  const auto branches = track_branches(scan_of(preset("this_work"), 0.0, 0.0, 30.0, 0.1));
  int found = 0;
  for (const auto& b : branches) {
    if (std::abs(b.f0() - 2414.0) > 1.0) continue;
    ++found;
    CHECK(b.diagnostic.empty());
    CHECK(b.samples.back().field_mt == doctest::Approx(30.0));
  }
  CHECK(found == 2);
}

TEST_CASE("ZEFOZ point of the 2414 MHz branch at 3.3 degrees") {
  const SpinModel model(preset("this_work"));
  const Vec3 dir = direction_from_angles(3.3, 0);
  const auto branches = track_branches(scan_of(preset("this_work"), 3.3, 0.0, 30.0, 0.1));
  const auto b = branch_near(branches, 2415.0);
  REQUIRE(b);
  CHECK(count_slope_sign_changes(*b) == 1);
  const BranchEvaluator ev(model, dir);
  const auto reports = find_zefoz(*b, 1e-3, &ev);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].b_star >= 18.0);
  CHECK(reports[0].b_star <= 23.0);
  CHECK(reports[0].s1_residual < 1e-3);
  CHECK(std::isfinite(reports[0].s2));
  CHECK(reports[0].s2 > 0.0);

  SUBCASE("stable under step refinement") {
    const auto fine = track_branches(scan_of(preset("this_work"), 3.3, 0.0, 30.0, 0.05));
    const auto bf = branch_near(fine, 2415.0);
    REQUIRE(bf);
    const auto rf = find_zefoz(*bf, 1e-3, &ev);
    REQUIRE(rf.size() == 1);
    CHECK(std::abs(rf[0].b_star - reports[0].b_star) < 0.05);
  }
  SUBCASE("finite differences converge at second order") {
    const auto coarse = track_branches(scan_of(preset("this_work"), 3.3, 0.0, 30.0, 0.2));
    const auto bc = branch_near(coarse, 2415.0);
    REQUIRE(bc);
    auto error_at = [&](const TransitionBranch& br, double field) {
      std::size_t k = 0;
      while (std::abs(br.samples[k].field_mt - field) > 1e-9) ++k;
      const auto chk = cross_check_sensitivity(br, k, ev);
      return std::abs(chk.s1_fd - chk.s1_hf);
    };
    const double ratio = error_at(*bc, 10.0) / error_at(*b, 10.0);
    CHECK(ratio > 3.5);
    CHECK(ratio < 4.5);
  }
}

TEST_CASE("finite-difference and Hellmann-Feynman slopes agree") {
  const SpinModel model(preset("this_work"));
  for (double theta : {0.0, 3.3, 30.0}) {
    const Vec3 dir = direction_from_angles(theta, 0);
    const BranchEvaluator ev(model, dir);
    const auto branches = track_branches(scan_of(preset("this_work"), theta, -0.5, 0.5, 0.01));
    int compared = 0;
    for (const auto& b : branches) {
      // The sample at B = 0 sits on the degenerate point itself.
      for (std::size_t k = 1; k + 1 < b.samples.size(); ++k) {
        if (std::abs(b.samples[k].field_mt) > 1e-9) continue;
        const auto chk = cross_check_sensitivity(b, k, ev);
        if (std::abs(chk.s1_hf) < 0.1) continue;
        CHECK(std::abs(chk.s1_fd - chk.s1_hf) <= 0.01 * std::abs(chk.s1_hf));
        ++compared;
      }
    }
    CHECK(compared > 0);
  }
}

TEST_CASE("slopes at zero field are symmetric under reflecting the misalignment") {
  const SpinModel model(preset("this_work"));
  auto slopes = [&](double theta) {
    const Vec3 dir = direction_from_angles(theta, 0);
    const BranchEvaluator ev(model, dir);
    std::vector<std::pair<long, long>> out;
    for (const auto& b : track_branches(scan_of(preset("this_work"), theta, -0.1, 0.1, 0.01)))
      for (std::size_t k = 1; k + 1 < b.samples.size(); ++k)
        if (std::abs(b.samples[k].field_mt) < 1e-9) {
          const auto chk = cross_check_sensitivity(b, k, ev);
          out.emplace_back(std::lround(b.f0() * 10), std::lround(std::abs(chk.s1_hf) * 1e6));
        }
    std::sort(out.begin(), out.end());
    return out;
  };
  CHECK(slopes(3.3) == slopes(-3.3));
}

TEST_CASE("linewidth minimum") {
  std::vector<std::pair<double, PeakFit>> fits;
  for (double b = 15.0; b <= 25.0 + 1e-9; b += 0.5) {
    PeakFit p;
    p.fwhm = 1.84 + 0.05 * (b - 19.0) * (b - 19.0);
    fits.emplace_back(b, p);
  }
  ZefozReport z;
  z.b_star = 20.5;
  const auto r = linewidth_vs_field(fits, z);
  CHECK(!r.flat);
  CHECK(r.b_min.value() == doctest::Approx(19.0).epsilon(1e-12));
  CHECK(r.gamma_min.value() == doctest::Approx(1.84).epsilon(1e-12));
  CHECK(r.zefoz_offset.value() == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(r.table.size() == fits.size());

  for (auto& f : fits) f.second.fwhm = 2.0;
  const auto flat = linewidth_vs_field(fits);
  CHECK(flat.flat);
  CHECK(!flat.b_min);

  fits.resize(2);
  CHECK_THROWS_AS(linewidth_vs_field(fits), DataError);
}

TEST_CASE("report CSV layout") {
  ZefozReport r;
  r.branch_id = 3;
  r.f0 = 2413.962436;
  r.b_star = 21.0;
  r.f_star = 2232.0;
  r.s2 = 0.862;
  r.s1_residual = 1e-4;
  std::ostringstream out;
  write_zefoz_csv(out, {r});
  CHECK(out.str() ==
        "branch_id,f0_MHz,B_star_mT,f_star_MHz,S2_MHz_per_mT2,S1_residual\n"
        "3,2413.962436,21.000000,2232.000000,8.620000000e-01,1.000e-04\n");
  std::ostringstream br;
  write_branch_csv(br, branch_from_samples({{1, 10}, {2, 11}}, 0), {{2.0, 1.5}});
  CHECK(br.str() == "field_mT,f_center_MHz,fwhm_MHz\n1.000000,10.000000,\n2.000000,11.000000,1.500000\n");
}

TEST_CASE("direction batch varies smoothly with angle") {
  const SpinModel model(preset("this_work"));
  CatalogOptions o;
  o.f_min = 1000;
  const auto searches = zefoz_direction_batch(model, {{0.0, 0.0}, {1.0, 0.0}, {3.3, 0.0}}, field_grid(0, 30, 0.1),
                                              GeometryKind::VoigtLike, {0.0, 0.02}, o, 1e-3, 4);
  REQUIRE(searches.size() == 3);
  std::vector<double> b_star;
  for (const auto& s : searches) {
    const auto k = select_branch(s.branches, 2415.0, 5.0);
    REQUIRE(k);
    for (const auto& r : s.reports)
      if (r.branch_id == s.branches[*k].id) b_star.push_back(r.b_star);
  }
  REQUIRE(b_star.size() == 3);
  CHECK(std::abs(b_star[1] - b_star[0]) < 2.0);
  CHECK(std::abs(b_star[2] - b_star[1]) < 2.0);
}
