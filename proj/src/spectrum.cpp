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

#include "hfepr/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "hfepr/constants.hpp"
#include "hfepr/errors.hpp"
#include "hfepr/least_squares.hpp"

namespace hfepr {

namespace {

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

void require_ascending(const std::vector<double>& grid) {
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (!(grid[k] > grid[k - 1])) throw DataError("frequency grid must be strictly ascending");
}

bool same_grid(const SpectrumTrace& a, const SpectrumTrace& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double scale = std::max(std::abs(a.frequencies[k]), 1.0);
    if (std::abs(a.frequencies[k] - b.frequencies[k]) > 1e-9 * scale) return false;
  }
  return true;
}

std::string describe(const PeakFit& p) {
  std::ostringstream s;
  s << "center=" << p.center << " MHz, fwhm=" << p.fwhm << " MHz, amplitude=" << p.amplitude
    << ", offset=" << p.offset << ", residual_rms=" << p.residual_rms;
  return s.str();
}

}  // namespace

void SpectrumTrace::validate() const {
  if (frequencies.size() != amplitudes.size())
    throw DataError("trace frequencies and amplitudes differ in length");
  if (frequencies.size() < 2) throw DataError("trace needs at least two samples");
  require_ascending(frequencies);
}

double lorentzian(double f, double center, double fwhm) {
  const double hw2 = 0.25 * fwhm * fwhm;
  const double d = f - center;
  return hw2 / (d * d + hw2);
}

std::vector<double> uniform_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || !(hi > lo)) throw ConfigError("grid needs hi > lo and a positive step");
  std::vector<double> g;
  const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  for (long k = 0; k <= n; ++k) g.push_back(lo + static_cast<double>(k) * step);
  return g;
}

SpectrumTrace synthesize(const std::vector<TransitionRecord>& catalog, const std::vector<double>& grid,
                         const std::vector<double>& fwhm, std::optional<NoiseSpec> noise, double field_mt) {
  require_ascending(grid);
  if (!catalog.empty() && fwhm.size() != 1 && fwhm.size() != catalog.size())
    throw ConfigError("linewidth list must hold one value or one per line");
  for (double w : fwhm)
    if (!(w > 0.0)) throw ConfigError("linewidth must be positive");

  SpectrumTrace out;
  out.field_mt = field_mt;
  out.frequencies = grid;
  out.amplitudes.assign(grid.size(), 0.0);
  for (std::size_t l = 0; l < catalog.size(); ++l) {
    const double w = fwhm.size() == 1 ? fwhm[0] : fwhm[l];
    for (std::size_t k = 0; k < grid.size(); ++k)
      out.amplitudes[k] += catalog[l].intensity * lorentzian(grid[k], catalog[l].frequency, w);
  }
  if (noise && noise->sigma > 0.0) {
    std::mt19937_64 rng(noise->seed);
    std::normal_distribution<double> dist(0.0, noise->sigma);
    for (double& a : out.amplitudes) a += dist(rng);
  }
  return out;
}

SpectrumTrace build_reference(const std::vector<SpectrumTrace>& traces,
                              const std::vector<std::vector<FrequencyInterval>>& exclusions) {
  if (traces.empty()) throw DataError("reference construction needs at least one trace");
  if (!exclusions.empty() && exclusions.size() != traces.size())
    throw ConfigError("exclusion windows must be given per trace");
  for (const auto& t : traces) {
    t.validate();
    if (!same_grid(t, traces.front())) throw DataError("all traces must share one frequency grid");
  }

  SpectrumTrace ref;
  ref.field_mt = traces.front().field_mt;
  ref.frequencies = traces.front().frequencies;
  ref.amplitudes.resize(ref.frequencies.size());
  std::vector<double> eligible;
  std::optional<std::size_t> gap_start;
  for (std::size_t k = 0; k <= ref.frequencies.size(); ++k) {
    bool covered = false;
    if (k < ref.frequencies.size()) {
      eligible.clear();
      for (std::size_t t = 0; t < traces.size(); ++t) {
        bool excluded = false;
        if (!exclusions.empty())
          for (const auto& w : exclusions[t]) excluded = excluded || w.contains(ref.frequencies[k]);
        if (!excluded) eligible.push_back(traces[t].amplitudes[k]);
      }
      covered = !eligible.empty();
      if (covered) ref.amplitudes[k] = median(eligible);
    }
    if (!covered && k < ref.frequencies.size() && !gap_start) gap_start = k;
    if ((covered || k == ref.frequencies.size()) && gap_start) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "no trace covers the interval %.6f-%.6f MHz", ref.frequencies[*gap_start],
                    ref.frequencies[k - 1]);
      throw DataError(buf);
    }
  }
  return ref;
}

SpectrumTrace subtract_background(const SpectrumTrace& trace, const SpectrumTrace& reference) {
  trace.validate();
  reference.validate();
  if (!same_grid(trace, reference)) throw DataError("trace and reference grids differ");
  SpectrumTrace out = trace;
  for (std::size_t k = 0; k < out.size(); ++k) out.amplitudes[k] = reference.amplitudes[k] - trace.amplitudes[k];
  return out;
}

double robust_noise(const SpectrumTrace& trace) {
  if (trace.size() < 3) return 0.0;
  std::vector<double> d(trace.size() - 1);
  for (std::size_t k = 0; k + 1 < trace.size(); ++k) d[k] = trace.amplitudes[k + 1] - trace.amplitudes[k];
  const double m = median(d);
  for (double& v : d) v = std::abs(v - m);
  return median(d);
}

std::vector<std::pair<std::size_t, double>> peak_prominences(const SpectrumTrace& trace) {
  const auto& a = trace.amplitudes;
  const std::size_t n = a.size();
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (!(a[k] > a[k - 1] && a[k] >= a[k + 1])) continue;
    // Skip to the end of a plateau; it only counts if it then descends.
    std::size_t e = k;
    while (e + 1 < n && a[e + 1] == a[k]) ++e;
    if (e + 1 >= n || a[e + 1] > a[k]) continue;
    double left_min = a[k];
    for (std::size_t j = k; j-- > 0;) {
      if (a[j] > a[k]) break;
      left_min = std::min(left_min, a[j]);
    }
    double right_min = a[k];
    for (std::size_t j = e + 1; j < n; ++j) {
      if (a[j] > a[k]) break;
      right_min = std::min(right_min, a[j]);
    }
    out.emplace_back((k + e) / 2, a[k] - std::max(left_min, right_min));
    k = e;
  }
  return out;
}

std::vector<double> detect_peaks(const SpectrumTrace& trace, const PeakDetectOptions& options) {
  trace.validate();
  double threshold = options.min_prominence ? *options.min_prominence : 5.0 * robust_noise(trace);
  auto candidates = peak_prominences(trace);
  std::erase_if(candidates, [&](const auto& c) { return !(c.second > threshold); });
  const auto& a = trace.amplitudes;
  std::sort(candidates.begin(), candidates.end(), [&](const auto& x, const auto& y) {
    return a[x.first] != a[y.first] ? a[x.first] > a[y.first] : x.first < y.first;
  });

  std::vector<double> centers;
  for (const auto& [k, prominence] : candidates) {
    // Vertex of the parabola through the maximum and its neighbours.
    const double f0 = trace.frequencies[k - 1], f1 = trace.frequencies[k], f2 = trace.frequencies[k + 1];
    const double y0 = a[k - 1], y1 = a[k], y2 = a[k + 1];
    const double denom = (f0 - f1) * (f0 - f2) * (f1 - f2);
    double center = f1;
    if (denom != 0.0) {
      const double qa = (f2 * (y1 - y0) + f1 * (y0 - y2) + f0 * (y2 - y1)) / denom;
      const double qb = (f2 * f2 * (y0 - y1) + f1 * f1 * (y2 - y0) + f0 * f0 * (y1 - y2)) / denom;
      if (qa < 0.0) center = std::clamp(-qb / (2.0 * qa), f0, f2);
    }
    const bool close = std::any_of(centers.begin(), centers.end(), [&](double c) {
      return std::abs(c - center) < options.min_separation;
    });
    if (!close) centers.push_back(center);
  }
  std::sort(centers.begin(), centers.end());
  return centers;
}

PeakFit fit_lorentzian(const SpectrumTrace& trace, const FrequencyInterval& window, std::optional<PeakFit> initial,
                       const LorentzianFitOptions& options) {
  trace.validate();
  std::vector<double> f, y;
  for (std::size_t k = 0; k < trace.size(); ++k) {
    if (window.contains(trace.frequencies[k])) {
      f.push_back(trace.frequencies[k]);
      y.push_back(trace.amplitudes[k]);
    }
  }
  if (f.size() < 5) {
    std::ostringstream msg;
    msg << "fit window " << window.lo << "-" << window.hi << " MHz holds " << f.size() << " samples, need 5";
    throw DataError(msg.str());
  }
  const std::size_t n = f.size();

  PeakFit guess;
  if (initial) {
    guess = *initial;
  } else {
    guess.offset = std::min(y.front(), y.back());
    const auto top = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
    guess.center = f[top];
    guess.amplitude = y[top] - guess.offset;
    const double half = guess.offset + 0.5 * guess.amplitude;
    std::size_t lo = top, hi = top;
    while (lo > 0 && y[lo] > half) --lo;
    while (hi + 1 < n && y[hi] > half) ++hi;
    const double step = (f.back() - f.front()) / static_cast<double>(n - 1);
    guess.fwhm = std::clamp(f[hi] - f[lo], 2.0 * step, f.back() - f.front());
  }
  if (!(guess.fwhm > 0.0)) throw ConfigError("initial linewidth must be positive");

  const ResidualFn residuals = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(n);
    for (std::size_t k = 0; k < n; ++k) r[k] = p[0] + p[1] * lorentzian(f[k], p[2], p[3]) - y[k];
    return r;
  };
  const JacobianFn jacobian = [&](const Eigen::VectorXd& p) {
    Eigen::MatrixXd j(n, 4);
    const double hw2 = 0.25 * p[3] * p[3];
    for (std::size_t k = 0; k < n; ++k) {
      const double d = f[k] - p[2];
      const double den = d * d + hw2;
      j(k, 0) = 1.0;
      j(k, 1) = hw2 / den;
      j(k, 2) = p[1] * hw2 * 2.0 * d / (den * den);
      j(k, 3) = p[1] * 0.5 * p[3] * d * d / (den * den);
    }
    return j;
  };

  Eigen::VectorXd x0(4);
  x0 << guess.offset, guess.amplitude, guess.center, guess.fwhm;
  LeastSquaresOptions lso;
  lso.max_iterations = options.max_iterations;
  lso.step_tol = options.step_tol;
  const LeastSquaresResult res = levenberg_marquardt(residuals, jacobian, x0, lso);

  PeakFit out;
  out.offset = res.params[0];
  out.amplitude = res.params[1];
  out.center = res.params[2];
  out.fwhm = std::abs(res.params[3]);
  out.area = 0.5 * kPi * out.amplitude * out.fwhm;
  out.residual_rms = std::sqrt(res.cost / static_cast<double>(n));
  out.iterations = res.iterations;
  if (!res.converged) throw ConvergenceError("Lorentzian fit did not converge; last iterate: " + describe(out));
  if (!(out.fwhm > 0.0) || !std::isfinite(out.center)) throw ConvergenceError("Lorentzian fit degenerated: " + describe(out));
  return out;
}

std::vector<AreaPoint> peak_area_vs_temperature(const std::vector<std::pair<double, SpectrumTrace>>& traces,
                                                const FrequencyInterval& window) {
  if (traces.size() < 2) throw DataError("peak area analysis needs at least two temperatures");
  std::vector<AreaPoint> out;
  double largest = 0.0;
  for (const auto& [temperature, trace] : traces) {
    AreaPoint p;
    p.temperature = temperature;
    try {
      p.fit = fit_lorentzian(trace, window);
      largest = std::max(largest, p.fit->area);
    } catch (const Error& e) {
      p.error = e.what();
    }
    out.push_back(std::move(p));
  }
  for (auto& p : out)
    if (p.fit && largest > 0.0) p.normalized_area = p.fit->area / largest;
  return out;
}

double normalized_misfit(const std::vector<AreaPoint>& areas, const std::vector<double>& prediction) {
  if (areas.size() != prediction.size()) throw DataError("prediction length differs from the area table");
  double sum = 0.0;
  int count = 0;
  for (std::size_t k = 0; k < areas.size(); ++k) {
    if (!areas[k].normalized_area) continue;
    const double d = *areas[k].normalized_area - prediction[k];
    sum += d * d;
    ++count;
  }
  if (count == 0) throw DataError("no successful fits to compare");
  return std::sqrt(sum / count);
}

}  // namespace hfepr
