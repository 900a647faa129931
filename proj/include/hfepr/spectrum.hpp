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

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hfepr/transitions.hpp"

namespace hfepr {

/// Amplitude versus frequency at one field point. Frequencies in MHz, strictly ascending.
struct SpectrumTrace {
  double field_mt = 0.0;
  std::optional<double> temperature_mk;
  std::vector<double> frequencies;
  std::vector<double> amplitudes;

  /// Throws DataError unless the grid is strictly ascending with >= 2 matching samples.
  void validate() const;
  std::size_t size() const { return frequencies.size(); }
};

struct FrequencyInterval {
  double lo = 0.0;  // MHz
  double hi = 0.0;  // MHz
  bool contains(double f) const { return f >= lo && f <= hi; }
};

struct PeakFit {
  double center = 0.0;     // MHz
  double fwhm = 0.0;       // MHz
  double area = 0.0;       // amplitude * MHz, (pi/2) * amplitude * fwhm
  double amplitude = 0.0;  // peak height above offset
  double offset = 0.0;
  double residual_rms = 0.0;
  int iterations = 0;
};

/// Lorentzian normalized to unit height: (G/2)^2 / ((f - f0)^2 + (G/2)^2).
double lorentzian(double f, double center, double fwhm);

struct NoiseSpec {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Sum of unit-height Lorentzians scaled by record intensity. `fwhm` holds either one
/// width for every line or one per record.
SpectrumTrace synthesize(const std::vector<TransitionRecord>& catalog, const std::vector<double>& grid,
                         const std::vector<double>& fwhm, std::optional<NoiseSpec> noise = std::nullopt,
                         double field_mt = 0.0);

/// Evenly spaced grid lo, lo+step, ..., hi.
std::vector<double> uniform_grid(double lo, double hi, double step);

/// Pointwise median over traces whose exclusion windows do not cover the point.
/// `exclusions` is empty or has one entry per trace.
SpectrumTrace build_reference(const std::vector<SpectrumTrace>& traces,
                              const std::vector<std::vector<FrequencyInterval>>& exclusions);

/// reference - trace, so absorption dips become positive peaks.
SpectrumTrace subtract_background(const SpectrumTrace& trace, const SpectrumTrace& reference);

struct PeakDetectOptions {
  std::optional<double> min_prominence;  // default: 5 x MAD of first differences
  double min_separation = 0.0;           // MHz
};

/// Median absolute deviation of the first differences (robust noise estimate).
double robust_noise(const SpectrumTrace& trace);

/// Topographic prominence of every interior local maximum.
std::vector<std::pair<std::size_t, double>> peak_prominences(const SpectrumTrace& trace);

/// Centers (MHz, ascending) of local maxima above the prominence threshold, with
/// maxima closer than min_separation merged into the taller one.
std::vector<double> detect_peaks(const SpectrumTrace& trace, const PeakDetectOptions& options = {});

struct LorentzianFitOptions {
  int max_iterations = 200;
  double step_tol = 1e-8;
};

/// Least-squares fit of offset + amplitude * lorentzian(f; center, fwhm) inside the window.
/// Throws DataError for fewer than 5 samples, ConvergenceError (with the last iterate)
/// when the iteration budget runs out.
PeakFit fit_lorentzian(const SpectrumTrace& trace, const FrequencyInterval& window,
                       std::optional<PeakFit> initial = std::nullopt, const LorentzianFitOptions& options = {});

struct AreaPoint {
  double temperature = 0.0;  // as supplied by the caller
  std::optional<double> normalized_area;
  std::optional<PeakFit> fit;
  std::string error;
};

/// Lorentzian area per temperature normalized to the largest area. A failed fit is
/// reported on its point and does not abort the others.
std::vector<AreaPoint> peak_area_vs_temperature(const std::vector<std::pair<double, SpectrumTrace>>& traces,
                                                const FrequencyInterval& window);

/// RMS difference between normalized areas and a prediction on the same points
/// (failed points skipped).
double normalized_misfit(const std::vector<AreaPoint>& areas, const std::vector<double>& prediction);

}  // namespace hfepr
