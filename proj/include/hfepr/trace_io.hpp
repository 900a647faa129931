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

#include <filesystem>
#include <iosfwd>
#include <utility>
#include <vector>

#include "hfepr/spectrum.hpp"

namespace hfepr {

// Trace files: "# field_mT=<v>", optional "# temperature_mK=<v>", then
// "frequency_hz,amplitude_db" and ascending rows. Frequencies are held in MHz.
SpectrumTrace read_trace(std::istream& in);
SpectrumTrace read_trace(const std::filesystem::path& path);
void write_trace(std::ostream& out, const SpectrumTrace& trace);
void write_trace(const std::filesystem::path& path, const SpectrumTrace& trace);

// One "frequency_MHz[,weight]" row per peak; '#' lines and a header are skipped.
std::vector<std::pair<double, double>> read_peak_list(std::istream& in);
std::vector<std::pair<double, double>> read_peak_list(const std::filesystem::path& path);

struct PeakReportRow {
  double field_mt = 0.0;
  PeakFit fit;
};
void write_peak_report(std::ostream& out, const std::vector<PeakReportRow>& rows);

}  // namespace hfepr
