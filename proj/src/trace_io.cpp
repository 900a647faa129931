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

#include "hfepr/trace_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "hfepr/errors.hpp"

namespace hfepr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& text, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (trim(text.substr(used)).empty() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw DataError("line " + std::to_string(line) + ": cannot parse number '" + text + "'");
}

// "# key=value" -> (key, value); empty key when not of that form.
std::pair<std::string, std::string> directive(const std::string& line) {
  std::string body = trim(line.substr(1));
  const auto eq = body.find('=');
  if (eq == std::string::npos) return {};
  return {trim(body.substr(0, eq)), trim(body.substr(eq + 1))};
}

}  // namespace

SpectrumTrace read_trace(std::istream& in) {
  SpectrumTrace trace;
  bool have_field = false, have_header = false;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto [key, value] = directive(line);
      if (key == "field_mT") {
        trace.field_mt = parse_number(value, n);
        have_field = true;
      } else if (key == "temperature_mK") {
        trace.temperature_mk = parse_number(value, n);
      }
      continue;
    }
    if (!have_header) {
      if (line != "frequency_hz,amplitude_db")
        throw DataError("line " + std::to_string(n) + ": expected header 'frequency_hz,amplitude_db'");
      have_header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError("line " + std::to_string(n) + ": expected two columns");
    trace.frequencies.push_back(parse_number(line.substr(0, comma), n) * 1e-6);
    trace.amplitudes.push_back(parse_number(line.substr(comma + 1), n));
  }
  if (!have_field) throw DataError("trace is missing the '# field_mT=' line");
  if (!have_header) throw DataError("trace is missing the 'frequency_hz,amplitude_db' header");
  trace.validate();
  return trace;
}

SpectrumTrace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trace file " + path.string());
  try {
    return read_trace(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_trace(std::ostream& out, const SpectrumTrace& trace) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "# field_mT=%.9g\n", trace.field_mt);
  out << buf;
  if (trace.temperature_mk) {
    std::snprintf(buf, sizeof buf, "# temperature_mK=%.9g\n", *trace.temperature_mk);
    out << buf;
  }
  out << "frequency_hz,amplitude_db\n";
  for (std::size_t k = 0; k < trace.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.3f,%.9e\n", trace.frequencies[k] * 1e6, trace.amplitudes[k]);
    out << buf;
  }
}

void write_trace(const std::filesystem::path& path, const SpectrumTrace& trace) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trace file " + path.string());
  write_trace(out, trace);
}

std::vector<std::pair<double, double>> read_peak_list(std::istream& in) {
  std::vector<std::pair<double, double>> peaks;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (!(std::isdigit(static_cast<unsigned char>(line[0])) || line[0] == '-' || line[0] == '+' || line[0] == '.'))
      continue;  // header
    const auto comma = line.find(',');
    const double f = parse_number(line.substr(0, comma), n);
    const double w = comma == std::string::npos ? 1.0 : parse_number(line.substr(comma + 1), n);
    if (!(w > 0.0)) throw DataError("line " + std::to_string(n) + ": peak weight must be positive");
    peaks.emplace_back(f, w);
  }
  return peaks;
}

std::vector<std::pair<double, double>> read_peak_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open peak list " + path.string());
  return read_peak_list(in);
}

void write_peak_report(std::ostream& out, const std::vector<PeakReportRow>& rows) {
  out << "field_mT,center_MHz,fwhm_MHz,area,residual_rms\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.9e,%.3e\n", r.field_mt, r.fit.center, r.fit.fwhm, r.fit.area,
                  r.fit.residual_rms);
    out << buf;
  }
}

}  // namespace hfepr
