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

#include <sstream>

#include "hfepr/errors.hpp"
#include "hfepr/trace_io.hpp"

using namespace hfepr;

TEST_CASE("trace round trip keeps field, temperature and samples") {
  SpectrumTrace t;
  t.field_mt = 12.5;
  t.temperature_mk = 60.0;
  t.frequencies = {2400.0, 2400.001, 2400.5};
  t.amplitudes = {-20.0, -21.25, -19.5};
  std::stringstream io;
  write_trace(io, t);
  const auto back = read_trace(io);
  CHECK(back.field_mt == 12.5);
  REQUIRE(back.temperature_mk);
  CHECK(*back.temperature_mk == 60.0);
  REQUIRE(back.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(back.frequencies[k] == doctest::Approx(t.frequencies[k]).epsilon(1e-12));
    CHECK(back.amplitudes[k] == doctest::Approx(t.amplitudes[k]).epsilon(1e-9));
  }
}

TEST_CASE("frequencies are read in Hz and held in MHz") {
  std::istringstream in("# field_mT=0\nfrequency_hz,amplitude_db\n2.4e9,-20\n2.401e9,-21\n");
  const auto t = read_trace(in);
  CHECK(t.frequencies[0] == doctest::Approx(2400.0));
  CHECK(t.frequencies[1] == doctest::Approx(2401.0));
  CHECK(!t.temperature_mk);
}

TEST_CASE("malformed traces are data errors") {
  std::istringstream no_field("frequency_hz,amplitude_db\n1e9,-20\n2e9,-20\n");
  CHECK_THROWS_AS(read_trace(no_field), DataError);
  std::istringstream no_header("# field_mT=1\n1e9,-20\n2e9,-20\n");
  CHECK_THROWS_AS(read_trace(no_header), DataError);
  std::istringstream bad_number("# field_mT=1\nfrequency_hz,amplitude_db\n1e9,abc\n2e9,-20\n");
  CHECK_THROWS_AS(read_trace(bad_number), DataError);
  std::istringstream descending("# field_mT=1\nfrequency_hz,amplitude_db\n2e9,-20\n1e9,-20\n");
  CHECK_THROWS_AS(read_trace(descending), DataError);
  CHECK_THROWS_AS(read_trace(std::filesystem::path("/nonexistent/trace.csv")), DataError);
}

TEST_CASE("peak lists accept a header, comments and optional weights") {
  std::istringstream in("# measured\nfrequency_MHz,weight\n2414.0\n2664.8,2\n\n2736.6, 0.5\n");
  const auto peaks = read_peak_list(in);
  REQUIRE(peaks.size() == 3);
  CHECK(peaks[0] == std::pair<double, double>{2414.0, 1.0});
  CHECK(peaks[1] == std::pair<double, double>{2664.8, 2.0});
  CHECK(peaks[2].second == 0.5);
  std::istringstream bad("2414,-1\n");
  CHECK_THROWS_AS(read_peak_list(bad), DataError);
}

TEST_CASE("peak report layout") {
  PeakReportRow r;
  r.field_mt = 21.0;
  r.fit.center = 2232.5;
  r.fit.fwhm = 1.84;
  r.fit.area = 2.89;
  r.fit.residual_rms = 0.01;
  std::ostringstream out;
  write_peak_report(out, {r});
  CHECK(out.str() ==
        "field_mT,center_MHz,fwhm_MHz,area,residual_rms\n"
        "21.000000,2232.500000,1.840000,2.890000000e+00,1.000e-02\n");
}
