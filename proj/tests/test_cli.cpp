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

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"
#include "hfepr/fitting.hpp"
#include "hfepr/trace_io.hpp"

namespace fs = std::filesystem;
using namespace hfepr;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_tool(std::vector<std::string> args) {
  args.insert(args.begin(), "hfepr");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hfepr_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// DPPH absorption dip at the frequency of the true field, labelled with the nominal field.
void write_dpph_trace(const fs::path& p, double nominal, double actual) {
  const double f0 = dpph_frequency(actual);
  SpectrumTrace t;
  t.field_mt = nominal;
  for (double f = f0 - 100.0; f <= f0 + 100.0; f += 0.5) {
    const double d = (f - f0) / 2.5;
    t.frequencies.push_back(f);
    t.amplitudes.push_back(-20.0 - 3.0 / (1.0 + d * d));
  }
  write_trace(p, t);
}

}  // namespace

TEST_CASE("simulate writes the transition catalog") {
  const fs::path dir = scratch("simulate");
  const auto r = run_tool({"simulate", "--preset", "this_work", "--b-stop", "2", "--b-step", "0.5", "--f-min", "1000",
                           "--out", dir.string()});
  REQUIRE(r.code == cli::kOk);
  const std::string csv = slurp(dir / "catalog.csv");
  CHECK(csv.rfind("field_mT,", 0) == 0);
  CHECK(csv.find("2413.9") != std::string::npos);
  CHECK(fs::exists(dir / "branches.svg"));
}

TEST_CASE("configuration errors exit with code 2") {
  const fs::path dir = scratch("config");
  CHECK(run_tool({"simulate", "--geometry", "sideways", "--out", dir.string()}).code == cli::kConfigError);
  CHECK(run_tool({"simulate", "--preset", "no_such_preset", "--out", dir.string()}).code == cli::kConfigError);
  CHECK(run_tool({"simulate", "--b-step", "0", "--out", dir.string()}).code == cli::kConfigError);
  CHECK(run_tool({"--config", (dir / "missing.json").string(), "simulate"}).code == cli::kConfigError);
  write_text(dir / "bad.json", "{\"b_step_mT\": \"fast\"}");
  const auto r = run_tool({"--config", (dir / "bad.json").string(), "simulate", "--out", dir.string()});
  CHECK(r.code == cli::kConfigError);
  CHECK(r.err.find("b_step_mT") != std::string::npos);
}

TEST_CASE("config file values are overridden by flags") {
  const fs::path dir = scratch("override");
  write_text(dir / "run.json", "{\"preset\": \"er_i0\", \"b_stop_mT\": 1, \"b_step_mT\": 0.5, \"out\": \"from_config\"}");
  const auto r = run_tool({"--config", (dir / "run.json").string(), "simulate", "--out", (dir / "flag").string()});
  REQUIRE(r.code == cli::kOk);
  CHECK(fs::exists(dir / "flag" / "catalog.csv"));
  CHECK(!fs::exists(dir / "from_config"));
}

TEST_CASE("an empty peak list is a data error") {
  const fs::path dir = scratch("empty_peaks");
  write_text(dir / "peaks.csv", "frequency_MHz\n");
  const auto r = run_tool({"fit-zero-field", "--peaks", (dir / "peaks.csv").string(), "--out", dir.string()});
  CHECK(r.code == cli::kDataError);
  CHECK(r.err.find("no peaks detected") != std::string::npos);
}

TEST_CASE("zero-field fit report is reproducible") {
  const fs::path dir = scratch("fit");
  write_text(dir / "peaks.csv", "frequency_MHz\n2413.962\n2664.786\n2736.602\n2987.426\n");
  ::setenv("SOURCE_DATE_EPOCH", "1792195200", 1);
  std::string first;
  for (int k = 0; k < 2; ++k) {
    const auto r = run_tool({"fit-zero-field", "--peaks", (dir / "peaks.csv").string(), "--free",
                             "a_parallel,a_perp", "--out", dir.string()});
    REQUIRE(r.code == cli::kOk);
    const std::string text = slurp(dir / "fit_report.json");
    if (k == 0) first = text;
    else CHECK(text == first);
  }
  ::unsetenv("SOURCE_DATE_EPOCH");
  const json report = json::parse(first);
  CHECK(report["metadata"]["generated_at"] == "2026-10-17T00:00:00Z");
  CHECK(report["convergence"]["converged"] == true);
  CHECK(report["metadata"]["inputs"][0]["sha256"].get<std::string>().size() == 64);
  CHECK(std::abs(report["residual_rms_MHz"].get<double>()) < 0.05);
}

TEST_CASE("an iteration cap that is too small exits with code 4") {
  const fs::path dir = scratch("no_convergence");
  write_text(dir / "peaks.csv", "2413.962\n2664.786\n2736.602\n2987.426\n");
  write_text(dir / "run.json", "{\"fit\": {\"max_iterations\": 1, \"initial_preset\": \"sattler1971\"}}");
  const auto r = run_tool({"--config", (dir / "run.json").string(), "fit-zero-field", "--peaks",
                           (dir / "peaks.csv").string(), "--out", dir.string()});
  CHECK(r.code == cli::kConvergenceError);
  CHECK(r.err.find("last iterate") != std::string::npos);
}

TEST_CASE("calibration recovers the field scale and skips traces without a dip") {
  const fs::path dir = scratch("calibrate");
  std::vector<std::string> args{"calibrate", "--out", dir.string()};
  int k = 0;
  for (double nominal : {50.0, 100.0, 150.0}) {
    const fs::path p = dir / ("dpph_" + std::to_string(k++) + ".csv");
    write_dpph_trace(p, nominal, 0.98 * nominal);
    args.push_back(p.string());
  }
  SpectrumTrace flat;
  flat.field_mt = 75.0;
  flat.frequencies = {2000.0, 2001.0, 2002.0, 2003.0, 2004.0};
  flat.amplitudes.assign(5, -20.0);
  write_trace(dir / "flat.csv", flat);
  args.push_back((dir / "flat.csv").string());

  const auto r = run_tool(args);
  REQUIRE(r.code == cli::kOk);
  CHECK(r.err.find("warning") != std::string::npos);
  const json report = json::parse(slurp(dir / "calibration.json"));
  CHECK(report["map"]["slope"].get<double>() == doctest::Approx(0.98).epsilon(1e-4));
  CHECK(std::abs(report["map"]["intercept_mT"].get<double>()) < 0.01);
  CHECK(report["points"].size() == 3);
  CHECK(report["warnings"].size() == 1);
}

TEST_CASE("zefoz: nuclear-spin-free system reports nothing") {
  const fs::path dir = scratch("zefoz_i0");
  const auto r = run_tool({"zefoz", "--preset", "er_i0", "--b-start", "1", "--b-stop", "30", "--out", dir.string()});
  REQUIRE(r.code == cli::kOk);
  CHECK(slurp(dir / "zefoz.csv") == "branch_id,f0_MHz,B_star_mT,f_star_MHz,S2_MHz_per_mT2,S1_residual\n");
}

TEST_CASE("zefoz: 2414 MHz branch at 3.3 degrees") {
  const fs::path dir = scratch("zefoz");
  const auto r = run_tool({"zefoz", "--preset", "this_work", "--b0-theta", "3.3", "--b-stop", "30", "--f-min", "1000",
                           "--f0", "2415", "--out", dir.string()});
  REQUIRE(r.code == cli::kOk);
  std::istringstream csv(slurp(dir / "zefoz.csv"));
  std::string line;
  std::getline(csv, line);
  const std::string branch = slurp(dir / "branch.csv");
  CHECK(branch.rfind("field_mT,f_center_MHz,fwhm_MHz\n", 0) == 0);
  // The exported branch has its turning point in the expected window.
  bool found = false;
  while (std::getline(csv, line)) {
    double f0 = 0, b = 0;
    std::sscanf(line.c_str(), "%*d,%lf,%lf", &f0, &b);
    if (std::abs(f0 - 2414.0) < 1.5 && b >= 18.0 && b <= 23.0) found = true;
  }
  CHECK(found);
}
