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

#include "commands.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "hfepr/constants.hpp"
#include "hfepr/errors.hpp"
#include "hfepr/fitting.hpp"
#include "hfepr/presets.hpp"
#include "hfepr/spectrum.hpp"
#include "hfepr/svg.hpp"
#include "hfepr/trace_io.hpp"
#include "hfepr/zefoz.hpp"

namespace hfepr::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

void RunConfig::validate() const {
  system.validate();
  if (!std::isfinite(theta_deg)) throw ConfigError("b0_theta_deg must be finite");
  if (!std::isfinite(phi_deg)) throw ConfigError("b0_phi_deg must be finite");
  if (!(b_step > 0.0) || !std::isfinite(b_step)) throw ConfigError("b_step_mT must be positive");
  if (!std::isfinite(b_start) || !std::isfinite(b_stop) || b_start > b_stop)
    throw ConfigError("b_start_mT must not exceed b_stop_mT");
  if (!std::isfinite(f_min) || !std::isfinite(f_max) || !(f_min < f_max))
    throw ConfigError("frequency window f_min_MHz..f_max_MHz is empty");
  if (!(t_mk >= 0.0) || !std::isfinite(t_mk)) throw ConfigError("t_mK must be a nonnegative temperature");
  if (!(t_min_mk > 0.0) || !std::isfinite(t_min_mk)) throw ConfigError("t_min_mK must be positive");
  if (out.empty()) throw ConfigError("out must name a directory");
}

Vec3 RunConfig::direction() const { return direction_from_angles(theta_deg, phi_deg); }

ThermalModel RunConfig::thermal() const { return {t_mk * 1e-3, t_min_mk * 1e-3}; }

CatalogOptions RunConfig::catalog() const {
  CatalogOptions opts;
  opts.f_min = f_min;
  opts.f_max = f_max;
  return opts;
}

unsigned RunConfig::worker_count() const {
  if (threads > 0) return threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string() + " for digest");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int k = 0; k < len; ++k) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[k]);
  return hex.str();
}

namespace {

// Re-raises a library error with the pipeline stage prepended, keeping its category.
template <class F>
auto stage(const std::string& name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(name + ": " + e.what());
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(name + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(name + ": " + e.what());
  }
}

template <class T>
T value_or(const json& doc, const std::string& key, T fallback) {
  if (!doc.is_object() || !doc.contains(key) || doc[key].is_null()) return fallback;
  try {
    return doc[key].get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + key + "' has the wrong type");
  }
}

json section(const RunConfig& c, const std::string& name) {
  if (!c.document.contains(name)) return json::object();
  if (!c.document[name].is_object()) throw ConfigError("config section '" + name + "' must be an object");
  return c.document[name];
}

GeometryKind parse_geometry(const std::string& s) {
  if (s == "faraday") return GeometryKind::FaradayLike;
  if (s == "voigt") return GeometryKind::VoigtLike;
  throw ConfigError("geometry must be 'faraday' or 'voigt', got '" + s + "'");
}

std::string timestamp() {
  std::time_t now = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) now = static_cast<std::time_t>(std::atoll(epoch));
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json metadata(const RunConfig& c, const std::string& command) {
  json m;
  m["tool"] = "hfepr";
  m["command"] = command;
  m["generated_at"] = timestamp();
  m["spin_system_source"] = c.system_source;
  json inputs = json::array();
  for (const auto& p : c.inputs) inputs.push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}});
  m["inputs"] = inputs;
  return m;
}

json run_settings(const RunConfig& c) {
  return {{"spin_system", spin_system_to_json(c.system)},
          {"b0_theta_deg", c.theta_deg},
          {"b0_phi_deg", c.phi_deg},
          {"geometry", c.geometry == GeometryKind::FaradayLike ? "faraday" : "voigt"},
          {"b_start_mT", c.b_start},
          {"b_stop_mT", c.b_stop},
          {"b_step_mT", c.b_step},
          {"f_min_MHz", c.f_min},
          {"f_max_MHz", c.f_max},
          {"t_mK", c.t_mk},
          {"t_min_mK", c.t_min_mk},
          {"seed", c.seed}};
}

std::ofstream open_output(const fs::path& path) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write output file " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& doc) {
  auto out = open_output(path);
  out << doc.dump(2) << '\n';
}

void write_plot(const fs::path& path, const Plot& plot) {
  auto out = open_output(path);
  write_svg(out, plot);
}

// Reference-free baseline: the trace median, so that dips become positive peaks.
SpectrumTrace subtract_median(const SpectrumTrace& trace) {
  std::vector<double> sorted = trace.amplitudes;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double med = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  SpectrumTrace ref = trace;
  std::fill(ref.amplitudes.begin(), ref.amplitudes.end(), med);
  return subtract_background(trace, ref);
}

std::vector<SpectrumTrace> read_traces(RunConfig& c, const std::vector<fs::path>& files) {
  std::vector<SpectrumTrace> traces;
  for (const auto& f : files) {
    traces.push_back(read_trace(f));
    c.inputs.push_back(f);
  }
  return traces;
}

std::vector<fs::path> file_list(const json& sec, const std::string& key, const fs::path& base) {
  std::vector<fs::path> out;
  for (const auto& s : value_or<std::vector<std::string>>(sec, key, {})) {
    fs::path p(s);
    out.push_back(p.is_relative() ? base / p : p);
  }
  return out;
}

fs::path config_dir(const RunConfig& c) { return value_or<std::string>(c.document, "__dir", "."); }

// Detects peaks in a background-subtracted trace and fits each with a Lorentzian.
std::vector<PeakFit> fit_detected_peaks(const SpectrumTrace& subtracted, double half_width,
                                        const std::optional<double>& prominence, std::ostream& err,
                                        const std::string& label) {
  PeakDetectOptions opts;
  opts.min_prominence = prominence;
  std::vector<PeakFit> fits;
  for (double center : detect_peaks(subtracted, opts)) {
    try {
      fits.push_back(fit_lorentzian(subtracted, {center - half_width, center + half_width}));
    } catch (const Error& e) {
      err << "warning: " << label << ": peak near " << center << " MHz not fitted: " << e.what() << '\n';
    }
  }
  return fits;
}

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
  bool traces = false;
  double fwhm = 1.84;
  double noise_db = 0.0;
  double depth_db = 3.0;
  double grid_step = 0.05;
  bool plot = true;
};

int cmd_simulate(RunConfig& c, const SimulateOptions& o, std::ostream& out) {
  const SpinModel model(c.system);
  const Vec3 dir = c.direction();
  const auto coords = field_grid(c.b_start, c.b_stop, c.b_step);
  const auto geo = ExcitationGeometry::make(dir, c.geometry);
  const auto scan =
      stage("field scan", [&] { return field_scan(model, dir, coords, geo, c.thermal(), c.catalog(), c.worker_count()); });

  std::size_t rows = 0;
  double strongest = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : scan)
    for (const auto& r : p.catalog) {
      ++rows;
      strongest = std::max(strongest, r.intensity);
      lo = std::min(lo, r.frequency);
      hi = std::max(hi, r.frequency);
    }
  {
    auto f = open_output(c.out / "catalog.csv");
    write_catalog_csv(f, scan);
  }
  out << "catalog: " << rows << " transitions over " << scan.size() << " field points -> "
      << (c.out / "catalog.csv").string() << '\n';

  if (o.plot) {
    Plot plot;
    plot.title = "Transition frequencies (" + c.system_source + ")";
    plot.x_label = "B0 (mT)";
    plot.y_label = "frequency (MHz)";
    PlotSeries s;
    for (const auto& p : scan)
      for (const auto& r : p.catalog)
        s.points.push_back({p.coordinate, r.frequency, strongest > 0 ? r.intensity / strongest : 1.0});
    plot.series.push_back(std::move(s));
    write_plot(c.out / "branches.svg", plot);
  }

  if (o.traces && rows > 0) {
    if (!(o.fwhm > 0.0) || !(o.grid_step > 0.0)) throw ConfigError("trace fwhm_MHz and grid_step_MHz must be positive");
    const double margin = 20.0 * o.fwhm;
    const auto grid = uniform_grid(std::max(c.f_min, lo - margin), std::min(c.f_max, hi + margin), o.grid_step);
    const double scale = strongest > 0 ? o.depth_db / strongest : 1.0;
    for (std::size_t k = 0; k < scan.size(); ++k) {
      std::optional<NoiseSpec> noise;
      if (o.noise_db > 0.0) noise = NoiseSpec{o.noise_db / scale, c.seed + k};
      SpectrumTrace t = synthesize(scan[k].catalog, grid, {o.fwhm}, noise, scan[k].coordinate);
      for (double& a : t.amplitudes) a = -20.0 - scale * a;
      t.temperature_mk = c.t_mk;
      char name[64];
      std::snprintf(name, sizeof name, "trace_%04zu.csv", k);
      write_trace(c.out / "traces" / name, t);
    }
    out << "traces: " << scan.size() << " files -> " << (c.out / "traces").string() << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------- fit-zero-field

struct FitOptions {
  std::optional<fs::path> peaks;
  std::vector<fs::path> traces;
  std::vector<fs::path> references;
  std::vector<std::string> free{"a_parallel", "a_perp", "quadrupole_p"};
  bool freeze_p = false;
  std::optional<std::string> initial_preset;
  double gate = 50.0;
  int max_iterations = 500;
  double fit_half_width = 5.0;
  std::optional<double> prominence;
};

int cmd_fit(RunConfig& c, const FitOptions& o, std::ostream& out, std::ostream& err) {
  std::vector<MeasuredPeak> peaks;
  std::vector<PeakReportRow> rows;
  if (o.peaks) {
    c.inputs.push_back(*o.peaks);
    for (const auto& [f, w] : stage("peak list", [&] { return read_peak_list(*o.peaks); })) peaks.push_back({f, w, 0});
  } else if (!o.traces.empty()) {
    const auto traces = stage("ingest", [&] { return read_traces(c, o.traces); });
    const auto refs = stage("ingest", [&] { return read_traces(c, o.references); });
    std::optional<SpectrumTrace> reference;
    if (!refs.empty()) reference = stage("background", [&] { return build_reference(refs, {}); });
    for (std::size_t k = 0; k < traces.size(); ++k) {
      const auto sub = stage("background", [&] {
        return reference ? subtract_background(traces[k], *reference) : subtract_median(traces[k]);
      });
      const auto fits = stage("peak detection",
                              [&] { return fit_detected_peaks(sub, o.fit_half_width, o.prominence, err, o.traces[k].string()); });
      for (const auto& fit : fits) {
        peaks.push_back({fit.center, 1.0, 0});
        rows.push_back({traces[k].field_mt, fit});
      }
    }
  } else {
    throw ConfigError("fit-zero-field needs a peak list (--peaks) or trace files");
  }
  if (peaks.empty()) throw DataError("no peaks detected");
  std::sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) { return a.frequency < b.frequency; });

  FitProblem problem;
  problem.peaks = peaks;
  problem.baseline = o.initial_preset ? preset(*o.initial_preset) : c.system;
  for (const auto& name : o.free) {
    const FitParameter p = parameter_from_name(name);
    if (o.freeze_p && p == FitParameter::QuadrupoleP) continue;
    problem.free_parameters.push_back(p);
  }
  if (o.freeze_p) problem.baseline.quadrupole_p = 0.0;
  problem.fields = {FieldPoint{0.0, c.theta_deg, c.phi_deg}};
  problem.geometry = c.geometry;
  problem.thermal = c.thermal();
  problem.catalog = c.catalog();
  problem.match.gate = o.gate;
  problem.max_iterations = o.max_iterations;
  const FitResult r = stage("parameter fit", [&] { return fit_parameters(problem); });

  json report;
  report["metadata"] = metadata(c, "fit-zero-field");
  report["settings"] = run_settings(c);
  report["settings"]["quadrupole_frozen"] = o.freeze_p;
  json params = json::array();
  for (std::size_t k = 0; k < r.parameters.size(); ++k)
    params.push_back({{"name", parameter_name(r.parameters[k])},
                      {"value", r.values[k]},
                      {"sigma", r.sigmas[k]},
                      {"unit", parameter_unit(r.parameters[k])}});
  report["parameters"] = params;
  report["system"] = spin_system_to_json(r.system);
  json table = json::array();
  std::size_t flagged = 0;
  for (const auto& p : r.peaks) {
    json row{{"measured_MHz", p.measured}, {"weight", p.weight}, {"flagged", p.flagged}};
    row["simulated_MHz"] = p.simulated ? json(*p.simulated) : json(nullptr);
    row["residual_MHz"] = p.residual ? json(*p.residual) : json(nullptr);
    json pairs = json::array();
    for (const auto& [i, f] : p.pairs) pairs.push_back({i, f});
    row["level_pairs"] = pairs;
    table.push_back(row);
    flagged += p.flagged;
  }
  report["assignments"] = table;
  report["flagged_peaks"] = flagged;
  report["residual_rms_MHz"] = r.residual_rms;
  report["chi2"] = r.chi2;
  const auto sym = validate_symmetry_rules(r.system);
  report["symmetry"] = {{"g_par_a_perp_over_g_perp_a_par", sym.ratio},
                        {"a_par_over_g_par_MHz", sym.a_par_over_g_par},
                        {"a_perp_over_g_perp_MHz", sym.a_perp_over_g_perp},
                        {"aj_over_gj_MHz", sym.aj_over_gj}};
  report["convergence"] = {{"converged", r.converged},
                           {"iterations", r.iterations},
                           {"sign_ambiguous", r.sign_ambiguous},
                           {"sign_flipped", r.sign_flipped},
                           {"cost_history", r.cost_history}};
  write_json(c.out / "fit_report.json", report);
  if (!rows.empty()) {
    auto f = open_output(c.out / "peaks.csv");
    write_peak_report(f, rows);
  }

  Plot plot;
  plot.title = "Zero-field peaks and fitted lines";
  plot.x_label = "frequency (MHz)";
  plot.y_label = "relative intensity";
  PlotSeries measured{"measured", "#d62728", {}, false};
  PlotSeries fitted{"fitted", "#1f77b4", {}, false};
  for (const auto& p : r.peaks) {
    measured.points.push_back({p.measured, 1.0, 1.0});
    if (p.simulated) fitted.points.push_back({*p.simulated, 0.9, 1.0});
  }
  plot.series = {measured, fitted};
  write_plot(c.out / "fit_overlay.svg", plot);

  out << std::setprecision(10);
  for (std::size_t k = 0; k < r.parameters.size(); ++k)
    out << parameter_name(r.parameters[k]) << " = " << r.values[k] << " +/- " << r.sigmas[k] << ' '
        << parameter_unit(r.parameters[k]) << '\n';
  out << "residual_rms = " << r.residual_rms << " MHz, flagged peaks: " << flagged << '\n';
  if (r.sign_ambiguous) out << "note: the sign-flipped solution fits equally well; sign pinned by the symmetry rule\n";
  return kOk;
}

// ------------------------------------------------------------------ zefoz

struct ZefozOptions {
  std::optional<double> f0;
  double f0_tolerance = 5.0;
  double tolerance = 1e-3;
  std::vector<double> thetas;
};

void write_zefoz(const fs::path& dir, const DirectionSearch& d, const ZefozOptions& o,
                 const std::string& suffix, std::ostream& out) {
  {
    auto f = open_output(dir / ("zefoz" + suffix + ".csv"));
    write_zefoz_csv(f, d.reports);
  }
  std::optional<std::size_t> chosen;
  if (o.f0) {
    chosen = select_branch(d.branches, *o.f0, o.f0_tolerance);
    if (!chosen) throw DataError("no branch starts within " + std::to_string(o.f0_tolerance) + " MHz of f0");
    auto f = open_output(dir / ("branch" + suffix + ".csv"));
    write_branch_csv(f, d.branches[*chosen]);
  }
  Plot plot;
  plot.title = "Tracked branches, theta = " + std::to_string(d.theta_deg) + " deg";
  plot.x_label = "B0 (mT)";
  plot.y_label = "frequency (MHz)";
  for (std::size_t k = 0; k < d.branches.size(); ++k) {
    PlotSeries s;
    s.label = "branch " + std::to_string(d.branches[k].id);
    s.line = true;
    s.color = chosen && *chosen == k ? "#d62728" : "#7f7f7f";
    for (const auto& smp : d.branches[k].samples) s.points.push_back({smp.field_mt, smp.frequency, 1.0});
    plot.series.push_back(std::move(s));
  }
  write_plot(dir / ("zefoz" + suffix + ".svg"), plot);

  out << std::setprecision(8) << "theta " << d.theta_deg << " deg: " << d.branches.size() << " branches, "
      << d.reports.size() << " turning points\n";
  for (const auto& r : d.reports) {
    if (chosen && r.branch_id != d.branches[*chosen].id) continue;
    out << "  branch " << r.branch_id << " f0 " << r.f0 << " MHz: B* = " << r.b_star << " mT, f* = " << r.f_star
        << " MHz, S2 = " << r.s2 << " MHz/mT^2\n";
  }
}

int cmd_zefoz(RunConfig& c, const ZefozOptions& o, std::ostream& out) {
  const SpinModel model(c.system);
  const auto coords = field_grid(c.b_start, c.b_stop, c.b_step);
  std::vector<std::pair<double, double>> angles;
  if (o.thetas.empty()) angles.emplace_back(c.theta_deg, c.phi_deg);
  for (double t : o.thetas) {
    if (!std::isfinite(t)) throw ConfigError("thetas must be finite");
    angles.emplace_back(t, c.phi_deg);
  }
  // Directions run one after another; each field scan is itself parallel.
  std::vector<DirectionSearch> searches;
  for (const auto& a : angles) {
    auto one = stage("zefoz search", [&] {
      return zefoz_direction_batch(model, {a}, coords, c.geometry, c.thermal(), c.catalog(), o.tolerance,
                                   c.worker_count());
    });
    searches.push_back(std::move(one.front()));
  }
  if (searches.size() == 1) {
    write_zefoz(c.out, searches.front(), o, "", out);
  } else {
    for (const auto& d : searches) {
      char suffix[48];
      std::snprintf(suffix, sizeof suffix, "_theta_%g", d.theta_deg);
      write_zefoz(c.out, d, o, suffix, out);
    }
  }
  return kOk;
}

// -------------------------------------------------------------- calibrate

struct CalibrateOptions {
  std::vector<fs::path> traces;
  double window = 20.0;  // half-width around the strongest dip, MHz
};

int cmd_calibrate(RunConfig& c, const CalibrateOptions& o, std::ostream& out, std::ostream& err) {
  if (o.traces.empty()) throw ConfigError("calibrate needs DPPH trace files");
  struct Row {
    std::string file;
    double nominal;
    PeakFit fit;
    double calibrated;
  };
  std::vector<Row> rows;
  json warnings = json::array();
  for (const auto& path : o.traces) {
    const SpectrumTrace trace = read_trace(path);
    c.inputs.push_back(path);
    auto warn = [&](const std::string& why) {
      const std::string msg = path.generic_string() + ": " + why +
                              "; file skipped (the I = 0 erbium lines can serve as a fallback field reference)";
      err << "warning: " << msg << '\n';
      warnings.push_back(msg);
    };
    const SpectrumTrace sub = subtract_median(trace);
    const auto prom = peak_prominences(sub);
    const double noise = robust_noise(sub);
    auto best = std::max_element(prom.begin(), prom.end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; });
    if (best == prom.end() || !(best->second > 5.0 * noise)) {
      warn("no DPPH line found");
      continue;
    }
    const double center = sub.frequencies[best->first];
    try {
      const PeakFit fit = fit_lorentzian(sub, {center - o.window, center + o.window});
      if (!(fit.amplitude > 0.0)) throw DataError("fitted line is not a dip");
      rows.push_back({path.generic_string(), trace.field_mt, fit, calibrate_field(fit)});
    } catch (const Error& e) {
      warn(std::string("DPPH line not fitted: ") + e.what());
    }
  }
  if (rows.empty()) throw DataError("no DPPH line could be fitted");

  double slope = rows.front().calibrated / rows.front().nominal, intercept = 0.0;
  if (rows.size() >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& r : rows) {
      sx += r.nominal;
      sy += r.calibrated;
      sxx += r.nominal * r.nominal;
      sxy += r.nominal * r.calibrated;
    }
    const double n = static_cast<double>(rows.size());
    const double den = n * sxx - sx * sx;
    if (den != 0.0) {
      slope = (n * sxy - sx * sy) / den;
      intercept = (sy - slope * sx) / n;
    }
  }

  {
    auto f = open_output(c.out / "calibration.csv");
    f << "file,nominal_mT,dpph_center_MHz,fwhm_MHz,calibrated_mT\n";
    char buf[512];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.9f\n", r.file.c_str(), r.nominal, r.fit.center, r.fit.fwhm,
                    r.calibrated);
      f << buf;
    }
  }
  json report;
  report["metadata"] = metadata(c, "calibrate");
  report["dpph_g"] = kDpphG;
  report["map"] = {{"slope", slope}, {"intercept_mT", intercept}};
  json table = json::array();
  for (const auto& r : rows)
    table.push_back({{"file", r.file},
                     {"nominal_mT", r.nominal},
                     {"dpph_center_MHz", r.fit.center},
                     {"fwhm_MHz", r.fit.fwhm},
                     {"calibrated_mT", r.calibrated}});
  report["points"] = table;
  report["warnings"] = warnings;
  write_json(c.out / "calibration.json", report);
  out << std::setprecision(10) << "calibrated " << rows.size() << " of " << o.traces.size()
      << " traces: B_cal = " << slope << " * B_nom + " << intercept << " mT\n";
  return kOk;
}

// ---------------------------------------------------------------- thermal

struct ThermalOptions {
  std::vector<fs::path> traces;
  std::vector<fs::path> references;
  std::vector<double> window;  // lo, hi MHz
};

int cmd_thermal(RunConfig& c, const ThermalOptions& o, std::ostream& out) {
  if (o.window.size() != 2 || !(o.window[0] < o.window[1])) throw ConfigError("window must be two ascending frequencies");
  const FrequencyInterval window{o.window[0], o.window[1]};
  const auto traces = stage("ingest", [&] { return read_traces(c, o.traces); });
  if (traces.size() < 2) throw ConfigError("thermal needs at least two trace files");
  const auto refs = stage("ingest", [&] { return read_traces(c, o.references); });
  std::optional<SpectrumTrace> reference;
  if (!refs.empty()) reference = stage("background", [&] { return build_reference(refs, {}); });

  std::vector<std::pair<double, SpectrumTrace>> series;
  for (std::size_t k = 0; k < traces.size(); ++k) {
    if (!traces[k].temperature_mk) throw DataError(o.traces[k].string() + ": missing '# temperature_mK=' line");
    series.emplace_back(*traces[k].temperature_mk, stage("background", [&] {
                          return reference ? subtract_background(traces[k], *reference) : subtract_median(traces[k]);
                        }));
  }
  std::stable_sort(series.begin(), series.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const auto areas = stage("lineshape fit", [&] { return peak_area_vs_temperature(series, window); });

  const SpinModel model(c.system);
  const double field = series.front().second.field_mt;
  const EigenSystem eig = model.solve(FieldVector::from_vec(field * c.direction()));
  const auto catalog = transition_catalog(eig, model, ExcitationGeometry::make(c.direction(), c.geometry), c.thermal(),
                                          c.catalog());
  const TransitionRecord* line = nullptr;
  for (const auto& r : catalog)
    if (window.contains(r.frequency) && (!line || r.intensity > line->intensity)) line = &r;
  if (!line) throw DataError("no simulated transition inside the analysis window");

  std::vector<double> temps;
  for (const auto& [t, trace] : series) temps.push_back(t * 1e-3);
  const auto p_eff = polarisation_curve(eig, line->initial_index, line->final_index, temps, c.t_min_mk * 1e-3);
  const auto p_sensor = polarisation_curve(eig, line->initial_index, line->final_index, temps, std::nullopt);
  const double misfit_eff = normalized_misfit(areas, p_eff);
  const double misfit_sensor = normalized_misfit(areas, p_sensor);

  {
    auto f = open_output(c.out / "thermal.csv");
    f << "temperature_mK,normalized_area,ps_teff,ps_sensor,error\n";
    char buf[256];
    for (std::size_t k = 0; k < areas.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.6f,", areas[k].temperature);
      f << buf;
      if (areas[k].normalized_area) {
        std::snprintf(buf, sizeof buf, "%.9f", *areas[k].normalized_area);
        f << buf;
      }
      std::snprintf(buf, sizeof buf, ",%.9f,%.9f,", p_eff[k], p_sensor[k]);
      f << buf << '"' << areas[k].error << "\"\n";
    }
  }
  json report;
  report["metadata"] = metadata(c, "thermal");
  report["line"] = {{"frequency_MHz", line->frequency},
                    {"initial_index", line->initial_index},
                    {"final_index", line->final_index}};
  report["t_min_mK"] = c.t_min_mk;
  report["misfit_effective_temperature"] = misfit_eff;
  report["misfit_sensor_temperature"] = misfit_sensor;
  write_json(c.out / "thermal.json", report);

  Plot plot;
  plot.title = "Normalized peak area vs temperature";
  plot.x_label = "T (mK)";
  plot.y_label = "normalized area";
  PlotSeries measured{"area", "#d62728", {}, false}, eff{"Ps(Teff)", "#1f77b4", {}, true},
      sensor{"Ps(T)", "#7f7f7f", {}, true};
  for (std::size_t k = 0; k < areas.size(); ++k) {
    if (areas[k].normalized_area) measured.points.push_back({areas[k].temperature, *areas[k].normalized_area, 1.0});
    eff.points.push_back({areas[k].temperature, p_eff[k], 1.0});
    sensor.points.push_back({areas[k].temperature, p_sensor[k], 1.0});
  }
  plot.series = {measured, eff, sensor};
  write_plot(c.out / "thermal.svg", plot);
  out << std::setprecision(6) << "line " << line->frequency << " MHz: misfit vs Ps(Teff) " << misfit_eff
      << ", vs Ps(T) " << misfit_sensor << '\n';
  return kOk;
}

// ------------------------------------------------------------- background

struct BackgroundOptions {
  std::vector<fs::path> traces;
  std::vector<std::string> excludes;  // "index:lo:hi"
  double fit_half_width = 5.0;
  std::optional<double> prominence;
};

int cmd_background(RunConfig& c, const BackgroundOptions& o, const json& sec, std::ostream& out, std::ostream& err) {
  const auto traces = stage("ingest", [&] { return read_traces(c, o.traces); });
  if (traces.empty()) throw ConfigError("background needs trace files");
  std::vector<std::vector<FrequencyInterval>> exclusions(traces.size());
  if (sec.contains("exclusions")) {
    const auto ex = value_or<std::vector<std::vector<std::vector<double>>>>(sec, "exclusions", {});
    if (ex.size() != traces.size()) throw ConfigError("exclusions must list one window set per trace");
    for (std::size_t k = 0; k < ex.size(); ++k)
      for (const auto& w : ex[k]) {
        if (w.size() != 2) throw ConfigError("each exclusion window is [lo, hi]");
        exclusions[k].push_back({w[0], w[1]});
      }
  }
  for (const auto& spec : o.excludes) {
    unsigned idx = 0;
    double lo = 0, hi = 0;
    if (std::sscanf(spec.c_str(), "%u:%lf:%lf", &idx, &lo, &hi) != 3 || idx >= traces.size() || !(lo < hi))
      throw ConfigError("bad --exclude '" + spec + "', expected index:lo_MHz:hi_MHz");
    exclusions[idx].push_back({lo, hi});
  }
  const auto reference = stage("background", [&] { return build_reference(traces, exclusions); });
  write_trace(c.out / "reference.csv", reference);

  std::vector<PeakReportRow> rows;
  for (std::size_t k = 0; k < traces.size(); ++k) {
    const auto sub = stage("background", [&] { return subtract_background(traces[k], reference); });
    write_trace(c.out / ("subtracted_" + o.traces[k].stem().string() + ".csv"), sub);
    for (const auto& fit :
         stage("peak detection", [&] { return fit_detected_peaks(sub, o.fit_half_width, o.prominence, err, o.traces[k].string()); }))
      rows.push_back({traces[k].field_mt, fit});
  }
  auto f = open_output(c.out / "peaks.csv");
  write_peak_report(f, rows);
  out << "reference from " << traces.size() << " traces; " << rows.size() << " peaks fitted\n";
  return kOk;
}

// ---------------------------------------------------------------- parsing

struct GlobalFlags {
  std::string config, preset, geometry, out;
  double theta = 0, phi = 0, b_start = 0, b_stop = 0, b_step = 0, f_min = 0, f_max = 0, t_mk = 0, t_min_mk = 0;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::map<std::string, CLI::Option*> given;
  bool has(const std::string& name) const {
    auto it = given.find(name);
    return it != given.end() && it->second->count() > 0;
  }
};

RunConfig make_config(const GlobalFlags& g) {
  RunConfig c;
  json doc = json::object();
  fs::path dir = ".";
  if (g.has("config")) {
    std::ifstream in(g.config);
    if (!in) throw ConfigError("cannot open config file " + g.config);
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + g.config + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
    c.inputs.push_back(g.config);
    dir = fs::path(g.config).parent_path();
    if (dir.empty()) dir = ".";
  }

  if (g.has("preset")) {
    c.system = preset(g.preset);
    c.system_source = g.preset;
  } else if (doc.contains("spin_system")) {
    const json& s = doc["spin_system"];
    if (s.is_string()) {
      fs::path p(s.get<std::string>());
      if (p.is_relative()) p = dir / p;
      c.system = load_spin_system(p);
      c.system_source = p.generic_string();
      c.inputs.push_back(p);
    } else if (s.is_object()) {
      c.system = spin_system_from_json(s);
      c.system_source = "inline";
    } else {
      throw ConfigError("spin_system must be a file path or an object");
    }
  } else {
    c.system_source = value_or<std::string>(doc, "preset", "this_work");
    c.system = preset(c.system_source);
  }

  auto pick = [&](const std::string& flag, double flag_value, const std::string& key, double fallback) {
    return g.has(flag) ? flag_value : value_or<double>(doc, key, fallback);
  };
  c.theta_deg = pick("b0-theta", g.theta, "b0_theta_deg", c.theta_deg);
  c.phi_deg = pick("b0-phi", g.phi, "b0_phi_deg", c.phi_deg);
  c.b_start = pick("b-start", g.b_start, "b_start_mT", c.b_start);
  c.b_stop = pick("b-stop", g.b_stop, "b_stop_mT", c.b_stop);
  c.b_step = pick("b-step", g.b_step, "b_step_mT", c.b_step);
  c.f_min = pick("f-min", g.f_min, "f_min_MHz", c.f_min);
  c.f_max = pick("f-max", g.f_max, "f_max_MHz", c.f_max);
  c.t_mk = pick("t-mk", g.t_mk, "t_mK", c.t_mk);
  c.t_min_mk = pick("t-min-mk", g.t_min_mk, "t_min_mK", c.t_min_mk);
  c.geometry = parse_geometry(g.has("geometry") ? g.geometry : value_or<std::string>(doc, "geometry", "voigt"));
  c.out = g.has("out") ? fs::path(g.out) : fs::path(value_or<std::string>(doc, "out", "out"));
  c.seed = g.has("seed") ? g.seed : value_or<std::uint64_t>(doc, "seed", c.seed);
  c.threads = g.has("threads") ? g.threads : value_or<unsigned>(doc, "threads", 0u);
  doc["__dir"] = dir.generic_string();
  c.document = doc;
  c.validate();
  return c;
}

template <class T>
void override_from(const json& sec, const std::string& key, CLI::Option* opt, T& target) {
  if (opt->count() == 0) target = value_or<T>(sec, key, target);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spin-Hamiltonian EPR simulation, fitting and clock-transition search"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  g.given["config"] = app.add_option("--config", g.config, "JSON run configuration");
  g.given["preset"] = app.add_option("--preset", g.preset, "spin-system preset name");
  g.given["b0-theta"] = app.add_option("--b0-theta", g.theta, "B0 polar angle from c (deg)");
  g.given["b0-phi"] = app.add_option("--b0-phi", g.phi, "B0 azimuth (deg)");
  g.given["geometry"] = app.add_option("--geometry", g.geometry, "faraday|voigt");
  g.given["b-start"] = app.add_option("--b-start", g.b_start, "first field (mT)");
  g.given["b-stop"] = app.add_option("--b-stop", g.b_stop, "last field (mT)");
  g.given["b-step"] = app.add_option("--b-step", g.b_step, "field step (mT)");
  g.given["f-min"] = app.add_option("--f-min", g.f_min, "lower frequency bound (MHz)");
  g.given["f-max"] = app.add_option("--f-max", g.f_max, "upper frequency bound (MHz)");
  g.given["t-mk"] = app.add_option("--t-mk", g.t_mk, "sensor temperature (mK)");
  g.given["t-min-mk"] = app.add_option("--t-min-mk", g.t_min_mk, "saturation spin temperature (mK)");
  g.given["out"] = app.add_option("--out", g.out, "output directory");
  g.given["seed"] = app.add_option("--seed", g.seed, "noise seed");
  g.given["threads"] = app.add_option("--threads", g.threads, "worker threads (0: all processors)");

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "field scan -> transition catalog, plot, optional traces");
  auto* o_traces = simulate->add_flag("--traces", sim.traces, "write synthetic trace files");
  auto* o_fwhm = simulate->add_option("--fwhm", sim.fwhm, "synthetic linewidth (MHz)");
  auto* o_noise = simulate->add_option("--noise-db", sim.noise_db, "Gaussian noise sigma (dB)");
  auto* o_grid = simulate->add_option("--grid-step", sim.grid_step, "trace frequency step (MHz)");
  bool no_plot = false;
  simulate->add_flag("--no-plot", no_plot, "skip the SVG plot");

  FitOptions fit;
  std::string peaks_file, initial;
  std::string free_list;
  auto* fitcmd = app.add_subcommand("fit-zero-field", "fit A_par, A_perp, P to a zero-field spectrum");
  auto* o_peaks = fitcmd->add_option("--peaks", peaks_file, "peak list CSV (frequency_MHz[,weight])");
  fitcmd->add_option("traces", fit.traces, "zero-field trace files");
  fitcmd->add_option("--reference", fit.references, "reference traces for background subtraction");
  auto* o_free = fitcmd->add_option("--free", free_list, "comma-separated free parameters");
  auto* o_freeze = fitcmd->add_flag("--freeze-p", fit.freeze_p, "hold the quadrupole term at zero");
  auto* o_initial = fitcmd->add_option("--initial-preset", initial, "preset used as the starting point");
  auto* o_gate = fitcmd->add_option("--gate", fit.gate, "assignment gate (MHz)");

  ZefozOptions zf;
  double f0 = 0.0;
  auto* zcmd = app.add_subcommand("zefoz", "track branches and locate zero first-order Zeeman points");
  auto* o_f0 = zcmd->add_option("--f0", f0, "zero-field frequency of the branch to export (MHz)");
  auto* o_tol = zcmd->add_option("--tolerance", zf.tolerance, "|S1| tolerance (MHz/mT)");
  auto* o_thetas = zcmd->add_option("--thetas", zf.thetas, "batch of polar angles (deg)")->delimiter(',');

  CalibrateOptions cal;
  auto* ccmd = app.add_subcommand("calibrate", "field calibration from DPPH traces");
  ccmd->add_option("traces", cal.traces, "DPPH trace files");
  auto* o_window = ccmd->add_option("--window", cal.window, "fit half-width around the dip (MHz)");

  ThermalOptions th;
  auto* tcmd = app.add_subcommand("thermal", "peak area vs temperature against the polarisation model");
  tcmd->add_option("traces", th.traces, "trace files carrying temperature_mK");
  tcmd->add_option("--reference", th.references, "reference traces");
  auto* o_twin = tcmd->add_option("--window", th.window, "analysis window lo hi (MHz)")->expected(2);

  BackgroundOptions bg;
  auto* bcmd = app.add_subcommand("background", "build a reference from traces and subtract it");
  bcmd->add_option("traces", bg.traces, "trace files");
  bcmd->add_option("--exclude", bg.excludes, "exclusion window index:lo_MHz:hi_MHz (repeatable)");

  std::vector<std::string> argv_store = args;
  if (argv_store.empty()) argv_store.push_back("hfepr");
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kOk : kConfigError;
    }

    RunConfig c = make_config(g);
    const fs::path base = config_dir(c);
    if (simulate->parsed()) {
      const json sec = section(c, "simulate");
      override_from(sec, "traces", o_traces, sim.traces);
      override_from(sec, "fwhm_MHz", o_fwhm, sim.fwhm);
      override_from(sec, "noise_db", o_noise, sim.noise_db);
      override_from(sec, "grid_step_MHz", o_grid, sim.grid_step);
      sim.plot = !no_plot && value_or<bool>(sec, "plot", true);
      return cmd_simulate(c, sim, out);
    }
    if (fitcmd->parsed()) {
      const json sec = section(c, "fit");
      if (o_peaks->count()) fit.peaks = fs::path(peaks_file);
      else if (const auto p = value_or<std::string>(sec, "peaks", ""); !p.empty())
        fit.peaks = fs::path(p).is_relative() ? base / p : fs::path(p);
      if (fit.traces.empty()) fit.traces = file_list(sec, "traces", base);
      if (fit.references.empty()) fit.references = file_list(sec, "references", base);
      if (o_free->count()) {
        fit.free.clear();
        std::stringstream ss(free_list);
        for (std::string item; std::getline(ss, item, ',');)
          if (!item.empty()) fit.free.push_back(item);
      } else {
        fit.free = value_or<std::vector<std::string>>(sec, "free", fit.free);
      }
      override_from(sec, "freeze_p", o_freeze, fit.freeze_p);
      override_from(sec, "gate_MHz", o_gate, fit.gate);
      fit.max_iterations = value_or<int>(sec, "max_iterations", fit.max_iterations);
      if (fit.max_iterations < 1) throw ConfigError("fit.max_iterations must be at least 1");
      if (o_initial->count()) fit.initial_preset = initial;
      else if (sec.contains("initial_preset")) fit.initial_preset = value_or<std::string>(sec, "initial_preset", "");
      return cmd_fit(c, fit, out, err);
    }
    if (zcmd->parsed()) {
      const json sec = section(c, "zefoz");
      if (o_f0->count()) zf.f0 = f0;
      else if (sec.contains("f0_MHz")) zf.f0 = value_or<double>(sec, "f0_MHz", 0.0);
      override_from(sec, "tolerance", o_tol, zf.tolerance);
      override_from(sec, "thetas_deg", o_thetas, zf.thetas);
      zf.f0_tolerance = value_or<double>(sec, "f0_tolerance_MHz", zf.f0_tolerance);
      return cmd_zefoz(c, zf, out);
    }
    if (ccmd->parsed()) {
      const json sec = section(c, "calibrate");
      if (cal.traces.empty()) cal.traces = file_list(sec, "traces", base);
      override_from(sec, "window_MHz", o_window, cal.window);
      return cmd_calibrate(c, cal, out, err);
    }
    if (tcmd->parsed()) {
      const json sec = section(c, "thermal");
      if (th.traces.empty()) th.traces = file_list(sec, "traces", base);
      if (th.references.empty()) th.references = file_list(sec, "references", base);
      override_from(sec, "window_MHz", o_twin, th.window);
      return cmd_thermal(c, th, out);
    }
    if (bcmd->parsed()) {
      const json sec = section(c, "background");
      if (bg.traces.empty()) bg.traces = file_list(sec, "traces", base);
      return cmd_background(c, bg, sec, out, err);
    }
    throw ConfigError("no subcommand given");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ConvergenceError& e) {
    err << "convergence failure: " << e.what() << '\n';
    return kConvergenceError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUnexpected;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace hfepr::cli
