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
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfepr/spin_core.hpp"
#include "hfepr/transitions.hpp"

namespace hfepr::cli {

enum ExitCode { kOk = 0, kUnexpected = 1, kConfigError = 2, kDataError = 3, kConvergenceError = 4 };

// Settings shared by every subcommand. Values come from the JSON config and
// are overridden by command-line flags.
struct RunConfig {
  SpinSystem system;
  std::string system_source;  // preset name or spin-system file
  double theta_deg = 0.0;     // B0 polar angle from c
  double phi_deg = 0.0;
  GeometryKind geometry = GeometryKind::VoigtLike;
  double b_start = 0.0;  // mT
  double b_stop = 50.0;
  double b_step = 0.1;
  double f_min = 0.0;  // MHz
  double f_max = 10000.0;
  double t_mk = 20.0;
  double t_min_mk = 20.0;
  std::filesystem::path out = "out";
  std::uint64_t seed = 1;
  unsigned threads = 0;  // 0: one per logical processor
  nlohmann::json document = nlohmann::json::object();
  std::vector<std::filesystem::path> inputs;  // digested into report metadata

  /// Throws ConfigError naming the offending field.
  void validate() const;
  Vec3 direction() const;
  ThermalModel thermal() const;
  CatalogOptions catalog() const;
  unsigned worker_count() const;
};

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Runs the tool with argv-style arguments (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace hfepr::cli
