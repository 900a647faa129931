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
#include <string>
#include <vector>

#include <json.hpp>

#include "hfepr/spin_core.hpp"

namespace hfepr {

/// Parses the spin-system document. Keys: electron_spin, nuclear_spin, g_parallel,
/// g_perp, a_parallel_mhz, a_perp_mhz, quadrupole_p_mhz, quadrupole_form.
SpinSystem spin_system_from_json(const nlohmann::json& doc);
nlohmann::json spin_system_to_json(const SpinSystem& system);
SpinSystem load_spin_system(const std::filesystem::path& path);

/// Published parameter sets for Er:LiYF4 with complete hyperfine data, plus
/// "er_i0", the even-isotope (I = 0) companion. Throws ConfigError for unknown names.
SpinSystem preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace hfepr
