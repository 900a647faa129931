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

#include "hfepr/presets.hpp"

#include <fstream>
#include <map>

#include "hfepr/errors.hpp"

namespace hfepr {

namespace {

SpinSystem axial(double g_par, double g_perp, double a_par, double a_perp, double p) {
  SpinSystem s;
  s.g_parallel = g_par;
  s.g_perp = g_perp;
  s.a_parallel = a_par;
  s.a_perp = a_perp;
  s.quadrupole_p = p;
  return s;
}

const std::map<std::string, SpinSystem>& table() {
  static const std::map<std::string, SpinSystem> presets = [] {
    std::map<std::string, SpinSystem> m;
    m["sattler1971"] = axial(3.137, 8.105, 325.8, 840.0, 0.0);
    m["guedes2002"] = axial(3.130, 7.929, 325.0, 816.0, 0.0);
    // Published in 1e4 cm^-1, interpreted as MHz.
    m["wu2004"] = axial(3.141, 7.932, 334.0, 824.0, 0.0);
    m["lisin2019"] = axial(3.137, 8.1, -325.8, 840.0, 0.0);
    m["this_work"] = axial(3.137, 8.105, -319.6, -844.2, -7.184);
    SpinSystem even = axial(3.137, 8.105, 0.0, 0.0, 0.0);
    even.nuclear_spin = 0.0;
    m["er_i0"] = even;
    return m;
  }();
  return presets;
}

template <typename T>
T required(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key)) throw ConfigError(std::string("spin system is missing key '") + key + "'");
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("spin system key '") + key + "' has the wrong type");
  }
}

}  // namespace

SpinSystem spin_system_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("spin system document must be a JSON object");
  SpinSystem s;
  s.electron_spin = required<double>(doc, "electron_spin");
  s.nuclear_spin = required<double>(doc, "nuclear_spin");
  s.g_parallel = required<double>(doc, "g_parallel");
  s.g_perp = required<double>(doc, "g_perp");
  s.a_parallel = required<double>(doc, "a_parallel_mhz");
  s.a_perp = required<double>(doc, "a_perp_mhz");
  s.quadrupole_p = required<double>(doc, "quadrupole_p_mhz");
  const auto form = required<std::string>(doc, "quadrupole_form");
  if (form == "traceless")
    s.quadrupole_form = QuadrupoleForm::Traceless;
  else if (form == "verbatim")
    s.quadrupole_form = QuadrupoleForm::Verbatim;
  else
    throw ConfigError("quadrupole_form must be \"traceless\" or \"verbatim\", got \"" + form + "\"");
  s.validate();
  return s;
}

nlohmann::json spin_system_to_json(const SpinSystem& s) {
  return {{"electron_spin", s.electron_spin},
          {"nuclear_spin", s.nuclear_spin},
          {"g_parallel", s.g_parallel},
          {"g_perp", s.g_perp},
          {"a_parallel_mhz", s.a_parallel},
          {"a_perp_mhz", s.a_perp},
          {"quadrupole_p_mhz", s.quadrupole_p},
          {"quadrupole_form", s.quadrupole_form == QuadrupoleForm::Traceless ? "traceless" : "verbatim"}};
}

SpinSystem load_spin_system(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spin system file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("spin system file " + path.string() + " is not valid JSON: " + e.what());
  }
  return spin_system_from_json(doc);
}

SpinSystem preset(const std::string& name) {
  const auto& m = table();
  auto it = m.find(name);
  if (it == m.end()) throw ConfigError("unknown preset '" + name + "'");
  return it->second;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : table()) names.push_back(k);
  return names;
}

}  // namespace hfepr
