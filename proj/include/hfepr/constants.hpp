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

namespace hfepr {

/// Bohr magneton over Planck constant, MHz per mT (CODATA 2018).
inline constexpr double kBohrMhzPerMt = 13.996244936;

/// h·(1 MHz)/k_B in kelvin.
inline constexpr double kKelvinPerMhz = 4.799243e-5;

/// Isotropic g-factor of the DPPH field reference.
inline constexpr double kDpphG = 2.0037;

/// Free-ion erbium hyperfine constant and Lande factor of the J = 15/2 manifold.
inline constexpr double kErbiumAJMhz = -125.3;
inline constexpr double kErbiumGJ = 6.0 / 5.0;

inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

}  // namespace hfepr
