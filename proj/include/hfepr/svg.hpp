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

#include <iosfwd>
#include <string>
#include <vector>

namespace hfepr {

// Minimal SVG plots. Plots are a convenience; CSV/JSON outputs carry the data.
struct PlotPoint {
  double x = 0.0;
  double y = 0.0;
  double shade = 1.0;  // 0..1, mapped to marker opacity
};

struct PlotSeries {
  std::string label;
  std::string color = "#1f77b4";
  std::vector<PlotPoint> points;
  bool line = false;  // connect points instead of drawing markers
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  int width = 800;
  int height = 560;
};

void write_svg(std::ostream& out, const Plot& plot);

}  // namespace hfepr
