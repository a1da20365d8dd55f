// Copyright 2026 The DACT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal static PNG charts: line charts, grouped bars and scatter plots
// with a built-in bitmap font for labels.

#ifndef DACT_PLOT_HPP_
#define DACT_PLOT_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dact::plot {

using Color = std::array<std::uint8_t, 3>;

// Distinct colors for series and categories; wraps around.
Color palette(std::size_t i);

class Canvas {
 public:
  Canvas(int width, int height, Color background = {255, 255, 255});

  int width() const { return width_; }
  int height() const { return height_; }
  void set(int x, int y, Color c);
  Color get(int x, int y) const;
  void line(int x0, int y0, int x1, int y1, Color c);
  void fill_rect(int x0, int y0, int x1, int y1, Color c);
  void dot(int x, int y, int radius, Color c);
  // 5x7 glyphs scaled by an integer factor; unknown characters draw a box.
  void text(int x, int y, const std::string& s, Color c, int scale = 1);
  void save_png(const std::filesystem::path& path) const;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> pixels_;
};

struct Series {
  std::string name;
  std::vector<double> values;  // one per x label
};

void line_chart(const std::string& title, const std::vector<std::string>& x_labels, const std::vector<Series>& series,
                const std::filesystem::path& path);

// One group per x label, one bar per series inside each group.
void bar_chart(const std::string& title, const std::vector<std::string>& x_labels, const std::vector<Series>& series,
               const std::filesystem::path& path);

struct Point {
  double x = 0.0;
  double y = 0.0;
  int category = 0;
};

void scatter_plot(const std::string& title, const std::vector<Point>& points, const std::filesystem::path& path);

}  // namespace dact::plot

#endif  // DACT_PLOT_HPP_
