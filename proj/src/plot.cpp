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

#include "dact/plot.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dact/common.hpp"

namespace dact::plot {

namespace {

// Rows top to bottom, low 5 bits per row, MSB on the left.
const std::map<char, std::array<std::uint8_t, 7>>& font() {
  static const std::map<char, std::array<std::uint8_t, 7>> glyphs = {
      {' ', {0, 0, 0, 0, 0, 0, 0}},
      {'0', {14, 17, 19, 21, 25, 17, 14}},
      {'1', {4, 12, 4, 4, 4, 4, 14}},
      {'2', {14, 17, 1, 2, 4, 8, 31}},
      {'3', {31, 2, 4, 2, 1, 17, 14}},
      {'4', {2, 6, 10, 18, 31, 2, 2}},
      {'5', {31, 16, 30, 1, 1, 17, 14}},
      {'6', {6, 8, 16, 30, 17, 17, 14}},
      {'7', {31, 1, 2, 4, 8, 8, 8}},
      {'8', {14, 17, 17, 14, 17, 17, 14}},
      {'9', {14, 17, 17, 15, 1, 2, 12}},
      {'A', {14, 17, 17, 31, 17, 17, 17}},
      {'B', {30, 17, 17, 30, 17, 17, 30}},
      {'C', {14, 17, 16, 16, 16, 17, 14}},
      {'D', {28, 18, 17, 17, 17, 18, 28}},
      {'E', {31, 16, 16, 30, 16, 16, 31}},
      {'F', {31, 16, 16, 30, 16, 16, 16}},
      {'G', {14, 17, 16, 23, 17, 17, 15}},
      {'H', {17, 17, 17, 31, 17, 17, 17}},
      {'I', {14, 4, 4, 4, 4, 4, 14}},
      {'J', {7, 2, 2, 2, 2, 18, 12}},
      {'K', {17, 18, 20, 24, 20, 18, 17}},
      {'L', {16, 16, 16, 16, 16, 16, 31}},
      {'M', {17, 27, 21, 21, 17, 17, 17}},
      {'N', {17, 17, 25, 21, 19, 17, 17}},
      {'O', {14, 17, 17, 17, 17, 17, 14}},
      {'P', {30, 17, 17, 30, 16, 16, 16}},
      {'Q', {14, 17, 17, 17, 21, 18, 13}},
      {'R', {30, 17, 17, 30, 20, 18, 17}},
      {'S', {15, 16, 16, 14, 1, 1, 30}},
      {'T', {31, 4, 4, 4, 4, 4, 4}},
      {'U', {17, 17, 17, 17, 17, 17, 14}},
      {'V', {17, 17, 17, 17, 17, 10, 4}},
      {'W', {17, 17, 17, 21, 21, 21, 10}},
      {'X', {17, 17, 10, 4, 10, 17, 17}},
      {'Y', {17, 17, 17, 10, 4, 4, 4}},
      {'Z', {31, 1, 2, 4, 8, 16, 31}},
      {'.', {0, 0, 0, 0, 0, 12, 12}},
      {',', {0, 0, 0, 0, 12, 4, 8}},
      {'-', {0, 0, 0, 31, 0, 0, 0}},
      {'+', {0, 4, 4, 31, 4, 4, 0}},
      {'_', {0, 0, 0, 0, 0, 0, 31}},
      {':', {0, 12, 12, 0, 12, 12, 0}},
      {'/', {1, 1, 2, 4, 8, 16, 16}},
      {'@', {14, 17, 23, 21, 23, 16, 15}},
      {'(', {2, 4, 8, 8, 8, 4, 2}},
      {')', {8, 4, 2, 2, 2, 4, 8}},
      {'=', {0, 0, 31, 0, 31, 0, 0}},
  };
  return glyphs;
}

std::string format_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

struct Frame {
  int left = 70, right = 170, top = 40, bottom = 50;
  int width = 760, height = 460;
  double lo = 0.0, hi = 1.0;

  int x0() const { return left; }
  int x1() const { return width - right; }
  int y0() const { return top; }
  int y1() const { return height - bottom; }
  int y_of(double v) const {
    const double t = (v - lo) / (hi - lo);
    return y1() - static_cast<int>(std::lround(t * (y1() - y0())));
  }
};

void draw_axes(Canvas& c, const Frame& f, const std::string& title) {
  const Color ink{40, 40, 40};
  const Color grid{225, 225, 225};
  c.text(f.left, 12, title, ink, 2);
  for (int t = 0; t <= 4; ++t) {
    const double v = f.lo + (f.hi - f.lo) * t / 4.0;
    const int y = f.y_of(v);
    c.line(f.x0(), y, f.x1(), y, grid);
    c.text(8, y - 3, format_tick(v), ink);
  }
  c.line(f.x0(), f.y0(), f.x0(), f.y1(), ink);
  c.line(f.x0(), f.y1(), f.x1(), f.y1(), ink);
}

void draw_legend(Canvas& c, const Frame& f, const std::vector<Series>& series) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const int y = f.y0() + 10 + static_cast<int>(i) * 16;
    c.fill_rect(f.x1() + 12, y, f.x1() + 22, y + 8, palette(i));
    c.text(f.x1() + 28, y + 1, series[i].name, {40, 40, 40});
  }
}

void value_range(const std::vector<Series>& series, double& lo, double& hi, bool include_zero) {
  lo = include_zero ? 0.0 : 1e300;
  hi = include_zero ? 0.0 : -1e300;
  for (const auto& s : series) {
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (lo > hi) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-9) {
    hi += 0.5;
    lo -= include_zero && lo >= 0.0 ? 0.0 : 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  hi += pad;
  if (!include_zero || lo < 0.0) lo -= pad;
}

}  // namespace

Color palette(std::size_t i) {
  static const Color colors[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                                 {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
                                 {188, 189, 34},  {23, 190, 207}};
  return colors[i % (sizeof(colors) / sizeof(colors[0]))];
}

Canvas::Canvas(int width, int height, Color background)
    : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height * 3) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("canvas size must be positive");
  for (std::size_t i = 0; i < pixels_.size(); i += 3) {
    pixels_[i] = background[0];
    pixels_[i + 1] = background[1];
    pixels_[i + 2] = background[2];
  }
}

void Canvas::set(int x, int y, Color c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  pixels_[i] = c[0];
  pixels_[i + 1] = c[1];
  pixels_[i + 2] = c[2];
}

Color Canvas::get(int x, int y) const {
  const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
}

void Canvas::line(int x0, int y0, int x1, int y1, Color c) {
  // Bresenham.
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Color c) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) set(x, y, c);
  }
}

void Canvas::dot(int x, int y, int radius, Color c) {
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) set(x + dx, y + dy, c);
    }
  }
}

void Canvas::text(int x, int y, const std::string& s, Color c, int scale) {
  const auto& glyphs = font();
  int cx = x;
  for (char raw : s) {
    const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
    const auto it = glyphs.find(ch);
    for (int row = 0; row < 7; ++row) {
      for (int col = 0; col < 5; ++col) {
        const bool on = it != glyphs.end() ? ((it->second[row] >> (4 - col)) & 1) != 0
                                           : (row == 0 || row == 6 || col == 0 || col == 4);
        if (on) fill_rect(cx + col * scale, y + row * scale, cx + col * scale + scale - 1, y + row * scale + scale - 1, c);
      }
    }
    cx += 6 * scale;
  }
}

void Canvas::save_png(const std::filesystem::path& path) const {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (fp == nullptr) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width_, height_, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height_; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels_.data() + static_cast<std::size_t>(y) * width_ * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void line_chart(const std::string& title, const std::vector<std::string>& x_labels, const std::vector<Series>& series,
                const std::filesystem::path& path) {
  Frame f;
  value_range(series, f.lo, f.hi, false);
  Canvas c(f.width, f.height);
  draw_axes(c, f, title);
  const int n = static_cast<int>(x_labels.size());
  auto x_of = [&](int i) { return n <= 1 ? (f.x0() + f.x1()) / 2 : f.x0() + 20 + i * (f.x1() - f.x0() - 40) / (n - 1); };
  for (int i = 0; i < n; ++i) c.text(x_of(i) - 3 * static_cast<int>(x_labels[i].size()), f.y1() + 10, x_labels[i], {40, 40, 40});
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto col = palette(s);
    for (int i = 0; i < n && i < static_cast<int>(series[s].values.size()); ++i) {
      const double v = series[s].values[i];
      if (!std::isfinite(v)) continue;
      c.dot(x_of(i), f.y_of(v), 3, col);
      if (i > 0 && std::isfinite(series[s].values[i - 1])) {
        c.line(x_of(i - 1), f.y_of(series[s].values[i - 1]), x_of(i), f.y_of(v), col);
      }
    }
  }
  draw_legend(c, f, series);
  c.save_png(path);
}

void bar_chart(const std::string& title, const std::vector<std::string>& x_labels, const std::vector<Series>& series,
               const std::filesystem::path& path) {
  Frame f;
  value_range(series, f.lo, f.hi, true);
  Canvas c(f.width, f.height);
  draw_axes(c, f, title);
  const int groups = std::max<int>(1, static_cast<int>(x_labels.size()));
  const int group_w = (f.x1() - f.x0()) / groups;
  const int bars = std::max<int>(1, static_cast<int>(series.size()));
  const int bar_w = std::max(2, (group_w - 16) / bars);
  for (int g = 0; g < static_cast<int>(x_labels.size()); ++g) {
    const int gx = f.x0() + g * group_w + 8;
    for (int s = 0; s < static_cast<int>(series.size()); ++s) {
      if (g >= static_cast<int>(series[s].values.size())) continue;
      const double v = series[s].values[g];
      if (!std::isfinite(v)) continue;
      c.fill_rect(gx + s * bar_w, f.y_of(std::max(0.0, v)), gx + (s + 1) * bar_w - 2, f.y_of(std::min(0.0, v)), palette(s));
    }
    c.text(gx + group_w / 2 - 3 * static_cast<int>(x_labels[g].size()) - 8, f.y1() + 10, x_labels[g], {40, 40, 40});
  }
  draw_legend(c, f, series);
  c.save_png(path);
}

void scatter_plot(const std::string& title, const std::vector<Point>& points, const std::filesystem::path& path) {
  Frame f;
  f.right = 40;
  double xlo = 1e300, xhi = -1e300;
  f.lo = 1e300;
  f.hi = -1e300;
  for (const auto& p : points) {
    xlo = std::min(xlo, p.x);
    xhi = std::max(xhi, p.x);
    f.lo = std::min(f.lo, p.y);
    f.hi = std::max(f.hi, p.y);
  }
  if (points.empty() || xhi - xlo < 1e-12 || f.hi - f.lo < 1e-12) {
    xlo = f.lo = -1.0;
    xhi = f.hi = 1.0;
  }
  Canvas c(f.width, f.height);
  draw_axes(c, f, title);
  for (const auto& p : points) {
    const int x = f.x0() + 5 + static_cast<int>(std::lround((p.x - xlo) / (xhi - xlo) * (f.x1() - f.x0() - 10)));
    c.dot(x, f.y_of(p.y), 2, palette(static_cast<std::size_t>(p.category)));
  }
  c.save_png(path);
}

}  // namespace dact::plot
