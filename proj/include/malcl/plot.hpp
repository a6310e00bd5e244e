#pragma once

// Line charts with error bars rendered straight to PNG. Convenience output
// only; the CSV written next to each chart is the data contract.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "malcl/core.hpp"
#include "malcl/io.hpp"

namespace malcl::plot {

struct Series {
  std::string label;
  std::vector<double> mean;  // NaN marks a missing point
  std::vector<double> std;
};

namespace detail {

// 5x7 glyphs, one byte per row, low 5 bits used (MSB on the left).
inline const std::uint8_t* glyph(char c) {
  static const std::array<std::array<std::uint8_t, 7>, 43> font = {{
      {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
      {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
      {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
      {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
      {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
      {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
      {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
      {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
      {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
      {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
      {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // A
      {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},  // B
      {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E},  // C
      {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C},  // D
      {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F},  // E
      {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},  // F
      {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F},  // G
      {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // H
      {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E},  // I
      {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},  // J
      {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11},  // K
      {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},  // L
      {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11},  // M
      {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11},  // N
      {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // O
      {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},  // P
      {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D},  // Q
      {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},  // R
      {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E},  // S
      {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},  // T
      {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // U
      {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},  // V
      {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A},  // W
      {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},  // X
      {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04},  // Y
      {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F},  // Z
      {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C},  // .
      {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00},  // -
      {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F},  // _
      {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00},  // :
      {0x01, 0x02, 0x02, 0x04, 0x08, 0x08, 0x10},  // /
      {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00},  // +
      {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00},  // space
  }};
  if (c >= '0' && c <= '9') return font[c - '0'].data();
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  if (c >= 'A' && c <= 'Z') return font[10 + c - 'A'].data();
  switch (c) {
    case '.': return font[36].data();
    case '-': return font[37].data();
    case '_': return font[38].data();
    case ':': return font[39].data();
    case '/': return font[40].data();
    case '+': return font[41].data();
    default: return font[42].data();
  }
}

struct Painter {
  Image img;
  explicit Painter(int w, int h) : img(w, h) { std::fill(img.rgb.begin(), img.rgb.end(), 255); }

  void px(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    auto* p = img.at(x, y);
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c, int thick = 1) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      for (int a = 0; a < thick; ++a)
        for (int b = 0; b < thick; ++b) px(x0 + a - thick / 2, y0 + b - thick / 2, c);
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
  void text(int x, int y, const std::string& s, std::array<std::uint8_t, 3> c) {
    for (char ch : s) {
      const auto* g = glyph(ch);
      for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 5; ++col)
          if (g[r] & (0x10 >> col)) px(x + col, y + r, c);
      x += 6;
    }
  }
};

}  // namespace detail

// Task index on x, metric in [0, 1] on y, one polyline per series with
// +-std error bars.
inline Image line_chart(const std::string& title, const std::vector<Series>& series, std::size_t n_tasks) {
  constexpr int W = 640, H = 420, L = 50, R = 170, Tm = 30, B = 40;
  static const std::array<std::array<std::uint8_t, 3>, 6> colors{
      {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {140, 86, 75}}};
  detail::Painter p(W, H);
  const std::array<std::uint8_t, 3> black{0, 0, 0}, grey{210, 210, 210};
  auto xpos = [&](std::size_t i) {
    return n_tasks <= 1 ? L + (W - L - R) / 2
                        : L + static_cast<int>(std::lround(static_cast<double>(i) * (W - L - R) / (n_tasks - 1)));
  };
  auto ypos = [&](double v) { return Tm + static_cast<int>(std::lround((1.0 - std::clamp(v, 0.0, 1.0)) * (H - Tm - B))); };
  for (int k = 0; k <= 4; ++k) {
    const int y = ypos(k / 4.0);
    p.line(L, y, W - R, y, grey);
    p.text(8, y - 3, io::format_fixed(k / 4.0, 2), black);
  }
  p.line(L, Tm, L, H - B, black);
  p.line(L, H - B, W - R, H - B, black);
  for (std::size_t i = 0; i < n_tasks; ++i) p.text(xpos(i) - 8, H - B + 8, "T" + std::to_string(i + 1), black);
  p.text(L, 10, title, black);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto c = colors[s % colors.size()];
    const auto& ser = series[s];
    for (std::size_t i = 0; i < ser.mean.size(); ++i) {
      if (std::isnan(ser.mean[i])) continue;
      const int x = xpos(i), y = ypos(ser.mean[i]);
      const double sd = i < ser.std.size() && !std::isnan(ser.std[i]) ? ser.std[i] : 0.0;
      p.line(x, ypos(ser.mean[i] - sd), x, ypos(ser.mean[i] + sd), c);
      p.line(x - 3, y, x + 3, y, c, 3);
      if (i + 1 < ser.mean.size() && !std::isnan(ser.mean[i + 1])) p.line(x, y, xpos(i + 1), ypos(ser.mean[i + 1]), c, 2);
    }
    const int ly = Tm + 14 * static_cast<int>(s);
    p.line(W - R + 12, ly + 3, W - R + 26, ly + 3, c, 3);
    p.text(W - R + 32, ly, ser.label, black);
  }
  return p.img;
}

}  // namespace malcl::plot
