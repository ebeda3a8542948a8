#include "ocwm/env/render.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace ocwm::env {

namespace {

constexpr int kSupersample = 4;
constexpr double kBorder = 0.03;
constexpr float kBoard[3] = {0.82f, 0.82f, 0.82f};
constexpr float kBorderColor[3] = {0.15f, 0.15f, 0.15f};
constexpr float kEffectorColor[3] = {0.35f, 0.35f, 0.35f};

const float* color_rgb(Color c) {
  static const float table[4][3] = {
      {0.85f, 0.10f, 0.10f},  // red
      {0.10f, 0.25f, 0.85f},  // blue
      {0.10f, 0.70f, 0.20f},  // green
      {0.92f, 0.85f, 0.12f},  // yellow
  };
  return table[static_cast<int>(c)];
}

bool in_polygon(double px, double py, const std::vector<std::array<double, 2>>& v) {
  bool in = false;
  std::size_t n = v.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if ((v[i][1] > py) != (v[j][1] > py) &&
        px < (v[j][0] - v[i][0]) * (py - v[i][1]) / (v[j][1] - v[i][1]) + v[i][0])
      in = !in;
  }
  return in;
}

std::vector<std::array<double, 2>> pentagon_verts(double cx, double cy, double r) {
  std::vector<std::array<double, 2>> v;
  for (int k = 0; k < 5; ++k) {
    double a = -M_PI / 2 + k * 2.0 * M_PI / 5.0;
    v.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return v;
}

std::vector<std::array<double, 2>> star_verts(double cx, double cy, double r) {
  std::vector<std::array<double, 2>> v;
  for (int k = 0; k < 10; ++k) {
    double rr = (k % 2 == 0) ? r : 0.45 * r;
    double a = -M_PI / 2 + k * M_PI / 5.0;
    v.push_back({cx + rr * std::cos(a), cy + rr * std::sin(a)});
  }
  return v;
}

bool in_shape(const BlockSpec& b, double x, double y) {
  double dx = x - b.x, dy = y - b.y;
  switch (b.shape) {
    case Shape::cube: {
      double h = 0.8 * b.radius;
      return std::abs(dx) <= h && std::abs(dy) <= h;
    }
    case Shape::moon: {
      if (dx * dx + dy * dy > b.radius * b.radius) return false;
      // bite circle offset along +x, kept clear of the center pixel
      double bx = dx - 0.95 * b.radius;
      double br = 0.65 * b.radius;
      return bx * bx + dy * dy > br * br;
    }
    case Shape::pentagon:
      return in_polygon(x, y, pentagon_verts(b.x, b.y, b.radius));
    case Shape::star:
      return in_polygon(x, y, star_verts(b.x, b.y, b.radius));
  }
  return false;
}

struct Canvas {
  int rs;
  std::vector<float> rgb;  // 3 x rs x rs

  explicit Canvas(int rs_) : rs(rs_), rgb(3L * rs_ * rs_) {}

  void set(int row, int col, const float* c) {
    long hw = static_cast<long>(rs) * rs;
    long at = static_cast<long>(row) * rs + col;
    rgb[at] = c[0];
    rgb[hw + at] = c[1];
    rgb[2 * hw + at] = c[2];
  }

  double sample_x(int col) const { return (col + 0.5) / rs; }
  double sample_y(int row) const { return (row + 0.5) / rs; }

  // paints cells of [x0,x1]x[y0,y1] where pred(x,y) holds
  template <typename Pred>
  void paint(double x0, double y0, double x1, double y1, const float* c, Pred pred) {
    int c0 = std::max(0, static_cast<int>(std::floor(x0 * rs)));
    int c1 = std::min(rs - 1, static_cast<int>(std::ceil(x1 * rs)));
    int r0 = std::max(0, static_cast<int>(std::floor(y0 * rs)));
    int r1 = std::min(rs - 1, static_cast<int>(std::ceil(y1 * rs)));
    for (int row = r0; row <= r1; ++row) {
      double y = sample_y(row);
      for (int col = c0; col <= c1; ++col)
        if (pred(sample_x(col), y)) set(row, col, c);
    }
  }
};

void check_resolution(int res) {
  if (res != 32 && res != 64 && res != 128)
    throw ConfigError("render: unsupported resolution " + std::to_string(res) +
                      " (expected 32, 64 or 128)");
}

void paint_background(Canvas& cv) {
  for (int row = 0; row < cv.rs; ++row) {
    double y = cv.sample_y(row);
    bool yb = y < kBorder || y > 1.0 - kBorder;
    for (int col = 0; col < cv.rs; ++col) {
      double x = cv.sample_x(col);
      bool border = yb || x < kBorder || x > 1.0 - kBorder;
      cv.set(row, col, border ? kBorderColor : kBoard);
    }
  }
}

Frame downsample(const Canvas& cv, int res) {
  Frame out(3L * res * res);
  long hw_in = static_cast<long>(cv.rs) * cv.rs;
  long hw_out = static_cast<long>(res) * res;
  const float inv = 1.0f / (kSupersample * kSupersample);
  for (int c = 0; c < 3; ++c)
    for (int row = 0; row < res; ++row)
      for (int col = 0; col < res; ++col) {
        float acc = 0.0f;
        for (int sy = 0; sy < kSupersample; ++sy) {
          const float* src = cv.rgb.data() + c * hw_in +
                             static_cast<long>(row * kSupersample + sy) * cv.rs +
                             col * kSupersample;
          for (int sx = 0; sx < kSupersample; ++sx) acc += src[sx];
        }
        out[c * hw_out + static_cast<long>(row) * res + col] = acc * inv;
      }
  return out;
}

}  // namespace

Frame render(const EnvState& s, int resolution) {
  check_resolution(resolution);
  Canvas cv(resolution * kSupersample);
  paint_background(cv);
  for (const BlockSpec& b : s.blocks) {
    cv.paint(b.x - b.radius, b.y - b.radius, b.x + b.radius, b.y + b.radius, color_rgb(b.color),
             [&b](double x, double y) { return in_shape(b, x, y); });
  }
  const Effector& e = s.effector;
  if (e.radius > 0.0)
    cv.paint(e.x - e.radius, e.y - e.radius, e.x + e.radius, e.y + e.radius, kEffectorColor,
             [&e](double x, double y) {
               double dx = x - e.x, dy = y - e.y;
               return dx * dx + dy * dy <= e.radius * e.radius;
             });
  return downsample(cv, resolution);
}

Frame render_background(int resolution) {
  check_resolution(resolution);
  Canvas cv(resolution * kSupersample);
  paint_background(cv);
  return downsample(cv, resolution);
}

}  // namespace ocwm::env
