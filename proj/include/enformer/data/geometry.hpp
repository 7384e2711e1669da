#pragma once

#include <array>
#include <cmath>
#include <functional>

#include "enformer/data/image.hpp"

// In-library resampling. Every warp is defined by a backward field mapping
// each destination pixel center to a source position; image and mask run the
// exact same field with their own interpolation (bilinear vs nearest), which
// makes geometric equivariance structural. Out-of-frame samples reflect.

namespace enformer {

// reflect-101 style: mirror about the border pixels without repeating them
inline int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  int64_t period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

inline double sample_bilinear_reflect(const ByteImage& img, double sy, double sx, int64_t ch) {
  int64_t y0 = static_cast<int64_t>(std::floor(sy)), x0 = static_cast<int64_t>(std::floor(sx));
  double fy = sy - y0, fx = sx - x0;
  double v00 = img.at(reflect_index(y0, img.h), reflect_index(x0, img.w), ch);
  double v01 = img.at(reflect_index(y0, img.h), reflect_index(x0 + 1, img.w), ch);
  double v10 = img.at(reflect_index(y0 + 1, img.h), reflect_index(x0, img.w), ch);
  double v11 = img.at(reflect_index(y0 + 1, img.h), reflect_index(x0 + 1, img.w), ch);
  return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
}

inline uint8_t sample_nearest_reflect(const ByteImage& img, double sy, double sx, int64_t ch) {
  return img.at(reflect_index(std::llround(sy), img.h), reflect_index(std::llround(sx), img.w), ch);
}

using BackwardField = std::function<void(double dy, double dx, double& sy, double& sx)>;

inline ByteImage warp(const ByteImage& img, const BackwardField& field, bool bilinear) {
  ByteImage out(img.h, img.w, img.c);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      double sy, sx;
      field(static_cast<double>(y), static_cast<double>(x), sy, sx);
      for (int64_t ch = 0; ch < img.c; ++ch)
        out.at(y, x, ch) =
            bilinear ? clamp_byte(sample_bilinear_reflect(img, sy, sx, ch)) : sample_nearest_reflect(img, sy, sx, ch);
    }
  return out;
}

struct AffineParams {
  double angle_deg = 0;  // rotation about the image center
  double scale = 1;
  double shift_y = 0, shift_x = 0;  // translation as a fraction of each axis
};

inline BackwardField affine_backward_field(const AffineParams& p, int64_t h, int64_t w) {
  double th = p.angle_deg * M_PI / 180.0;
  double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  double ty = p.shift_y * h, tx = p.shift_x * w;
  // forward: dst = s·R·(src − c) + c + t  ⇒  src = R⁻¹·(dst − c − t)/s + c
  double cs = std::cos(th), sn = std::sin(th);
  return [=](double dy, double dx, double& sy, double& sx) {
    double vy = (dy - cy - ty) / p.scale, vx = (dx - cx - tx) / p.scale;
    sy = cs * vy - sn * vx + cy;
    sx = sn * vy + cs * vx + cx;
  };
}

// Node offsets for an n×n cell lattice ((n+1)² intersections), in units of
// one cell. The backward field interpolates the shifted intersections
// bilinearly across each cell.
template <int kCells>
struct GridOffsets {
  std::array<std::array<std::array<double, 2>, kCells + 1>, kCells + 1> dydx{};
};

template <int kCells>
inline BackwardField grid_backward_field(const GridOffsets<kCells>& g, int64_t h, int64_t w) {
  double cell_h = static_cast<double>(h) / kCells, cell_w = static_cast<double>(w) / kCells;
  return [=](double dy, double dx, double& sy, double& sx) {
    double gy = dy / cell_h, gx = dx / cell_w;
    int iy = std::min<int>(kCells - 1, static_cast<int>(gy)), ix = std::min<int>(kCells - 1, static_cast<int>(gx));
    double fy = gy - iy, fx = gx - ix;
    auto off = [&](int ny, int nx, int k) { return g.dydx[ny][nx][k] * (k == 0 ? cell_h : cell_w); };
    double oy = (1 - fy) * ((1 - fx) * off(iy, ix, 0) + fx * off(iy, ix + 1, 0)) +
                fy * ((1 - fx) * off(iy + 1, ix, 0) + fx * off(iy + 1, ix + 1, 0));
    double ox = (1 - fy) * ((1 - fx) * off(iy, ix, 1) + fx * off(iy, ix + 1, 1)) +
                fy * ((1 - fx) * off(iy + 1, ix, 1) + fx * off(iy + 1, ix + 1, 1));
    sy = dy + oy;
    sx = dx + ox;
  };
}

inline ByteImage flip_horizontal(const ByteImage& img) {
  ByteImage out(img.h, img.w, img.c);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int64_t ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(y, img.w - 1 - x, ch);
  return out;
}

inline ByteImage flip_vertical(const ByteImage& img) {
  ByteImage out(img.h, img.w, img.c);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int64_t ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(img.h - 1 - y, x, ch);
  return out;
}

// Resize with the library-wide bilinear convention (half-pixel centers,
// edges clamped), matching the tensor-op resampler bit for bit.
inline ByteImage resize_bilinear(const ByteImage& img, int64_t oh, int64_t ow) {
  if (oh == img.h && ow == img.w) return img;
  ByteImage out(oh, ow, img.c);
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double sy = (y + 0.5) * static_cast<double>(img.h) / oh - 0.5;
      double sx = (x + 0.5) * static_cast<double>(img.w) / ow - 0.5;
      sy = std::min(std::max(sy, 0.0), static_cast<double>(img.h - 1));
      sx = std::min(std::max(sx, 0.0), static_cast<double>(img.w - 1));
      for (int64_t ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = clamp_byte(sample_bilinear_reflect(img, sy, sx, ch));
    }
  return out;
}

inline ByteImage resize_nearest(const ByteImage& img, int64_t oh, int64_t ow) {
  if (oh == img.h && ow == img.w) return img;
  ByteImage out(oh, ow, img.c);
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      int64_t sy = std::min<int64_t>(img.h - 1, std::max<int64_t>(0, std::llround((y + 0.5) * img.h / double(oh) - 0.5)));
      int64_t sx = std::min<int64_t>(img.w - 1, std::max<int64_t>(0, std::llround((x + 0.5) * img.w / double(ow) - 0.5)));
      for (int64_t ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(sy, sx, ch);
    }
  return out;
}

}  // namespace enformer
