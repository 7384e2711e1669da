#pragma once

#include "enformer/core/rng.hpp"
#include "enformer/data/geometry.hpp"

// The six-op augmentation pipeline: horizontal flip, vertical flip, affine,
// grid distortion, color jitter, unsharp. Each op gates independently at
// p = 0.5. Geometric ops hit image and mask with identical parameters and the
// mask is re-binarized after any interpolating transform; color ops never
// touch the mask. The draw consumes a fixed amount of rng state regardless of
// which gates fire, so a seed fully determines the whole schedule.

namespace enformer {

struct ColorJitterParams {
  double brightness = 0, contrast = 0, saturation = 0;  // additive factor deltas
  double hue = 0;                                       // fraction of the hue circle
};

struct AugmentDraw {
  bool hflip = false, vflip = false, affine = false, grid = false, jitter = false, unsharp = false;
  AffineParams affine_params;
  GridOffsets<5> grid_offsets;
  ColorJitterParams jitter_params;
  double unsharp_sigma = 1.0;
};

inline AugmentDraw sample_draw(Rng& rng) {
  AugmentDraw d;
  d.hflip = rng.bernoulli(0.5);
  d.vflip = rng.bernoulli(0.5);
  d.affine = rng.bernoulli(0.5);
  d.grid = rng.bernoulli(0.5);
  d.jitter = rng.bernoulli(0.5);
  d.unsharp = rng.bernoulli(0.5);
  d.affine_params = {rng.uniform(-45.0, 45.0), rng.uniform(0.9, 1.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
  for (auto& row : d.grid_offsets.dydx)
    for (auto& node : row) {
      node[0] = rng.uniform(-0.3, 0.3);
      node[1] = rng.uniform(-0.3, 0.3);
    }
  d.jitter_params = {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.1, 0.1)};
  d.unsharp_sigma = rng.uniform(0.5, 2.0);
  return d;
}

namespace detail {

inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx == 0 ? 0 : d / mx;
  if (d == 0)
    h = 0;
  else if (mx == r)
    h = std::fmod((g - b) / d, 6.0) / 6.0;
  else if (mx == g)
    h = ((b - r) / d + 2.0) / 6.0;
  else
    h = ((r - g) / d + 4.0) / 6.0;
  if (h < 0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  double hh = std::fmod(h, 1.0) * 6.0;
  int i = static_cast<int>(hh) % 6;
  double f = hh - std::floor(hh);
  double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

inline double clamp01(double v) { return v < 0 ? 0 : (v > 1 ? 1 : v); }

}  // namespace detail

inline ByteImage apply_color_jitter(const ByteImage& img, const ColorJitterParams& p) {
  // factors as 1 + delta; hue rotates the HSV angle
  double fb = 1 + p.brightness, fc = 1 + p.contrast, fs = 1 + p.saturation;
  std::vector<double> buf(img.px.size());
  double gray_mean = 0;
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      for (int64_t ch = 0; ch < 3; ++ch) buf[(y * img.w + x) * 3 + ch] = img.at(y, x, ch) / 255.0;
      auto* px = &buf[(y * img.w + x) * 3];
      gray_mean += detail::luma(px[0], px[1], px[2]);
    }
  gray_mean /= static_cast<double>(img.h * img.w);
  ByteImage out(img.h, img.w, 3);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      auto* px = &buf[(y * img.w + x) * 3];
      double r = px[0], g = px[1], b = px[2];
      r = detail::clamp01(r * fb), g = detail::clamp01(g * fb), b = detail::clamp01(b * fb);
      r = detail::clamp01((r - gray_mean) * fc + gray_mean);
      g = detail::clamp01((g - gray_mean) * fc + gray_mean);
      b = detail::clamp01((b - gray_mean) * fc + gray_mean);
      double l = detail::luma(r, g, b);
      r = detail::clamp01((r - l) * fs + l);
      g = detail::clamp01((g - l) * fs + l);
      b = detail::clamp01((b - l) * fs + l);
      if (p.hue != 0) {
        double h, s, v;
        detail::rgb_to_hsv(r, g, b, h, s, v);
        detail::hsv_to_rgb(h + p.hue + 1.0, s, v, r, g, b);
      }
      out.at(y, x, 0) = clamp_byte(r * 255.0);
      out.at(y, x, 1) = clamp_byte(g * 255.0);
      out.at(y, x, 2) = clamp_byte(b * 255.0);
    }
  return out;
}

inline ByteImage apply_unsharp(const ByteImage& img, double sigma, int kernel = 5, double amount = 1.0) {
  int r = kernel / 2;
  std::vector<double> k(kernel);
  double norm = 0;
  for (int i = -r; i <= r; ++i) norm += k[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  for (auto& v : k) v /= norm;
  auto blur_pass = [&](const std::vector<double>& src, std::vector<double>& dst, bool vertical) {
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x)
        for (int64_t ch = 0; ch < img.c; ++ch) {
          double acc = 0;
          for (int i = -r; i <= r; ++i) {
            int64_t yy = vertical ? reflect_index(y + i, img.h) : y;
            int64_t xx = vertical ? x : reflect_index(x + i, img.w);
            acc += k[i + r] * src[(yy * img.w + xx) * img.c + ch];
          }
          dst[(y * img.w + x) * img.c + ch] = acc;
        }
  };
  std::vector<double> f(img.px.begin(), img.px.end()), tmp(f.size()), blurred(f.size());
  blur_pass(f, tmp, false);
  blur_pass(tmp, blurred, true);
  ByteImage out(img.h, img.w, img.c);
  for (size_t i = 0; i < f.size(); ++i) out.px[i] = clamp_byte(f[i] + amount * (f[i] - blurred[i]));
  return out;
}

inline void rebinarize(ByteImage& mask) {
  for (auto& v : mask.px) v = v > 127 ? 255 : 0;
}

inline RawSample apply_augment(const RawSample& sample, const AugmentDraw& d) {
  sample.check_paired("apply_augment");
  RawSample s = sample;
  if (d.hflip) {
    s.image = flip_horizontal(s.image);
    s.mask = flip_horizontal(s.mask);
  }
  if (d.vflip) {
    s.image = flip_vertical(s.image);
    s.mask = flip_vertical(s.mask);
  }
  if (d.affine) {
    auto field = affine_backward_field(d.affine_params, s.image.h, s.image.w);
    s.image = warp(s.image, field, true);
    s.mask = warp(s.mask, field, false);
    rebinarize(s.mask);
  }
  if (d.grid) {
    auto field = grid_backward_field(d.grid_offsets, s.image.h, s.image.w);
    s.image = warp(s.image, field, true);
    s.mask = warp(s.mask, field, false);
    rebinarize(s.mask);
  }
  if (d.jitter) s.image = apply_color_jitter(s.image, d.jitter_params);
  if (d.unsharp) s.image = apply_unsharp(s.image, d.unsharp_sigma);
  return s;
}

inline RawSample augment(const RawSample& sample, Rng& rng) { return apply_augment(sample, sample_draw(rng)); }

}  // namespace enformer
