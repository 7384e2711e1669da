#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "enformer/core/tensor.hpp"

namespace enformer {

struct MetricConfig {
  double fbeta_beta2 = 1.0;
  double s_alpha = 0.5;
  int64_t wf_kernel = 7;
  double wf_sigma = 5.0;
  double wf_decay = std::log(0.5) / 5.0;  // background weight B = 2 - exp(decay * D)
  double eps = 1e-8;
  // t = 0 binarizes to an all-ones mask; by default it only competes for maxE
  // and the swept means run over k = 1..255. Enabling this folds it into the
  // means as well (the full 256-threshold reading).
  bool include_zero_in_means = false;

  static std::vector<double> thresholds() {
    std::vector<double> t(256);
    for (int k = 0; k < 256; ++k) t[static_cast<size_t>(k)] = k / 255.0;
    return t;
  }
};

// Continuous prediction vs binary ground truth, both at the original size.
struct EvalPair {
  Tensor<double> pred;  // values in [0,1]
  Tensor<double> gt;    // values in {0,1}
  std::string id;

  void check() const {
    if (pred.shape() != gt.shape()) throw std::invalid_argument("eval pair: shapes differ");
    if (pred.rank() != 2) throw std::invalid_argument("eval pair: expected (H,W) grids");
    for (int64_t i = 0; i < pred.numel(); ++i) {
      if (!(pred[i] >= 0.0 && pred[i] <= 1.0))
        throw std::invalid_argument("eval pair: prediction outside [0,1]");
      if (gt[i] != 0.0 && gt[i] != 1.0)
        throw std::invalid_argument("eval pair: ground truth not binary");
    }
  }
};

// Foreground iff p >= t, so t = 0 gives all-ones and a binary map reproduces
// itself at every t in (0,1].
inline std::vector<uint8_t> binarize(const Tensor<double>& pred, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("binarize: threshold outside [0,1]");
  std::vector<uint8_t> out(static_cast<size_t>(pred.numel()));
  for (int64_t i = 0; i < pred.numel(); ++i) out[static_cast<size_t>(i)] = pred[i] >= t ? 1 : 0;
  return out;
}

namespace detail {

struct OverlapCounts {
  int64_t inter = 0, uni = 0;
};

inline OverlapCounts overlap(const std::vector<uint8_t>& bin, const Tensor<double>& gt) {
  if (static_cast<int64_t>(bin.size()) != gt.numel())
    throw std::invalid_argument("overlap: sizes differ");
  OverlapCounts c;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    int p = bin[static_cast<size_t>(i)] ? 1 : 0;
    int g = gt[i] > 0.5 ? 1 : 0;
    c.inter += p & g;
    c.uni += p | g;
  }
  return c;
}

}  // namespace detail

inline double iou(const std::vector<uint8_t>& bin, const Tensor<double>& gt) {
  auto c = detail::overlap(bin, gt);
  if (c.uni == 0) return 1.0;  // both empty
  return static_cast<double>(c.inter) / static_cast<double>(c.uni);
}

// Derived from iou through the exact identity 2*iou/(1+iou) (same real value
// as 2|inter|/(|bin|+|gt|)), so the per-threshold identity holds bit-for-bit.
inline double dice(const std::vector<uint8_t>& bin, const Tensor<double>& gt) {
  double j = iou(bin, gt);
  return 2.0 * j / (1.0 + j);
}

inline double mae(const Tensor<double>& pred, const Tensor<double>& gt) {
  if (pred.shape() != gt.shape()) throw std::invalid_argument("mae: shapes differ");
  double acc = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) acc += std::abs(pred[i] - gt[i]);
  return acc / static_cast<double>(pred.numel());
}

namespace detail {

// Nearest foreground pixel per pixel, exact, deterministic: squared Euclidean
// distance with ties broken by smaller row then smaller column. Column pass
// finds the nearest seed row per column; the row pass scans columns keeping
// the lexicographically smallest (d^2, row, col).
struct NearestField {
  std::vector<int64_t> d2;   // squared distance (0 on foreground)
  std::vector<int64_t> idx;  // flat index of the chosen foreground pixel
};

inline NearestField nearest_foreground(const Tensor<double>& gt) {
  const int64_t h = gt.dim(0), w = gt.dim(1);
  const int64_t inf = std::numeric_limits<int64_t>::max() / 4;
  std::vector<int64_t> col_row(static_cast<size_t>(h * w), -1);
  std::vector<int64_t> col_d2(static_cast<size_t>(h * w), inf);
  for (int64_t x = 0; x < w; ++x) {
    int64_t last = -1;  // nearest seed at or above, scanned downward
    for (int64_t y = 0; y < h; ++y) {
      if (gt[y * w + x] > 0.5) last = y;
      if (last >= 0) {
        col_row[static_cast<size_t>(y * w + x)] = last;
        col_d2[static_cast<size_t>(y * w + x)] = (y - last) * (y - last);
      }
    }
    int64_t next = -1;  // nearest seed below, scanned upward; ties keep the upper row
    for (int64_t y = h - 1; y >= 0; --y) {
      if (gt[y * w + x] > 0.5) next = y;
      if (next >= 0) {
        int64_t d = (next - y) * (next - y);
        auto at = static_cast<size_t>(y * w + x);
        if (d < col_d2[at]) {
          col_d2[at] = d;
          col_row[at] = next;
        }
      }
    }
  }
  NearestField out;
  out.d2.assign(static_cast<size_t>(h * w), inf);
  out.idx.assign(static_cast<size_t>(h * w), -1);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      int64_t best_d2 = inf, best_r = -1, best_c = -1;
      for (int64_t c = 0; c < w; ++c) {
        auto at = static_cast<size_t>(y * w + c);
        if (col_row[at] < 0) continue;
        int64_t d = (x - c) * (x - c) + col_d2[at];
        int64_t r = col_row[at];
        if (d < best_d2 || (d == best_d2 && (r < best_r || (r == best_r && c < best_c)))) {
          best_d2 = d;
          best_r = r;
          best_c = c;
        }
      }
      auto at = static_cast<size_t>(y * w + x);
      out.d2[at] = best_d2;
      if (best_r >= 0) out.idx[at] = best_r * w + best_c;
    }
  return out;
}

// normalized 2D Gaussian, zero-padded correlation
inline std::vector<double> gaussian_filter(const std::vector<double>& img, int64_t h, int64_t w,
                                           int64_t k, double sigma) {
  const int64_t r = k / 2;
  std::vector<double> kern(static_cast<size_t>(k * k));
  double sum = 0.0;
  for (int64_t dy = -r; dy <= r; ++dy)
    for (int64_t dx = -r; dx <= r; ++dx) {
      double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      kern[static_cast<size_t>((dy + r) * k + (dx + r))] = v;
      sum += v;
    }
  for (auto& v : kern) v /= sum;
  std::vector<double> out(static_cast<size_t>(h * w), 0.0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t dy = -r; dy <= r; ++dy)
        for (int64_t dx = -r; dx <= r; ++dx) {
          int64_t yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          acc += img[static_cast<size_t>(yy * w + xx)] *
                 kern[static_cast<size_t>((dy + r) * k + (dx + r))];
        }
      out[static_cast<size_t>(y * w + x)] = acc;
    }
  return out;
}

}  // namespace detail

// Weighted F-measure: per-pixel errors weighted by spatial dependency (errors
// far from the object count more; errors near it can be explained away by the
// neighborhood). Empty ground truth scores 1 only for an all-background
// prediction (max p <= 1e-8), otherwise 0.
inline double weighted_fbeta(const Tensor<double>& pred, const Tensor<double>& gt,
                             const MetricConfig& cfg = {}) {
  if (pred.shape() != gt.shape()) throw std::invalid_argument("weighted_fbeta: shapes differ");
  const int64_t h = gt.dim(0), w = gt.dim(1), n = h * w;
  int64_t fg = 0;
  for (int64_t i = 0; i < n; ++i) fg += gt[i] > 0.5 ? 1 : 0;
  if (fg == 0) {
    double mx = 0.0;
    for (int64_t i = 0; i < n; ++i) mx = std::max(mx, pred[i]);
    return mx <= 1e-8 ? 1.0 : 0.0;
  }

  std::vector<double> err(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) err[static_cast<size_t>(i)] = std::abs(pred[i] - gt[i]);

  // background errors take the value at the nearest foreground pixel
  auto nf = detail::nearest_foreground(gt);
  std::vector<double> moved = err;
  for (int64_t i = 0; i < n; ++i)
    if (gt[i] <= 0.5) moved[static_cast<size_t>(i)] = err[static_cast<size_t>(nf.idx[static_cast<size_t>(i)])];

  // inside the object, a lower smoothed error wins (neighborhood explains it)
  auto smooth = detail::gaussian_filter(moved, h, w, cfg.wf_kernel, cfg.wf_sigma);
  std::vector<double> ew(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    auto s = static_cast<size_t>(i);
    ew[s] = (gt[i] > 0.5 && smooth[s] < err[s]) ? smooth[s] : moved[s];
  }

  // distance-decayed background importance
  double tp_loss = 0.0, fp = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    auto s = static_cast<size_t>(i);
    if (gt[i] > 0.5) {
      tp_loss += ew[s];
    } else {
      double b = 2.0 - std::exp(cfg.wf_decay * std::sqrt(static_cast<double>(nf.d2[s])));
      fp += ew[s] * b;
    }
  }
  double tpw = static_cast<double>(fg) - tp_loss;
  double recall = 1.0 - tp_loss / static_cast<double>(fg);
  double precision = tpw / (tpw + fp + cfg.eps);
  double b2 = cfg.fbeta_beta2;
  return (1.0 + b2) * recall * precision / (cfg.eps + recall + b2 * precision);
}

namespace detail {

struct MeanStd {
  double mean = 0.0, sd = 0.0;
  int64_t count = 0;
};

// mean and std (n-1 denominator, 0 when fewer than two samples) over a mask
inline MeanStd masked_stats(const Tensor<double>& v, const Tensor<double>& gt, bool fg) {
  MeanStd r;
  double sum = 0.0;
  for (int64_t i = 0; i < v.numel(); ++i)
    if ((gt[i] > 0.5) == fg) {
      sum += v[i];
      ++r.count;
    }
  if (r.count == 0) return r;
  r.mean = sum / static_cast<double>(r.count);
  if (r.count < 2) return r;
  double acc = 0.0;
  for (int64_t i = 0; i < v.numel(); ++i)
    if ((gt[i] > 0.5) == fg) acc += (v[i] - r.mean) * (v[i] - r.mean);
  r.sd = std::sqrt(acc / static_cast<double>(r.count - 1));
  return r;
}

inline double object_score(double mean, double sd, double eps) {
  return 2.0 * mean / (mean * mean + 1.0 + sd + eps);
}

// SSIM-style similarity of one region (n-1 variances, degenerate rules)
inline double region_ssim(const std::vector<double>& p, const std::vector<double>& g, double eps) {
  const auto n = static_cast<double>(p.size());
  if (p.empty()) return 1.0;
  double mp = 0.0, mg = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    mp += p[i];
    mg += g[i];
  }
  mp /= n;
  mg /= n;
  double vp = 0.0, vg = 0.0, cov = 0.0;
  if (p.size() > 1) {
    for (size_t i = 0; i < p.size(); ++i) {
      vp += (p[i] - mp) * (p[i] - mp);
      vg += (g[i] - mg) * (g[i] - mg);
      cov += (p[i] - mp) * (g[i] - mg);
    }
    vp /= n - 1.0;
    vg /= n - 1.0;
    cov /= n - 1.0;
  }
  double num = 4.0 * mp * mg * cov;
  double den = (mp * mp + mg * mg) * (vp + vg);
  if (num != 0.0) return num / (den + eps);
  return den == 0.0 ? 1.0 : 0.0;
}

}  // namespace detail

// Structure measure: object-aware term (foreground/background mean-similarity)
// blended with a region term (4 quadrants split at the foreground centroid,
// SSIM-style, area-weighted). Degenerate ground truths fall back to the mean
// prediction: all-background scores 1 - mean(P), all-foreground scores mean(P).
inline double s_measure(const Tensor<double>& pred, const Tensor<double>& gt,
                        const MetricConfig& cfg = {}) {
  if (pred.shape() != gt.shape()) throw std::invalid_argument("s_measure: shapes differ");
  const int64_t h = gt.dim(0), w = gt.dim(1), n = h * w;
  int64_t fg = 0;
  for (int64_t i = 0; i < n; ++i) fg += gt[i] > 0.5 ? 1 : 0;
  double pmean = 0.0;
  for (int64_t i = 0; i < n; ++i) pmean += pred[i];
  pmean /= static_cast<double>(n);
  if (fg == 0) return 1.0 - pmean;
  if (fg == n) return pmean;

  // object term
  double u = static_cast<double>(fg) / static_cast<double>(n);
  auto fg_stats = detail::masked_stats(pred, gt, true);
  Tensor<double> inv = pred;
  for (int64_t i = 0; i < n; ++i) inv[i] = 1.0 - inv[i];
  auto bg_stats = detail::masked_stats(inv, gt, false);
  double s_object = u * detail::object_score(fg_stats.mean, fg_stats.sd, cfg.eps) +
                    (1.0 - u) * detail::object_score(bg_stats.mean, bg_stats.sd, cfg.eps);

  // region term: quadrants at the rounded foreground centroid (inclusive top-left)
  double cy = 0.0, cx = 0.0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      if (gt[y * w + x] > 0.5) {
        cy += static_cast<double>(y);
        cx += static_cast<double>(x);
      }
  int64_t qy = std::llround(cy / static_cast<double>(fg));
  int64_t qx = std::llround(cx / static_cast<double>(fg));
  double s_region = 0.0;
  for (int quad = 0; quad < 4; ++quad) {
    int64_t y0 = (quad / 2 == 0) ? 0 : qy + 1;
    int64_t y1 = (quad / 2 == 0) ? qy : h - 1;
    int64_t x0 = (quad % 2 == 0) ? 0 : qx + 1;
    int64_t x1 = (quad % 2 == 0) ? qx : w - 1;
    std::vector<double> p, g;
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x) {
        p.push_back(pred[y * w + x]);
        g.push_back(gt[y * w + x]);
      }
    double weight = static_cast<double>(p.size()) / static_cast<double>(n);
    s_region += weight * detail::region_ssim(p, g, cfg.eps);
  }

  return std::max(0.0, cfg.s_alpha * s_object + (1.0 - cfg.s_alpha) * s_region);
}

// Enhanced alignment: bias fields of prediction and ground truth, combined
// into an alignment map and squashed to [0,1]. Plain mean over pixels.
// Degenerate ground truths: all-background scores mean(1 - bin), all-
// foreground scores mean(bin).
inline double e_measure(const std::vector<uint8_t>& bin, const Tensor<double>& gt,
                        const MetricConfig& cfg = {}) {
  const int64_t n = gt.numel();
  if (static_cast<int64_t>(bin.size()) != n) throw std::invalid_argument("e_measure: sizes differ");
  int64_t fg = 0, pf = 0;
  for (int64_t i = 0; i < n; ++i) {
    fg += gt[i] > 0.5 ? 1 : 0;
    pf += bin[static_cast<size_t>(i)] ? 1 : 0;
  }
  if (fg == 0) return 1.0 - static_cast<double>(pf) / static_cast<double>(n);
  if (fg == n) return static_cast<double>(pf) / static_cast<double>(n);
  double mg = static_cast<double>(fg) / static_cast<double>(n);
  double mp = static_cast<double>(pf) / static_cast<double>(n);
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double pg = static_cast<double>(gt[i] > 0.5 ? 1 : 0) - mg;
    double pp = static_cast<double>(bin[static_cast<size_t>(i)]) - mp;
    double align = 2.0 * pg * pp / (pg * pg + pp * pp + cfg.eps);
    acc += (align + 1.0) * (align + 1.0) / 4.0;
  }
  return acc / static_cast<double>(n);
}

struct PerImageRecord {
  std::string id;
  double mean_dice = 0.0, mean_iou = 0.0, wfb = 0.0, s = 0.0, mean_e = 0.0, max_e = 0.0, mae = 0.0;
};

// The full per-image protocol: dice/iou/E swept over the 256-threshold grid
// (means per the config's t = 0 rule, maxE over the whole grid), weighted-F,
// S, and MAE computed once on the continuous map.
inline PerImageRecord sweep_metrics(const EvalPair& pair, const MetricConfig& cfg = {}) {
  pair.check();
  PerImageRecord rec;
  rec.id = pair.id;
  auto ts = MetricConfig::thresholds();
  double dsum = 0.0, isum = 0.0, esum = 0.0, emax = 0.0;
  int64_t counted = 0;
  for (size_t k = 0; k < ts.size(); ++k) {
    auto bin = binarize(pair.pred, ts[k]);
    double e = e_measure(bin, pair.gt, cfg);
    emax = std::max(emax, e);
    if (k == 0 && !cfg.include_zero_in_means) continue;
    dsum += dice(bin, pair.gt);
    isum += iou(bin, pair.gt);
    esum += e;
    ++counted;
  }
  rec.mean_dice = dsum / static_cast<double>(counted);
  rec.mean_iou = isum / static_cast<double>(counted);
  rec.mean_e = esum / static_cast<double>(counted);
  rec.max_e = emax;
  rec.wfb = weighted_fbeta(pair.pred, pair.gt, cfg);
  rec.s = s_measure(pair.pred, pair.gt, cfg);
  rec.mae = mae(pair.pred, pair.gt);
  return rec;
}

}  // namespace enformer
