#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "enformer/core/tensor.hpp"

namespace enformer {

// Raw interleaved byte image, c = 3 (RGB) or 1 (grayscale mask).
struct ByteImage {
  int64_t h = 0, w = 0, c = 0;
  std::vector<uint8_t> px;

  ByteImage() = default;
  ByteImage(int64_t h_, int64_t w_, int64_t c_) : h(h_), w(w_), c(c_), px(static_cast<size_t>(h_ * w_ * c_)) {}

  uint8_t& at(int64_t y, int64_t x, int64_t ch) { return px[static_cast<size_t>((y * w + x) * c + ch)]; }
  uint8_t at(int64_t y, int64_t x, int64_t ch) const { return px[static_cast<size_t>((y * w + x) * c + ch)]; }
  bool empty() const { return px.empty(); }
  bool same_dims(const ByteImage& o) const { return h == o.h && w == o.w && c == o.c; }
};

inline uint8_t clamp_byte(double v) { return static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : std::llround(v))); }

// declared mask threshold: strictly above 127 is foreground
inline ByteImage binarize_mask(const ByteImage& raw) {
  if (raw.c != 1) throw std::invalid_argument("binarize_mask: expected a single-channel mask");
  ByteImage out(raw.h, raw.w, 1);
  for (size_t i = 0; i < raw.px.size(); ++i) out.px[i] = raw.px[i] > 127 ? 1 : 0;
  return out;
}

template <typename T>
inline Tensor<T> image_to_float01(const ByteImage& img) {
  Tensor<T> t({img.c, img.h, img.w});
  for (int64_t ch = 0; ch < img.c; ++ch)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x) t[(ch * img.h + y) * img.w + x] = static_cast<T>(img.at(y, x, ch)) / T(255);
  return t;
}

template <typename T>
inline ByteImage float01_to_image(const Tensor<T>& t) {
  if (t.rank() != 3) throw std::invalid_argument("float01_to_image: expected (C,H,W)");
  ByteImage img(t.dim(1), t.dim(2), t.dim(0));
  for (int64_t ch = 0; ch < img.c; ++ch)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x)
        img.at(y, x, ch) = clamp_byte(static_cast<double>(t[(ch * img.h + y) * img.w + x]) * 255.0);
  return img;
}

// Paired raw sample as it comes off disk.
struct RawSample {
  ByteImage image;  // RGB
  ByteImage mask;   // single channel, any grayscale values until binarized
  std::string source_id;

  void check_paired(const char* who) const {
    if (image.c != 3 || mask.c != 1 || image.h != mask.h || image.w != mask.w)
      throw std::invalid_argument(std::string(who) + ": image " + std::to_string(image.h) + "x" +
                                  std::to_string(image.w) + "x" + std::to_string(image.c) + " and mask " +
                                  std::to_string(mask.h) + "x" + std::to_string(mask.w) +
                                  " are not a matched RGB/gray pair");
  }
};

}  // namespace enformer
