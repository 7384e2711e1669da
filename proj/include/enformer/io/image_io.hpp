#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "enformer/data/image.hpp"

// The only OpenCV touchpoint in the library: decoding and encoding image
// files. All geometry and color math stays in-library.

namespace enformer {

inline ByteImage load_image_rgb(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("cannot read image '" + path + "'");
  ByteImage img(m.rows, m.cols, 3);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      const auto& bgr = m.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      img.at(y, x, 0) = bgr[2];
      img.at(y, x, 1) = bgr[1];
      img.at(y, x, 2) = bgr[0];
    }
  return img;
}

inline ByteImage load_mask_gray(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw std::runtime_error("cannot read mask '" + path + "'");
  ByteImage img(m.rows, m.cols, 1);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) img.at(y, x, 0) = m.at<uint8_t>(static_cast<int>(y), static_cast<int>(x));
  return img;
}

inline void save_image(const std::string& path, const ByteImage& img) {
  if (img.c != 1 && img.c != 3) throw std::invalid_argument("save_image: expected 1 or 3 channels");
  cv::Mat m(static_cast<int>(img.h), static_cast<int>(img.w), img.c == 3 ? CV_8UC3 : CV_8UC1);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      if (img.c == 3)
        m.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x)) =
            cv::Vec3b(img.at(y, x, 2), img.at(y, x, 1), img.at(y, x, 0));
      else
        m.at<uint8_t>(static_cast<int>(y), static_cast<int>(x)) = img.at(y, x, 0);
    }
  if (!cv::imwrite(path, m)) throw std::runtime_error("cannot write image '" + path + "'");
}

// full-precision probability map export: 16-bit grayscale PNG, 0..65535 ↦ [0,1]
template <typename T>
inline void save_probability_png16(const std::string& path, const Tensor<T>& map) {
  if (map.rank() != 2) throw std::invalid_argument("save_probability_png16: expected (H,W)");
  cv::Mat m(static_cast<int>(map.dim(0)), static_cast<int>(map.dim(1)), CV_16UC1);
  for (int64_t y = 0; y < map.dim(0); ++y)
    for (int64_t x = 0; x < map.dim(1); ++x) {
      double v = std::min(1.0, std::max(0.0, static_cast<double>(map[y * map.dim(1) + x])));
      m.at<uint16_t>(static_cast<int>(y), static_cast<int>(x)) = static_cast<uint16_t>(std::llround(v * 65535.0));
    }
  if (!cv::imwrite(path, m)) throw std::runtime_error("cannot write image '" + path + "'");
}

}  // namespace enformer
