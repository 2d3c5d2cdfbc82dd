#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "starsr/common.hpp"

namespace starsr {

// Planar CHW float image, RGB, values nominally in [0, 1].
struct ImageTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(static_cast<size_t>(c) * h * w, 0.0f) {}

  size_t size() const { return data.size(); }

  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }

  bool same_shape(const ImageTensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  static ImageTensor constant(int c, int h, int w, float value) {
    ImageTensor img(c, h, w);
    std::fill(img.data.begin(), img.data.end(), value);
    return img;
  }

  static ImageTensor from_fn(int c, int h, int w,
                             const std::function<float(int, int, int)>& fn) {
    ImageTensor img(c, h, w);
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.at(ci, y, x) = fn(ci, y, x);
    return img;
  }
};

bool all_finite(const ImageTensor& img);
void require_same_shape(const ImageTensor& a, const ImageTensor& b,
                        const char* where);
ImageTensor clamp01(const ImageTensor& img);

// Mean and standard deviation over all elements (double accumulation).
struct ImageStats {
  double mean = 0.0;
  double stddev = 0.0;
};
ImageStats image_stats(const ImageTensor& img);

}  // namespace starsr
