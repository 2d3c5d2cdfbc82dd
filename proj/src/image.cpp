#include "starsr/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace starsr {

bool all_finite(const ImageTensor& img) {
  for (float v : img.data)
    if (!std::isfinite(v)) return false;
  return true;
}

void require_same_shape(const ImageTensor& a, const ImageTensor& b,
                        const char* where) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(where) + ": shape mismatch (" +
                     std::to_string(a.channels) + "x" +
                     std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " vs " + std::to_string(b.channels) + "x" +
                     std::to_string(b.height) + "x" + std::to_string(b.width) +
                     ")");
  }
}

ImageTensor clamp01(const ImageTensor& img) {
  ImageTensor out = img;
  for (float& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

ImageStats image_stats(const ImageTensor& img) {
  ImageStats st;
  if (img.data.empty()) return st;
  double sum = 0.0;
  for (float v : img.data) sum += v;
  st.mean = sum / static_cast<double>(img.size());
  double sq = 0.0;
  for (float v : img.data) {
    const double d = v - st.mean;
    sq += d * d;
  }
  st.stddev = std::sqrt(sq / static_cast<double>(img.size()));
  return st;
}

}  // namespace starsr
