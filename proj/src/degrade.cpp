#include "starsr/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

namespace starsr {

namespace {

double cubic_weight(double x, double a) {
  x = std::fabs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return a * (((x - 5.0) * x + 8.0) * x - 4.0);
  return 0.0;
}

double linear_weight(double x) {
  x = std::fabs(x);
  return x < 1.0 ? 1.0 - x : 0.0;
}

// Separable resample along one axis (in_size -> out_size samples).
void resample_axis(const float* src, float* dst, int channels, int rows,
                   int in_size, int out_size, size_t src_row_stride,
                   size_t src_col_stride, size_t dst_row_stride,
                   size_t dst_col_stride, size_t plane_in, size_t plane_out,
                   KernelMethod method, double a, bool antialias) {
  if (method == KernelMethod::kNearest) {
    for (int c = 0; c < channels; ++c)
      for (int r = 0; r < rows; ++r)
        for (int o = 0; o < out_size; ++o) {
          // floor(o * in/out) in exact integer arithmetic.
          const int i = std::min(
              static_cast<int>(static_cast<int64_t>(o) * in_size / out_size),
              in_size - 1);
          dst[c * plane_out + r * dst_row_stride + o * dst_col_stride] =
              src[c * plane_in + r * src_row_stride + i * src_col_stride];
        }
    return;
  }
  std::vector<KernelTaps> taps(out_size);
  for (int o = 0; o < out_size; ++o)
    taps[o] = resample_taps(method, in_size, out_size, o, a, antialias);
  for (int c = 0; c < channels; ++c)
    for (int r = 0; r < rows; ++r) {
      const float* in_row = src + c * plane_in + r * src_row_stride;
      float* out_row = dst + c * plane_out + r * dst_row_stride;
      for (int o = 0; o < out_size; ++o) {
        const KernelTaps& t = taps[o];
        double acc = 0.0;
        for (size_t k = 0; k < t.weights.size(); ++k) {
          const int i = reflect_index(t.first + static_cast<int>(k), in_size);
          acc += t.weights[k] *
                 static_cast<double>(in_row[i * src_col_stride]);
        }
        out_row[o * dst_col_stride] = static_cast<float>(acc);
      }
    }
}

ImageTensor resample(const ImageTensor& img, int out_h, int out_w,
                     KernelMethod method, double a, bool antialias) {
  // Horizontal pass, then vertical.
  ImageTensor tmp(img.channels, img.height, out_w);
  resample_axis(img.data.data(), tmp.data.data(), img.channels, img.height,
                img.width, out_w, img.width, 1, out_w, 1,
                static_cast<size_t>(img.height) * img.width,
                static_cast<size_t>(img.height) * out_w, method, a, antialias);
  ImageTensor out(img.channels, out_h, out_w);
  resample_axis(tmp.data.data(), out.data.data(), img.channels, out_w,
                img.height, out_h, 1, out_w, 1, out_w,
                static_cast<size_t>(img.height) * out_w,
                static_cast<size_t>(out_h) * out_w, method, a, antialias);
  return out;
}

}  // namespace

int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

KernelTaps resample_taps(KernelMethod method, int in_size, int out_size,
                         int out_index, double bicubic_a, bool antialias) {
  if (method == KernelMethod::kNearest) {
    KernelTaps t;
    t.first = static_cast<int>(static_cast<int64_t>(out_index) * in_size /
                               out_size);
    t.weights = {1.0};
    return t;
  }
  const double ratio = static_cast<double>(in_size) / out_size;
  // Source center under the half-pixel convention (aligned corners disabled).
  const double center =
      (static_cast<double>(2 * out_index + 1) * in_size - out_size) /
      (2.0 * out_size);
  const double base_support = method == KernelMethod::kBicubic ? 2.0 : 1.0;
  // Antialiasing stretches the kernel by the shrink factor.
  const double stretch = (antialias && ratio > 1.0) ? ratio : 1.0;
  const double support = base_support * stretch;

  KernelTaps t;
  t.first = static_cast<int>(std::floor(center - support)) + 1;
  const int last = static_cast<int>(std::floor(center + support));
  double sum = 0.0;
  for (int i = t.first; i <= last; ++i) {
    const double x = (i - center) / stretch;
    const double w = method == KernelMethod::kBicubic
                         ? cubic_weight(x, bicubic_a)
                         : linear_weight(x);
    t.weights.push_back(w);
    sum += w;
  }
  if (antialias && ratio > 1.0 && sum != 0.0)
    for (double& w : t.weights) w /= sum;
  return t;
}

ImageTensor downsample(const ImageTensor& img, const DownsampleKernel& kernel) {
  if (kernel.scale <= 0)
    throw ConfigError("downsample: scale must be a positive integer");
  if (img.height < 1 || img.width < 1)
    throw ShapeError("downsample: empty image");
  if (img.height % kernel.scale != 0 || img.width % kernel.scale != 0)
    throw ShapeError("downsample: image " + std::to_string(img.height) + "x" +
                     std::to_string(img.width) + " not divisible by scale " +
                     std::to_string(kernel.scale));
  const int out_h = img.height / kernel.scale;
  const int out_w = img.width / kernel.scale;
  return resample(img, out_h, out_w, kernel.method, kernel.bicubic_a,
                  kernel.antialias);
}

ImageTensor add_noise(const ImageTensor& img, const NoiseSpec& spec) {
  if (spec.sigma < 0.0) throw ConfigError("add_noise: sigma must be >= 0");
  if (spec.sigma == 0.0) return img;
  ImageTensor out = img;
  Rng rng(spec.seed);
  for (float& v : out.data)
    v += static_cast<float>(spec.sigma * rng.gaussian());
  return out;
}

ImageTensor synth_lr(const ImageTensor& hr, const DomainLabel& target,
                     const NoiseSpec& noise) {
  if (target.id == Domain::kRealLr)
    throw ConfigError(
        "synth_lr: RealLR cannot be synthesized; it comes only from paired "
        "data");
  if (target.id == Domain::kHr)
    throw ConfigError("synth_lr: HR is not a synthesis target");
  DownsampleKernel kernel;
  kernel.method = kernel_for_domain(target.id);
  return add_noise(downsample(hr, kernel), noise);
}

ImageTensor to_canonical_grid(const ImageTensor& img, int scale,
                              KernelMethod method) {
  if (scale <= 0)
    throw ConfigError("to_canonical_grid: scale must be a positive integer");
  return resample(img, img.height * scale, img.width * scale, method, -0.75,
                  false);
}

KernelMethod kernel_for_domain(Domain d) {
  switch (d) {
    case Domain::kBicubicLr: return KernelMethod::kBicubic;
    case Domain::kBilinearLr: return KernelMethod::kBilinear;
    case Domain::kNearestLr: return KernelMethod::kNearest;
    default:
      throw ConfigError("no downsampling kernel for domain " + domain_name(d));
  }
}

}  // namespace starsr
