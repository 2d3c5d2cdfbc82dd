#pragma once

#include <cstdint>
#include <vector>

#include "starsr/domain.hpp"
#include "starsr/image.hpp"
#include "starsr/rng.hpp"

namespace starsr {

enum class KernelMethod { kBicubic, kBilinear, kNearest };

// Forward observation operator: convolve-and-resize by integer scale s.
struct DownsampleKernel {
  KernelMethod method = KernelMethod::kBicubic;
  int scale = 4;
  double bicubic_a = -0.75;
  bool antialias = false;
};

struct NoiseSpec {
  double sigma = 0.0;  // std in [0,1] intensity units
  uint64_t seed = 0;
};

// One row of resampling weights for output index `out_index` on an axis
// resized from in_size to out_size samples. Tap indices run
// first..first+weights.size()-1 before reflection.
struct KernelTaps {
  int first = 0;
  std::vector<double> weights;
};

KernelTaps resample_taps(KernelMethod method, int in_size, int out_size,
                         int out_index, double bicubic_a, bool antialias);

// Symmetric reflection (edge repeated): -1 -> 0, n -> n-1.
int reflect_index(int i, int n);

ImageTensor downsample(const ImageTensor& img, const DownsampleKernel& kernel);
ImageTensor add_noise(const ImageTensor& img, const NoiseSpec& spec);

// Kernel downsampling then noise; target must be one of the three synthetic
// LR domains. RealLR comes only from paired data and HR is not a synthesis
// target.
ImageTensor synth_lr(const ImageTensor& hr, const DomainLabel& target,
                     const NoiseSpec& noise);

// Lifts an LR-grid image onto the HR ("canonical") grid: s x height and
// width, bicubic interpolation by default. Every tensor entering the
// generator lives on this grid.
ImageTensor to_canonical_grid(const ImageTensor& img, int scale,
                              KernelMethod method = KernelMethod::kBicubic);

KernelMethod kernel_for_domain(Domain d);

}  // namespace starsr
