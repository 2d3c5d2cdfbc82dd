#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "starsr/corpus.hpp"
#include "starsr/domain.hpp"
#include "starsr/image.hpp"
#include "starsr/losses.hpp"

namespace starsr {

inline constexpr double kPsnrCap = 99.0;  // returned when MSE < 1e-12

// 10*log10(max_val^2 / MSE) over all RGB elements.
double psnr(const ImageTensor& a, const ImageTensor& b, double max_val = 1.0);

// Mean local SSIM, 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03,
// dynamic range 1, channel-averaged, valid windows only.
double ssim(const ImageTensor& a, const ImageTensor& b);

// Weighted distance between channel-normalized backbone feature stacks;
// lower means more similar. With the fixed-random test backbone the numbers
// are internally consistent but not comparable to published values.
double lpips(const ImageTensor& a, const ImageTensor& b,
             FeatureBackbone<float>* backbone);

struct EvalRecord {
  Domain domain = Domain::kHr;
  bool is_average_row = false;
  std::vector<double> psnr_values;
  std::vector<double> ssim_values;
  std::vector<double> lpips_values;
  double psnr_mean = 0.0;
  double ssim_mean = 0.0;
  std::optional<double> lpips_mean;  // absent when no backbone was supplied
  bool lpips_comparable = false;     // false for the fixed-random backbone
  int image_count = 0;
  int skipped = 0;  // entries lacking the needed ground truth
};

// Maps a canonical-grid LR image to its super-resolved estimate.
using SrFunction = std::function<ImageTensor(const ImageTensor&)>;

struct EvalOptions {
  int scale = 4;
  FeatureBackbone<float>* backbone = nullptr;
  bool backbone_comparable = false;
};

// For each requested LR domain, super-resolves every manifest image with the
// HR target and scores it against the HR ground truth; appends the
// cross-domain average row (unweighted mean of the per-domain means).
std::vector<EvalRecord> evaluate(const SrFunction& sr,
                                 const CorpusManifest& manifest,
                                 const std::vector<Domain>& domains,
                                 const EvalOptions& opts = {});

// Delimited text table, one row per domain plus the average row.
std::string format_eval_table(const std::vector<EvalRecord>& records);

// Side-by-side LR input / SR output / HR panel, one row per image.
ImageTensor make_report_grid(const SrFunction& sr,
                             const CorpusManifest& manifest, Domain domain,
                             int scale = 4, int max_rows = 8);

}  // namespace starsr
