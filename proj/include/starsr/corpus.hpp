#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "starsr/degrade.hpp"
#include "starsr/domain.hpp"
#include "starsr/image.hpp"
#include "starsr/rng.hpp"

namespace starsr {

struct CorpusEntry {
  std::filesystem::path hr_path;
  std::optional<std::filesystem::path> real_lr_path;
  std::set<Domain> available_domains;

  bool has_domain(Domain d) const { return available_domains.count(d) > 0; }
};

struct CorpusManifest {
  std::filesystem::path root;
  std::vector<CorpusEntry> entries;
  uint64_t checksum = 0;
  int skipped = 0;  // unreadable files dropped at scan time

  void save(const std::filesystem::path& path) const;
  static CorpusManifest load(const std::filesystem::path& path);
};

// Scans corpus roots for HR PNGs (under <root>/hr, or <root> itself) and
// paired real-LR PNGs sharing the basename under the sibling <root>/real.
// Entries are ordered lexicographically by path; the checksum covers file
// contents so a rescan of unchanged data is identical.
CorpusManifest scan_corpus(const std::vector<std::filesystem::path>& roots);

// ---- Patch extraction -------------------------------------------------

struct PatchOffsets {
  int hr_row = 0, hr_col = 0;
  int lr_row = 0, lr_col = 0;  // hr = scale * lr by construction
};

// Uniform draw over LR-grid-aligned positions so paired HR/LR crops share
// offsets scaled consistently.
PatchOffsets sample_patch_offsets(int height, int width, int size, int scale,
                                  Rng& rng);

ImageTensor crop(const ImageTensor& img, int row0, int col0, int size);

ImageTensor extract_patch(const ImageTensor& img, int size, int scale,
                          Rng& rng);

// ---- Source/target label sampling -------------------------------------

enum class TargetSampling { kRandom, kHrOnly };

std::vector<DomainLabel> sample_target_labels(int batch, TargetSampling mode,
                                              Rng& rng);

// ---- Geometric augmentation --------------------------------------------

struct GeomTransform {
  bool hflip = false;
  bool vflip = false;
  int rot_quarters = 0;  // multiples of 90 degrees, counterclockwise
};

GeomTransform draw_geom(Rng& rng);
ImageTensor apply_geom(const ImageTensor& img, const GeomTransform& t);
ImageTensor flip_rotate(const ImageTensor& img, Rng& rng);

// ---- Mixture of augmentations ------------------------------------------

enum class MoaOp {
  kNone,
  kBlend,
  kRgbPerm,
  kMixup,
  kCutout,
  kCutMix,
  kCutMixup,
  kCutBlur,
};

std::string moa_op_name(MoaOp op);

struct AugPolicy {
  bool enabled = true;
  // Selection probabilities per op; at most one op fires per batch draw.
  std::array<double, 7> probs{};  // blend, rgbperm, mixup, cutout, cutmix,
                                  // cutmixup, cutblur
  double mixup_alpha = 1.2;
  double cut_lo = 0.1, cut_hi = 0.4;
  int canonical_scale = 4;  // cutblur down-up factor

  AugPolicy() { probs.fill(0.5 / 7.0); }

  void validate() const;
  double total_prob() const;
};

struct CutRect {
  int row0 = 0, col0 = 0, height = 0, width = 0;
};

// Everything needed to reproduce one augmentation draw.
struct MoaReport {
  MoaOp op = MoaOp::kNone;
  double lambda = 1.0;
  CutRect rect{};
  std::array<int, 3> perm{0, 1, 2};
  std::array<float, 3> blend_color{};
  int cutblur_scale = 4;
};

// Individual sub-ops (deterministic given their parameters).
ImageTensor mixup(const ImageTensor& a, const ImageTensor& b, double lambda);
ImageTensor blend(const ImageTensor& a, const std::array<float, 3>& color,
                  double lambda);
ImageTensor rgb_permute(const ImageTensor& a, const std::array<int, 3>& perm);
ImageTensor cutout(const ImageTensor& a, const CutRect& rect);
ImageTensor cutmix(const ImageTensor& a, const ImageTensor& b,
                   const CutRect& rect);
ImageTensor cutmixup(const ImageTensor& a, const ImageTensor& b,
                     const CutRect& rect, double lambda);
ImageTensor cutblur(const ImageTensor& a, const CutRect& rect, int scale);

// Draws the op and its parameters for an h x w batch shape.
MoaReport moa_draw(const AugPolicy& policy, int height, int width, Rng& rng);

// Applies one report to a full batch (same op and parameters per draw);
// batch_b supplies mixing partners at matching indices.
std::vector<ImageTensor> moa_apply_report(const std::vector<ImageTensor>& batch_a,
                                          const std::vector<ImageTensor>& batch_b,
                                          const MoaReport& report);

// Draw-and-apply; optional out-report for callers that must mirror the same
// augmentation onto paired tensors.
std::vector<ImageTensor> moa_apply(const std::vector<ImageTensor>& batch_a,
                                   const std::vector<ImageTensor>& batch_b,
                                   const AugPolicy& policy, Rng& rng,
                                   MoaReport* out_report = nullptr);

// ---- Training sample ----------------------------------------------------

struct TrainingSample {
  ImageTensor image;  // canonical grid
  DomainLabel src_label;
  DomainLabel trg_label;
  std::optional<ImageTensor> target_image;
};

}  // namespace starsr
