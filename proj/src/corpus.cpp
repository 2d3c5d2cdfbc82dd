#include "starsr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace starsr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;

void fnv_update(uint64_t& h, const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

bool is_png(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png";
}

// Cheap readability probe: the file must open and start with the PNG magic.
bool readable_png(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) return false;
  static const unsigned char magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n',
                                         0x1a, '\n'};
  unsigned char head[8] = {};
  f.read(reinterpret_cast<char*>(head), 8);
  return f.gcount() == 8 && std::equal(std::begin(magic), std::end(magic), head);
}

void hash_file(uint64_t& h, const fs::path& p) {
  const std::string rel = p.filename().string();
  fnv_update(h, rel.data(), rel.size());
  std::ifstream f(p, std::ios::binary);
  char buf[1 << 16];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
    fnv_update(h, buf, static_cast<size_t>(f.gcount()));
}

}  // namespace

CorpusManifest scan_corpus(const std::vector<fs::path>& roots) {
  CorpusManifest manifest;
  if (!roots.empty()) manifest.root = roots.front();
  std::vector<CorpusEntry> entries;
  int skipped = 0;

  for (const fs::path& root : roots) {
    if (!fs::is_directory(root))
      throw DataError("corpus root is not a directory: " + root.string());
    const fs::path hr_dir = fs::is_directory(root / "hr") ? root / "hr" : root;
    const fs::path real_dir = root / "real";

    std::vector<fs::path> hr_files;
    for (const auto& e : fs::directory_iterator(hr_dir))
      if (e.is_regular_file() && is_png(e.path())) hr_files.push_back(e.path());
    std::sort(hr_files.begin(), hr_files.end());

    for (const fs::path& hr : hr_files) {
      if (!readable_png(hr)) {
        ++skipped;
        continue;
      }
      CorpusEntry entry;
      entry.hr_path = hr;
      entry.available_domains = {Domain::kHr, Domain::kBicubicLr,
                                 Domain::kBilinearLr, Domain::kNearestLr};
      const fs::path paired = real_dir / hr.filename();
      if (fs::is_regular_file(paired)) {
        if (readable_png(paired)) {
          entry.real_lr_path = paired;
          entry.available_domains.insert(Domain::kRealLr);
        } else {
          ++skipped;
        }
      }
      entries.push_back(std::move(entry));
    }
  }

  std::sort(entries.begin(), entries.end(),
            [](const CorpusEntry& a, const CorpusEntry& b) {
              return a.hr_path < b.hr_path;
            });
  if (entries.empty()) throw DataError("empty corpus: no readable HR PNGs found");

  uint64_t h = kFnvOffset;
  for (const CorpusEntry& e : entries) {
    hash_file(h, e.hr_path);
    if (e.real_lr_path) hash_file(h, *e.real_lr_path);
  }
  manifest.entries = std::move(entries);
  manifest.checksum = h;
  manifest.skipped = skipped;
  return manifest;
}

void CorpusManifest::save(const fs::path& path) const {
  json j;
  j["root"] = root.string();
  j["checksum"] = checksum;
  j["skipped"] = skipped;
  j["entries"] = json::array();
  for (const CorpusEntry& e : entries) {
    json je;
    je["hr"] = e.hr_path.string();
    if (e.real_lr_path) je["real_lr"] = e.real_lr_path->string();
    json domains = json::array();
    for (Domain d : e.available_domains) domains.push_back(domain_name(d));
    je["domains"] = domains;
    j["entries"].push_back(je);
  }
  std::ofstream f(path);
  if (!f) throw DataError("cannot write manifest " + path.string());
  f << j.dump(2) << "\n";
}

CorpusManifest CorpusManifest::load(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read manifest " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("manifest parse error: " + std::string(e.what()));
  }
  CorpusManifest m;
  m.root = j.value("root", std::string{});
  m.checksum = j.value("checksum", uint64_t{0});
  m.skipped = j.value("skipped", 0);
  for (const json& je : j.at("entries")) {
    CorpusEntry e;
    e.hr_path = je.at("hr").get<std::string>();
    if (je.contains("real_lr"))
      e.real_lr_path = fs::path(je.at("real_lr").get<std::string>());
    for (const json& d : je.at("domains"))
      e.available_domains.insert(domain_from_name(d.get<std::string>()));
    m.entries.push_back(std::move(e));
  }
  return m;
}

PatchOffsets sample_patch_offsets(int height, int width, int size, int scale,
                                  Rng& rng) {
  if (scale <= 0) throw ConfigError("patch: scale must be positive");
  if (size % scale != 0)
    throw ConfigError("patch size " + std::to_string(size) +
                      " must be divisible by scale " + std::to_string(scale));
  if (size > height || size > width)
    throw ShapeError("patch size " + std::to_string(size) +
                     " exceeds image " + std::to_string(height) + "x" +
                     std::to_string(width));
  const int rows = (height - size) / scale + 1;
  const int cols = (width - size) / scale + 1;
  PatchOffsets off;
  off.lr_row = static_cast<int>(rng.below(rows));
  off.lr_col = static_cast<int>(rng.below(cols));
  off.hr_row = off.lr_row * scale;
  off.hr_col = off.lr_col * scale;
  return off;
}

ImageTensor crop(const ImageTensor& img, int row0, int col0, int size) {
  if (row0 < 0 || col0 < 0 || row0 + size > img.height ||
      col0 + size > img.width)
    throw ShapeError("crop out of bounds");
  ImageTensor out(img.channels, size, size);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        out.at(c, y, x) = img.at(c, row0 + y, col0 + x);
  return out;
}

ImageTensor extract_patch(const ImageTensor& img, int size, int scale,
                          Rng& rng) {
  const PatchOffsets off =
      sample_patch_offsets(img.height, img.width, size, scale, rng);
  return crop(img, off.hr_row, off.hr_col, size);
}

std::vector<DomainLabel> sample_target_labels(int batch, TargetSampling mode,
                                              Rng& rng) {
  if (batch < 1) throw ConfigError("sample_target_labels: batch must be >= 1");
  std::vector<DomainLabel> out;
  out.reserve(batch);
  for (int i = 0; i < batch; ++i) {
    if (mode == TargetSampling::kHrOnly) {
      out.push_back(encode_label(Domain::kHr));
    } else {
      out.push_back(label_from_index(static_cast<int>(rng.below(kNumDomains))));
    }
  }
  return out;
}

GeomTransform draw_geom(Rng& rng) {
  GeomTransform t;
  t.hflip = rng.coin();
  t.vflip = rng.coin();
  t.rot_quarters = static_cast<int>(rng.below(4));
  return t;
}

ImageTensor apply_geom(const ImageTensor& img, const GeomTransform& t) {
  ImageTensor cur = img;
  if (t.hflip) {
    ImageTensor out(cur.channels, cur.height, cur.width);
    for (int c = 0; c < cur.channels; ++c)
      for (int y = 0; y < cur.height; ++y)
        for (int x = 0; x < cur.width; ++x)
          out.at(c, y, x) = cur.at(c, y, cur.width - 1 - x);
    cur = std::move(out);
  }
  if (t.vflip) {
    ImageTensor out(cur.channels, cur.height, cur.width);
    for (int c = 0; c < cur.channels; ++c)
      for (int y = 0; y < cur.height; ++y)
        for (int x = 0; x < cur.width; ++x)
          out.at(c, y, x) = cur.at(c, cur.height - 1 - y, x);
    cur = std::move(out);
  }
  for (int r = 0; r < (t.rot_quarters % 4 + 4) % 4; ++r) {
    // One 90-degree counterclockwise rotation: (y, x) <- (x, W-1-y).
    ImageTensor out(cur.channels, cur.width, cur.height);
    for (int c = 0; c < cur.channels; ++c)
      for (int y = 0; y < cur.height; ++y)
        for (int x = 0; x < cur.width; ++x)
          out.at(c, cur.width - 1 - x, y) = cur.at(c, y, x);
    cur = std::move(out);
  }
  return cur;
}

ImageTensor flip_rotate(const ImageTensor& img, Rng& rng) {
  return apply_geom(img, draw_geom(rng));
}

std::string moa_op_name(MoaOp op) {
  switch (op) {
    case MoaOp::kNone: return "none";
    case MoaOp::kBlend: return "blend";
    case MoaOp::kRgbPerm: return "rgbperm";
    case MoaOp::kMixup: return "mixup";
    case MoaOp::kCutout: return "cutout";
    case MoaOp::kCutMix: return "cutmix";
    case MoaOp::kCutMixup: return "cutmixup";
    case MoaOp::kCutBlur: return "cutblur";
  }
  return "none";
}

void AugPolicy::validate() const {
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw ConfigError("augmentation probabilities must be >= 0");
    sum += p;
  }
  if (sum > 1.0 + 1e-12)
    throw ConfigError("augmentation probabilities must sum to <= 1");
  if (mixup_alpha <= 0.0) throw ConfigError("mixup_alpha must be > 0");
  if (!(cut_lo > 0.0 && cut_hi < 1.0 && cut_lo <= cut_hi))
    throw ConfigError("cut_ratio_range must satisfy 0 < lo <= hi < 1");
}

double AugPolicy::total_prob() const {
  double s = 0.0;
  for (double p : probs) s += p;
  return s;
}

ImageTensor mixup(const ImageTensor& a, const ImageTensor& b, double lambda) {
  require_same_shape(a, b, "mixup");
  ImageTensor out = a;
  const float l = static_cast<float>(lambda);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = l * a.data[i] + (1.0f - l) * b.data[i];
  return out;
}

ImageTensor blend(const ImageTensor& a, const std::array<float, 3>& color,
                  double lambda) {
  ImageTensor out = a;
  const float l = static_cast<float>(lambda);
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x)
        out.at(c, y, x) = l * a.at(c, y, x) + (1.0f - l) * color[c % 3];
  return out;
}

ImageTensor rgb_permute(const ImageTensor& a, const std::array<int, 3>& perm) {
  if (a.channels != 3) throw ShapeError("rgb_permute: expects 3 channels");
  ImageTensor out = a;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) out.at(c, y, x) = a.at(perm[c], y, x);
  return out;
}

namespace {
void check_rect(const ImageTensor& a, const CutRect& r) {
  if (r.row0 < 0 || r.col0 < 0 || r.height < 0 || r.width < 0 ||
      r.row0 + r.height > a.height || r.col0 + r.width > a.width)
    throw ShapeError("cut rectangle out of bounds");
}
}  // namespace

ImageTensor cutout(const ImageTensor& a, const CutRect& r) {
  check_rect(a, r);
  ImageTensor out = a;
  for (int c = 0; c < a.channels; ++c)
    for (int y = r.row0; y < r.row0 + r.height; ++y)
      for (int x = r.col0; x < r.col0 + r.width; ++x) out.at(c, y, x) = 0.0f;
  return out;
}

ImageTensor cutmix(const ImageTensor& a, const ImageTensor& b,
                   const CutRect& r) {
  require_same_shape(a, b, "cutmix");
  check_rect(a, r);
  ImageTensor out = a;
  for (int c = 0; c < a.channels; ++c)
    for (int y = r.row0; y < r.row0 + r.height; ++y)
      for (int x = r.col0; x < r.col0 + r.width; ++x)
        out.at(c, y, x) = b.at(c, y, x);
  return out;
}

ImageTensor cutmixup(const ImageTensor& a, const ImageTensor& b,
                     const CutRect& r, double lambda) {
  require_same_shape(a, b, "cutmixup");
  check_rect(a, r);
  ImageTensor out = a;
  const float l = static_cast<float>(lambda);
  for (int c = 0; c < a.channels; ++c)
    for (int y = r.row0; y < r.row0 + r.height; ++y)
      for (int x = r.col0; x < r.col0 + r.width; ++x)
        out.at(c, y, x) = l * a.at(c, y, x) + (1.0f - l) * b.at(c, y, x);
  return out;
}

ImageTensor cutblur(const ImageTensor& a, const CutRect& r, int scale) {
  check_rect(a, r);
  DownsampleKernel kernel;
  kernel.method = KernelMethod::kBicubic;
  kernel.scale = scale;
  const ImageTensor degraded =
      to_canonical_grid(downsample(a, kernel), scale, KernelMethod::kBicubic);
  ImageTensor out = a;
  for (int c = 0; c < a.channels; ++c)
    for (int y = r.row0; y < r.row0 + r.height; ++y)
      for (int x = r.col0; x < r.col0 + r.width; ++x)
        out.at(c, y, x) = degraded.at(c, y, x);
  return out;
}

namespace {

// Integer rectangle whose area ratio is guaranteed inside [lo, hi].
std::optional<CutRect> draw_cut_rect(int height, int width, double lo,
                                     double hi, Rng& rng) {
  const auto area = static_cast<double>(height) * width;
  const int h_lo = std::max(1, static_cast<int>(std::ceil(std::sqrt(lo) * height)));
  const int h_hi = std::min(height, static_cast<int>(std::floor(std::sqrt(hi) * height)));
  if (h_lo > h_hi) return std::nullopt;
  const int h = h_lo + static_cast<int>(rng.below(h_hi - h_lo + 1));
  const int w_lo = std::max(1, static_cast<int>(std::ceil(lo * area / h)));
  const int w_hi = std::min(width, static_cast<int>(std::floor(hi * area / h)));
  if (w_lo > w_hi) return std::nullopt;
  const int w = w_lo + static_cast<int>(rng.below(w_hi - w_lo + 1));
  CutRect r;
  r.height = h;
  r.width = w;
  r.row0 = static_cast<int>(rng.below(height - h + 1));
  r.col0 = static_cast<int>(rng.below(width - w + 1));
  return r;
}

}  // namespace

MoaReport moa_draw(const AugPolicy& policy, int height, int width, Rng& rng) {
  policy.validate();
  MoaReport rep;
  rep.cutblur_scale = policy.canonical_scale;
  if (!policy.enabled) return rep;
  const double u = rng.uniform();
  double cum = 0.0;
  int chosen = -1;
  for (int i = 0; i < 7; ++i) {
    cum += policy.probs[i];
    if (u < cum) {
      chosen = i;
      break;
    }
  }
  if (chosen < 0) return rep;  // the remaining mass applies no op

  static constexpr MoaOp kOps[7] = {MoaOp::kBlend,  MoaOp::kRgbPerm,
                                    MoaOp::kMixup,  MoaOp::kCutout,
                                    MoaOp::kCutMix, MoaOp::kCutMixup,
                                    MoaOp::kCutBlur};
  rep.op = kOps[chosen];
  switch (rep.op) {
    case MoaOp::kBlend:
      for (auto& c : rep.blend_color) c = static_cast<float>(rng.uniform());
      rep.lambda = rng.uniform(0.5, 1.0);
      break;
    case MoaOp::kRgbPerm: {
      static constexpr std::array<int, 3> kPerms[6] = {
          {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
      rep.perm = kPerms[rng.below(6)];
      break;
    }
    case MoaOp::kMixup:
      rep.lambda = rng.beta(policy.mixup_alpha, policy.mixup_alpha);
      break;
    case MoaOp::kCutout:
    case MoaOp::kCutMix:
    case MoaOp::kCutBlur: {
      auto r = draw_cut_rect(height, width, policy.cut_lo, policy.cut_hi, rng);
      if (!r) {
        rep.op = MoaOp::kNone;
        break;
      }
      rep.rect = *r;
      break;
    }
    case MoaOp::kCutMixup: {
      auto r = draw_cut_rect(height, width, policy.cut_lo, policy.cut_hi, rng);
      if (!r) {
        rep.op = MoaOp::kNone;
        break;
      }
      rep.rect = *r;
      rep.lambda = rng.beta(policy.mixup_alpha, policy.mixup_alpha);
      break;
    }
    default:
      break;
  }
  return rep;
}

std::vector<ImageTensor> moa_apply_report(
    const std::vector<ImageTensor>& batch_a,
    const std::vector<ImageTensor>& batch_b, const MoaReport& report) {
  if (batch_a.size() != batch_b.size())
    throw ShapeError("moa: partner batch size mismatch");
  std::vector<ImageTensor> out;
  out.reserve(batch_a.size());
  for (size_t i = 0; i < batch_a.size(); ++i) {
    const ImageTensor& a = batch_a[i];
    const ImageTensor& b = batch_b[i];
    require_same_shape(a, b, "moa");
    switch (report.op) {
      case MoaOp::kNone: out.push_back(a); break;
      case MoaOp::kBlend:
        out.push_back(blend(a, report.blend_color, report.lambda));
        break;
      case MoaOp::kRgbPerm: out.push_back(rgb_permute(a, report.perm)); break;
      case MoaOp::kMixup: out.push_back(mixup(a, b, report.lambda)); break;
      case MoaOp::kCutout: out.push_back(cutout(a, report.rect)); break;
      case MoaOp::kCutMix: out.push_back(cutmix(a, b, report.rect)); break;
      case MoaOp::kCutMixup:
        out.push_back(cutmixup(a, b, report.rect, report.lambda));
        break;
      case MoaOp::kCutBlur:
        out.push_back(cutblur(a, report.rect, report.cutblur_scale));
        break;
    }
  }
  return out;
}

std::vector<ImageTensor> moa_apply(const std::vector<ImageTensor>& batch_a,
                                   const std::vector<ImageTensor>& batch_b,
                                   const AugPolicy& policy, Rng& rng,
                                   MoaReport* out_report) {
  if (batch_a.empty()) return {};
  const MoaReport rep =
      moa_draw(policy, batch_a.front().height, batch_a.front().width, rng);
  if (out_report) *out_report = rep;
  return moa_apply_report(batch_a, batch_b, rep);
}

}  // namespace starsr
