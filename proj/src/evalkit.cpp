#include "starsr/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "starsr/degrade.hpp"
#include "starsr/png_io.hpp"

namespace starsr {

namespace {

double mse(const ImageTensor& a, const ImageTensor& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (double& x : w) x /= sum;
  return w;
}

}  // namespace

double psnr(const ImageTensor& a, const ImageTensor& b, double max_val) {
  require_same_shape(a, b, "psnr");
  const double m = mse(a, b);
  if (m < 1e-12) return kPsnrCap;
  return 10.0 * std::log10(max_val * max_val / m);
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "ssim");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kK1 = 0.01, kK2 = 0.03, kL = 1.0;
  const double c1 = (kK1 * kL) * (kK1 * kL);
  const double c2 = (kK2 * kL) * (kK2 * kL);
  if (a.height < kWin || a.width < kWin)
    throw ShapeError("ssim: image sides must be >= 11");

  const std::vector<double> win = gaussian_window(kWin, kSigma);
  const int oh = a.height - kWin + 1;
  const int ow = a.width - kWin + 1;

  // Separable windowed moments per channel, valid windows only.
  auto filter = [&](const ImageTensor& img, int ch, std::vector<double>& out,
                    bool squared, const ImageTensor* other) {
    // Horizontal pass.
    std::vector<double> tmp(static_cast<size_t>(a.height) * ow);
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int k = 0; k < kWin; ++k) {
          double v = img.at(ch, y, x + k);
          if (squared) v *= v;
          if (other) v = img.at(ch, y, x + k) * other->at(ch, y, x + k);
          acc += v * win[k];
        }
        tmp[static_cast<size_t>(y) * ow + x] = acc;
      }
    out.assign(static_cast<size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int k = 0; k < kWin; ++k)
          acc += tmp[static_cast<size_t>(y + k) * ow + x] * win[k];
        out[static_cast<size_t>(y) * ow + x] = acc;
      }
  };

  double total = 0.0;
  for (int ch = 0; ch < a.channels; ++ch) {
    std::vector<double> mu_a, mu_b, aa, bb, ab;
    filter(a, ch, mu_a, false, nullptr);
    filter(b, ch, mu_b, false, nullptr);
    filter(a, ch, aa, true, nullptr);
    filter(b, ch, bb, true, nullptr);
    filter(a, ch, ab, false, &b);
    double acc = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = aa[i] - ma * ma;
      const double vb = bb[i] - mb * mb;
      const double cov = ab[i] - ma * mb;
      acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / a.channels;
}

double lpips(const ImageTensor& a, const ImageTensor& b,
             FeatureBackbone<float>* backbone) {
  require_same_shape(a, b, "lpips");
  if (backbone == nullptr)
    throw ConfigError("lpips: backbone unavailable");
  nn::Tape<float> tape;
  auto ia = tape.leaf(nn::from_image<float>(a));
  auto ib = tape.leaf(nn::from_image<float>(b));
  auto fa = backbone->features(tape, ia);
  auto fb = backbone->features(tape, ib);

  double total = 0.0;
  for (size_t l = 0; l < fa.size(); ++l) {
    const auto& ta = tape.val(fa[l]);
    const auto& tb = tape.val(fb[l]);
    const int c = ta.c(), h = ta.h(), w = ta.w();
    double layer_acc = 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        // Unit-normalize each feature column across channels, then take the
        // squared distance.
        double na = 0.0, nb = 0.0;
        for (int ci = 0; ci < c; ++ci) {
          na += static_cast<double>(ta.at(ci, y, x)) * ta.at(ci, y, x);
          nb += static_cast<double>(tb.at(ci, y, x)) * tb.at(ci, y, x);
        }
        na = std::sqrt(na) + 1e-10;
        nb = std::sqrt(nb) + 1e-10;
        for (int ci = 0; ci < c; ++ci) {
          const double d = ta.at(ci, y, x) / na - tb.at(ci, y, x) / nb;
          layer_acc += d * d;
        }
      }
    total += layer_acc / (static_cast<double>(h) * w);
  }
  return total / static_cast<double>(fa.size());
}

std::vector<EvalRecord> evaluate(const SrFunction& sr,
                                 const CorpusManifest& manifest,
                                 const std::vector<Domain>& domains,
                                 const EvalOptions& opts) {
  std::vector<EvalRecord> records;
  for (Domain d : domains) {
    if (d == Domain::kHr)
      throw ConfigError("evaluate: HR is the target, not an input domain");
    EvalRecord rec;
    rec.domain = d;
    rec.lpips_comparable = opts.backbone_comparable;
    for (const CorpusEntry& entry : manifest.entries) {
      if (!entry.has_domain(d) || !entry.has_domain(Domain::kHr)) {
        ++rec.skipped;
        continue;
      }
      const ImageTensor hr = read_png(entry.hr_path);
      ImageTensor lr_native;
      if (d == Domain::kRealLr) {
        lr_native = read_png(*entry.real_lr_path);
      } else {
        lr_native = synth_lr(hr, encode_label(d), NoiseSpec{});
      }
      const ImageTensor lifted = to_canonical_grid(lr_native, opts.scale);
      const ImageTensor out = sr(lifted);
      rec.psnr_values.push_back(psnr(out, hr));
      rec.ssim_values.push_back(ssim(out, hr));
      if (opts.backbone)
        rec.lpips_values.push_back(lpips(out, hr, opts.backbone));
    }
    rec.image_count = static_cast<int>(rec.psnr_values.size());
    auto mean = [](const std::vector<double>& v) {
      return v.empty() ? 0.0
                       : std::accumulate(v.begin(), v.end(), 0.0) /
                             static_cast<double>(v.size());
    };
    rec.psnr_mean = mean(rec.psnr_values);
    rec.ssim_mean = mean(rec.ssim_values);
    if (opts.backbone && !rec.lpips_values.empty())
      rec.lpips_mean = mean(rec.lpips_values);
    records.push_back(std::move(rec));
  }

  if (!records.empty()) {
    // Average row: unweighted mean of the per-domain means.
    EvalRecord avg;
    avg.is_average_row = true;
    avg.lpips_comparable = opts.backbone_comparable;
    double p = 0.0, s = 0.0, l = 0.0;
    int lp_count = 0;
    for (const EvalRecord& r : records) {
      p += r.psnr_mean;
      s += r.ssim_mean;
      if (r.lpips_mean) {
        l += *r.lpips_mean;
        ++lp_count;
      }
      avg.image_count += r.image_count;
      avg.skipped += r.skipped;
    }
    avg.psnr_mean = p / static_cast<double>(records.size());
    avg.ssim_mean = s / static_cast<double>(records.size());
    if (lp_count == static_cast<int>(records.size()) && lp_count > 0)
      avg.lpips_mean = l / static_cast<double>(lp_count);
    records.push_back(std::move(avg));
  }
  return records;
}

std::string format_eval_table(const std::vector<EvalRecord>& records) {
  std::ostringstream os;
  os << "domain\timages\tskipped\tPSNR\tSSIM\tLPIPS\n";
  os.setf(std::ios::fixed);
  for (const EvalRecord& r : records) {
    os.precision(4);
    os << (r.is_average_row ? "average" : domain_name(r.domain)) << "\t"
       << r.image_count << "\t" << r.skipped << "\t";
    os.precision(2);
    os << r.psnr_mean << "\t";
    os.precision(4);
    os << r.ssim_mean << "\t";
    if (r.lpips_mean) {
      os << *r.lpips_mean;
      if (!r.lpips_comparable) os << " (fixed-random backbone)";
    } else {
      os << "n/a";
    }
    os << "\n";
  }
  return os.str();
}

ImageTensor make_report_grid(const SrFunction& sr,
                             const CorpusManifest& manifest, Domain domain,
                             int scale, int max_rows) {
  std::vector<std::array<ImageTensor, 3>> rows;
  int h = 0, w = 0;
  for (const CorpusEntry& entry : manifest.entries) {
    if (static_cast<int>(rows.size()) >= max_rows) break;
    if (!entry.has_domain(domain)) continue;
    const ImageTensor hr = read_png(entry.hr_path);
    ImageTensor lr_native = domain == Domain::kRealLr
                                ? read_png(*entry.real_lr_path)
                                : synth_lr(hr, encode_label(domain), NoiseSpec{});
    ImageTensor lifted = to_canonical_grid(lr_native, scale);
    ImageTensor out = clamp01(sr(lifted));
    if (rows.empty()) {
      h = hr.height;
      w = hr.width;
    }
    if (hr.height != h || hr.width != w) continue;  // grid needs equal tiles
    rows.push_back({std::move(lifted), std::move(out), hr});
  }
  if (rows.empty()) throw DataError("report grid: no images for domain");

  constexpr int kGap = 4;
  const int grid_h = static_cast<int>(rows.size()) * h +
                     (static_cast<int>(rows.size()) - 1) * kGap;
  const int grid_w = 3 * w + 2 * kGap;
  ImageTensor grid = ImageTensor::constant(3, grid_h, grid_w, 1.0f);
  for (size_t r = 0; r < rows.size(); ++r)
    for (int col = 0; col < 3; ++col) {
      const ImageTensor& tile = rows[r][col];
      const int y0 = static_cast<int>(r) * (h + kGap);
      const int x0 = col * (w + kGap);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            grid.at(c, y0 + y, x0 + x) = std::clamp(tile.at(c, y, x), 0.0f, 1.0f);
    }
  return grid;
}

}  // namespace starsr
