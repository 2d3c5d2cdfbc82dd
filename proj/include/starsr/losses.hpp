#pragma once

#include <cmath>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "starsr/domain.hpp"
#include "starsr/nn.hpp"

namespace starsr {

// Objective weights of the generator and discriminator losses. Defaults are
// the published formulation: unweighted terms at 1, content and cycle at 10.
struct LossWeights {
  double per = 1.0;
  double gan = 1.0;
  double tv = 1.0;
  double cls = 1.0;
  double l1 = 10.0;
  double cyc = 10.0;
  double gan_d = 1.0;
  double cls_r = 1.0;

  void validate() const {
    for (double w : {per, gan, tv, cls, l1, cyc, gan_d, cls_r})
      if (w < 0.0 || !std::isfinite(w))
        throw ConfigError("loss weights must be finite and >= 0");
  }
};

namespace nnops {

using nn::Tape;
using nn::Tensor;

template <class T>
T stable_softplus(T x) {
  // log(1 + e^x) without overflow.
  const T ax = std::fabs(x);
  return std::max(x, T(0)) + std::log1p(std::exp(-ax));
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// Mean absolute difference; backs both the content (L1) and cyclic losses.
template <class T>
typename Tape<T>::Id mean_abs_diff(Tape<T>& tape, typename Tape<T>::Id a,
                                   typename Tape<T>::Id b) {
  const Tensor<T>& av = tape.val(a);
  const Tensor<T>& bv = tape.val(b);
  if (!av.same_shape(bv)) throw ShapeError("l1: shape mismatch");
  auto out = tape.new_node({1}, tape.needs_grad(a) || tape.needs_grad(b));
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i)
    acc += std::fabs(static_cast<double>(av.v[i]) - bv.v[i]);
  const size_t n = av.size();
  tape.mutable_val(out).v[0] = static_cast<T>(acc / n);
  tape.record([&tape, a, b, out, n]() {
    if (!tape.has_grad(out)) return;
    const T dy = tape.grad(out).v[0] / static_cast<T>(n);
    const Tensor<T>& av2 = tape.val(a);
    const Tensor<T>& bv2 = tape.val(b);
    for (size_t i = 0; i < av2.size(); ++i) {
      const T s = av2.v[i] > bv2.v[i] ? dy : (av2.v[i] < bv2.v[i] ? -dy : T(0));
      if (tape.needs_grad(a)) tape.grad(a).v[i] += s;
      if (tape.needs_grad(b)) tape.grad(b).v[i] -= s;
    }
  });
  return out;
}

// Anisotropic total variation: mean |horizontal forward difference| plus
// mean |vertical forward difference|, each over its own pair count.
template <class T>
typename Tape<T>::Id tv_loss(Tape<T>& tape, typename Tape<T>::Id x) {
  const Tensor<T>& xv = tape.val(x);
  const int c = xv.c(), h = xv.h(), w = xv.w();
  if (h < 2 || w < 2)
    throw ShapeError("tv: image must be at least 2x2");
  auto out = tape.new_node({1}, tape.needs_grad(x));
  double acc_h = 0.0, acc_v = 0.0;
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        if (xx + 1 < w)
          acc_h += std::fabs(static_cast<double>(xv.at(ci, y, xx + 1)) -
                             xv.at(ci, y, xx));
        if (y + 1 < h)
          acc_v += std::fabs(static_cast<double>(xv.at(ci, y + 1, xx)) -
                             xv.at(ci, y, xx));
      }
  const size_t nh = static_cast<size_t>(c) * h * (w - 1);
  const size_t nv = static_cast<size_t>(c) * (h - 1) * w;
  tape.mutable_val(out).v[0] = static_cast<T>(acc_h / nh + acc_v / nv);
  if (tape.needs_grad(x)) {
    tape.record([&tape, x, out, c, h, w, nh, nv]() {
      if (!tape.has_grad(out)) return;
      const T dy = tape.grad(out).v[0];
      const Tensor<T>& xv2 = tape.val(x);
      Tensor<T>& gx = tape.grad(x);
      const T sh = dy / static_cast<T>(nh), sv = dy / static_cast<T>(nv);
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            if (xx + 1 < w) {
              const T d = xv2.at(ci, y, xx + 1) - xv2.at(ci, y, xx);
              const T s = d > T(0) ? sh : (d < T(0) ? -sh : T(0));
              gx.at(ci, y, xx + 1) += s;
              gx.at(ci, y, xx) -= s;
            }
            if (y + 1 < h) {
              const T d = xv2.at(ci, y + 1, xx) - xv2.at(ci, y, xx);
              const T s = d > T(0) ? sv : (d < T(0) ? -sv : T(0));
              gx.at(ci, y + 1, xx) += s;
              gx.at(ci, y, xx) -= s;
            }
          }
    });
  }
  return out;
}

// Mean squared difference (the perceptual distance on feature maps).
template <class T>
typename Tape<T>::Id mean_sq_diff(Tape<T>& tape, typename Tape<T>::Id a,
                                  typename Tape<T>::Id b) {
  const Tensor<T>& av = tape.val(a);
  const Tensor<T>& bv = tape.val(b);
  if (!av.same_shape(bv)) throw ShapeError("mse: shape mismatch");
  auto out = tape.new_node({1}, tape.needs_grad(a) || tape.needs_grad(b));
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av.v[i]) - bv.v[i];
    acc += d * d;
  }
  const size_t n = av.size();
  tape.mutable_val(out).v[0] = static_cast<T>(acc / n);
  tape.record([&tape, a, b, out, n]() {
    if (!tape.has_grad(out)) return;
    const T dy = tape.grad(out).v[0] * T(2) / static_cast<T>(n);
    const Tensor<T>& av2 = tape.val(a);
    const Tensor<T>& bv2 = tape.val(b);
    for (size_t i = 0; i < av2.size(); ++i) {
      const T d = av2.v[i] - bv2.v[i];
      if (tape.needs_grad(a)) tape.grad(a).v[i] += dy * d;
      if (tape.needs_grad(b)) tape.grad(b).v[i] -= dy * d;
    }
  });
  return out;
}

// Non-saturating BCE pieces on patch score logits.
// bce_toward_real = mean softplus(-x): the score should look real.
// bce_toward_fake = mean softplus(x): the score should look fake.
template <class T>
typename Tape<T>::Id bce_toward_real(Tape<T>& tape, typename Tape<T>::Id x) {
  const Tensor<T>& xv = tape.val(x);
  auto out = tape.new_node({1}, tape.needs_grad(x));
  double acc = 0.0;
  for (const T& t : xv.v) acc += static_cast<double>(stable_softplus(-t));
  const size_t n = xv.size();
  tape.mutable_val(out).v[0] = static_cast<T>(acc / n);
  if (tape.needs_grad(x)) {
    tape.record([&tape, x, out, n]() {
      if (!tape.has_grad(out)) return;
      const T dy = tape.grad(out).v[0] / static_cast<T>(n);
      const Tensor<T>& xv2 = tape.val(x);
      Tensor<T>& gx = tape.grad(x);
      for (size_t i = 0; i < xv2.size(); ++i)
        gx.v[i] += dy * (sigmoid(xv2.v[i]) - T(1));
    });
  }
  return out;
}

template <class T>
typename Tape<T>::Id bce_toward_fake(Tape<T>& tape, typename Tape<T>::Id x) {
  const Tensor<T>& xv = tape.val(x);
  auto out = tape.new_node({1}, tape.needs_grad(x));
  double acc = 0.0;
  for (const T& t : xv.v) acc += static_cast<double>(stable_softplus(t));
  const size_t n = xv.size();
  tape.mutable_val(out).v[0] = static_cast<T>(acc / n);
  if (tape.needs_grad(x)) {
    tape.record([&tape, x, out, n]() {
      if (!tape.has_grad(out)) return;
      const T dy = tape.grad(out).v[0] / static_cast<T>(n);
      const Tensor<T>& xv2 = tape.val(x);
      Tensor<T>& gx = tape.grad(x);
      for (size_t i = 0; i < xv2.size(); ++i) gx.v[i] += dy * sigmoid(xv2.v[i]);
    });
  }
  return out;
}

// Generator adversarial loss: fake patch scores pushed toward "real".
template <class T>
typename Tape<T>::Id adversarial_g(Tape<T>& tape,
                                   typename Tape<T>::Id trg_map_fake) {
  return bce_toward_real(tape, trg_map_fake);
}

// Discriminator adversarial loss: real scores toward "real", fake toward
// "fake"; two-sided BCE returned as a minimization loss.
template <class T>
typename Tape<T>::Id adversarial_d(Tape<T>& tape,
                                   typename Tape<T>::Id trg_map_real,
                                   typename Tape<T>::Id trg_map_fake) {
  return nn::add(tape, bce_toward_real(tape, trg_map_real),
                 bce_toward_fake(tape, trg_map_fake));
}

// Cross-entropy of 5-way logits against a one-hot domain label.
template <class T>
typename Tape<T>::Id cls_loss(Tape<T>& tape, typename Tape<T>::Id logits,
                              const DomainLabel& label) {
  const Tensor<T>& lv = tape.val(logits);
  if (lv.size() != kNumDomains)
    throw ShapeError("cls: expected " + std::to_string(kNumDomains) +
                     " logits, got " + std::to_string(lv.size()));
  const int target = static_cast<int>(label.id);
  auto out = tape.new_node({1}, tape.needs_grad(logits));
  double mx = -1e300;
  for (const T& t : lv.v) mx = std::max(mx, static_cast<double>(t));
  double lse = 0.0;
  for (const T& t : lv.v) lse += std::exp(static_cast<double>(t) - mx);
  lse = mx + std::log(lse);
  tape.mutable_val(out).v[0] =
      static_cast<T>(lse - static_cast<double>(lv.v[target]));
  if (tape.needs_grad(logits)) {
    tape.record([&tape, logits, out, target, lse]() {
      if (!tape.has_grad(out)) return;
      const T dy = tape.grad(out).v[0];
      const Tensor<T>& lv2 = tape.val(logits);
      Tensor<T>& gl = tape.grad(logits);
      for (int i = 0; i < kNumDomains; ++i) {
        const double p = std::exp(static_cast<double>(lv2.v[i]) - lse);
        gl.v[i] += dy * static_cast<T>(p - (i == target ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

// Mean 5-way cross-entropy over a batch of logit stacks (B, 5, 1, 1) with
// per-sample labels.
template <class T>
typename Tape<T>::Id cls_loss_batch(Tape<T>& tape, typename Tape<T>::Id logits,
                                    const std::vector<DomainLabel>& labels) {
  const Tensor<T>& lv = tape.val(logits);
  const int B = static_cast<int>(labels.size());
  if (lv.size() != static_cast<size_t>(B) * kNumDomains)
    throw ShapeError("cls_batch: logits/labels size mismatch");
  auto out = tape.new_node({1}, tape.needs_grad(logits));
  std::vector<double> lses(B);
  double acc = 0.0;
  for (int bi = 0; bi < B; ++bi) {
    const T* row = lv.v.data() + static_cast<size_t>(bi) * kNumDomains;
    double mx = -1e300;
    for (int i = 0; i < kNumDomains; ++i)
      mx = std::max(mx, static_cast<double>(row[i]));
    double lse = 0.0;
    for (int i = 0; i < kNumDomains; ++i)
      lse += std::exp(static_cast<double>(row[i]) - mx);
    lses[bi] = mx + std::log(lse);
    acc += lses[bi] - static_cast<double>(row[static_cast<int>(labels[bi].id)]);
  }
  tape.mutable_val(out).v[0] = static_cast<T>(acc / B);
  if (tape.needs_grad(logits)) {
    tape.record([&tape, logits, out, labels, lses, B]() {
      if (!tape.has_grad(out)) return;
      const T dy = tape.grad(out).v[0] / static_cast<T>(B);
      const Tensor<T>& lv2 = tape.val(logits);
      Tensor<T>& gl = tape.grad(logits);
      for (int bi = 0; bi < B; ++bi) {
        const T* row = lv2.v.data() + static_cast<size_t>(bi) * kNumDomains;
        T* grow = gl.v.data() + static_cast<size_t>(bi) * kNumDomains;
        const int target = static_cast<int>(labels[bi].id);
        for (int i = 0; i < kNumDomains; ++i) {
          const double p = std::exp(static_cast<double>(row[i]) - lses[bi]);
          grow[i] += dy * static_cast<T>(p - (i == target ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

// Weighted sum of named scalar loss parts. A non-finite part aborts with the
// part's name so divergence is attributable.
template <class T>
typename Tape<T>::Id weighted_sum(
    Tape<T>& tape,
    const std::vector<std::tuple<typename Tape<T>::Id, double, std::string>>&
        terms) {
  bool needs = false;
  double acc = 0.0;
  for (const auto& [id, wgt, name] : terms) {
    const Tensor<T>& tv = tape.val(id);
    if (tv.size() != 1) throw ShapeError("weighted_sum: parts must be scalars");
    if (!std::isfinite(static_cast<double>(tv.v[0])))
      throw DivergenceError("non-finite loss term '" + name + "'");
    acc += wgt * static_cast<double>(tv.v[0]);
    needs = needs || tape.needs_grad(id);
  }
  auto out = tape.new_node({1}, needs);
  tape.mutable_val(out).v[0] = static_cast<T>(acc);
  tape.record([&tape, out, terms]() {
    if (!tape.has_grad(out)) return;
    const T dy = tape.grad(out).v[0];
    for (const auto& [id, wgt, name] : terms)
      if (tape.needs_grad(id)) tape.grad(id).v[0] += static_cast<T>(wgt) * dy;
  });
  return out;
}

}  // namespace nnops

enum class BackboneProvenance { kFixedRandom, kPretrainedClassifier };

// Frozen convolutional feature extractor behind the perceptual loss and
// LPIPS. The default is a fixed-random three-layer stack seeded so the test
// suite runs with no downloaded weights; production configs may load
// converted classifier weights through from_arrays().
template <class T>
class FeatureBackbone {
 public:
  static constexpr int kLayers = 3;

  static FeatureBackbone fixed_random(uint64_t seed) {
    FeatureBackbone bb;
    bb.provenance_ = BackboneProvenance::kFixedRandom;
    bb.build();
    Rng rng = Rng::stream(seed, 0xfeedbeef);
    for (auto& l : bb.layers_) {
      const int fan_in = l.w.value.shape[1] * l.w.value.shape[2] * l.w.value.shape[3];
      l.w.init_gaussian(rng, std::sqrt(2.0 / fan_in));
      l.w.trainable = false;
      l.b.trainable = false;
    }
    return bb;
  }

  static FeatureBackbone from_arrays(
      const std::map<std::string, std::pair<std::vector<int>, std::vector<float>>>&
          arrays) {
    FeatureBackbone bb;
    bb.provenance_ = BackboneProvenance::kPretrainedClassifier;
    bb.build();
    for (auto& l : bb.layers_) {
      for (nn::Parameter<T>* p : {&l.w, &l.b}) {
        auto it = arrays.find(p->name);
        if (it == arrays.end())
          throw ConfigError("backbone weights missing array '" + p->name + "'");
        if (it->second.first != p->value.shape)
          throw ConfigError("backbone array '" + p->name + "' has wrong shape");
        for (size_t i = 0; i < p->value.size(); ++i)
          p->value.v[i] = static_cast<T>(it->second.second[i]);
        p->trainable = false;
      }
    }
    return bb;
  }

  // Feature maps after each activation, shallow to deep.
  std::vector<typename nn::Tape<T>::Id> features(nn::Tape<T>& tape,
                                                 typename nn::Tape<T>::Id x) {
    std::vector<typename nn::Tape<T>::Id> out;
    typename nn::Tape<T>::Id h = x;
    for (auto& l : layers_) {
      h = nn::conv2d(tape, h, l.w, l.b, l.stride, 1);
      h = nn::leaky_relu(tape, h, 0.2);
      out.push_back(h);
    }
    return out;
  }

  typename nn::Tape<T>::Id deepest(nn::Tape<T>& tape,
                                   typename nn::Tape<T>::Id x) {
    return features(tape, x).back();
  }

  BackboneProvenance provenance() const { return provenance_; }

  std::vector<nn::Parameter<T>*> params() {
    std::vector<nn::Parameter<T>*> out;
    for (auto& l : layers_) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
    return out;
  }

 private:
  struct Layer {
    nn::Parameter<T> w, b;
    int stride = 1;
  };

  void build() {
    const int chans[kLayers + 1] = {3, 32, 64, 64};
    const int strides[kLayers] = {1, 2, 2};
    layers_.resize(kLayers);
    for (int i = 0; i < kLayers; ++i) {
      layers_[i].w.name = "backbone.conv" + std::to_string(i) + ".w";
      layers_[i].w.resize({chans[i + 1], chans[i], 3, 3});
      layers_[i].b.name = "backbone.conv" + std::to_string(i) + ".b";
      layers_[i].b.resize({chans[i + 1]});
      layers_[i].stride = strides[i];
      layers_[i].w.trainable = false;
      layers_[i].b.trainable = false;
    }
  }

  BackboneProvenance provenance_ = BackboneProvenance::kFixedRandom;
  std::vector<Layer> layers_;
};

// Perceptual loss: mean squared distance between the deepest backbone
// feature maps of the two images. A missing backbone is a hard error,
// never a silent fallback.
template <class T>
typename nn::Tape<T>::Id perceptual_loss(nn::Tape<T>& tape,
                                         typename nn::Tape<T>::Id a,
                                         typename nn::Tape<T>::Id b,
                                         FeatureBackbone<T>* backbone) {
  if (backbone == nullptr)
    throw ConfigError("perceptual loss: backbone unavailable");
  auto fa = backbone->deepest(tape, a);
  auto fb = backbone->deepest(tape, b);
  return nnops::mean_sq_diff(tape, fa, fb);
}

// ---- Eager scalar forms; used for reporting and the operation-level API.

namespace detail {
template <class F>
double eval_scalar_loss(F&& build) {
  nn::Tape<double> tape;
  return tape.val(build(tape)).v[0];
}
}  // namespace detail

double l1_loss(const ImageTensor& a, const ImageTensor& b);
double tv_loss(const ImageTensor& img);
double cycle_loss(const ImageTensor& source, const ImageTensor& reconstructed);
double adversarial_g_value(const std::vector<double>& fake_scores);
double adversarial_d_value(const std::vector<double>& real_scores,
                           const std::vector<double>& fake_scores);
double cls_loss_value(const std::vector<double>& logits,
                      const DomainLabel& label);

struct GenLossParts {
  double per = 0.0;
  double gan = 0.0;
  double tv = 0.0;
  double cls_f = 0.0;
  double l1 = 0.0;
  double cyc = 0.0;
};

struct DiscLossParts {
  double gan = 0.0;
  double cls_r = 0.0;
};

double total_g(const GenLossParts& parts, const LossWeights& w);
double total_d(const DiscLossParts& parts, const LossWeights& w);

}  // namespace starsr
