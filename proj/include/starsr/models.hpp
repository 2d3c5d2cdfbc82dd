#pragma once

#include <string>
#include <vector>

#include "starsr/domain.hpp"
#include "starsr/nn.hpp"

namespace starsr {

struct GeneratorConfig {
  int base_channels = 64;
  int encdec_kernel = 5;
  int res_blocks = 5;
  int res_kernel = 3;
  int label_channels = kNumDomains;  // 0 disables conditioning
  double init_stddev = 0.02;
  double theta_init = 1.0;
  double sigma_init = 5.0 / 255.0;

  void validate() const {
    if (base_channels <= 0 || encdec_kernel <= 0 || res_kernel <= 0)
      throw ConfigError("generator: channel/kernel values must be positive");
    if (res_blocks < 1) throw ConfigError("generator: res_blocks must be >= 1");
    if (encdec_kernel % 2 == 0 || res_kernel % 2 == 0)
      throw ConfigError("generator: kernels must be odd for same-size output");
  }
};

struct DiscriminatorConfig {
  int layers = 6;
  int kernel = 4;
  int stride = 2;
  int base_channels = 64;  // doubles each layer, 64 -> 2048
  double leaky_slope = 0.01;
  int input_size = 128;  // class-head kernel covers input_size / 2^layers
  double init_stddev = 0.02;

  int shrink() const { return 1 << layers; }

  void validate() const {
    if (layers <= 0 || kernel <= 0 || stride <= 0 || base_channels <= 0)
      throw ConfigError("discriminator: structural values must be positive");
    if (input_size < shrink() || input_size % shrink() != 0)
      throw ConfigError(
          "discriminator: input_size must be a positive multiple of " +
          std::to_string(shrink()));
  }
};

// Encoder-Resnet-Decoder generator. The domain label is replicated into
// constant spatial planes and concatenated with the image at the input. The
// residual path runs encoder -> sine-preactivated residual blocks -> l2-ball
// projection -> decoder, and the decoded residual is added back onto the
// input through a trainable gain/bias calibration.
template <class T>
class Generator {
 public:
  using Id = typename nn::Tape<T>::Id;

  explicit Generator(const GeneratorConfig& cfg = {},
                     const std::string& prefix = "G")
      : cfg_(cfg) {
    cfg_.validate();
    const int c = cfg_.base_channels;
    const int in_ch = 3 + cfg_.label_channels;
    const int ek = cfg_.encdec_kernel, rk = cfg_.res_kernel;
    auto setup = [](nn::Parameter<T>& p, std::string name,
                    std::vector<int> shape) {
      p.name = std::move(name);
      p.resize(std::move(shape));
    };
    setup(enc_w_, prefix + ".enc.w", {c, in_ch, ek, ek});
    setup(enc_b_, prefix + ".enc.b", {c});
    blocks_.resize(cfg_.res_blocks);
    for (int i = 0; i < cfg_.res_blocks; ++i) {
      const std::string base = prefix + ".res" + std::to_string(i);
      setup(blocks_[i].w1, base + ".conv1.w", {c, c, rk, rk});
      setup(blocks_[i].b1, base + ".conv1.b", {c});
      setup(blocks_[i].w2, base + ".conv2.w", {c, c, rk, rk});
      setup(blocks_[i].b2, base + ".conv2.b", {c});
    }
    setup(dec_w_, prefix + ".dec.w", {3, c, ek, ek});
    setup(dec_b_, prefix + ".dec.b", {3});
    setup(proj_theta_, prefix + ".proj.theta", {1});
    setup(proj_sigma_, prefix + ".proj.sigma", {1});
    setup(out_gain_, prefix + ".out.gain", {1});
    setup(out_bias_, prefix + ".out.bias", {1});
    reset_defaults();
  }

  void reset_defaults() {
    proj_theta_.fill(static_cast<T>(cfg_.theta_init));
    proj_sigma_.fill(static_cast<T>(cfg_.sigma_init));
    out_gain_.fill(T(1));
    out_bias_.fill(T(0));
  }

  // Zero-mean Gaussian weights (std 0.02), zero biases, projection and
  // calibration scalars at their defaults.
  void init(Rng& rng) {
    enc_w_.init_gaussian(rng, cfg_.init_stddev);
    for (auto& blk : blocks_) {
      blk.w1.init_gaussian(rng, cfg_.init_stddev);
      blk.w2.init_gaussian(rng, cfg_.init_stddev);
    }
    dec_w_.init_gaussian(rng, cfg_.init_stddev);
    reset_defaults();
  }

  Id forward(nn::Tape<T>& tape, Id img, const DomainLabel& label) {
    const auto& x = tape.val(img);
    if (x.c() != 3) throw ShapeError("generator: input must have 3 channels");
    if (x.h() < 16 || x.w() < 16)
      throw ShapeError("generator: input must be at least 16x16, got " +
                       std::to_string(x.h()) + "x" + std::to_string(x.w()));
    if (!x.all_finite()) throw NumericError("generator: non-finite input");

    Id z = img;
    if (cfg_.label_channels > 0) {
      nn::Tensor<T> planes({cfg_.label_channels, x.h(), x.w()});
      const size_t plane = static_cast<size_t>(x.h()) * x.w();
      for (int c = 0; c < cfg_.label_channels; ++c)
        std::fill(planes.v.begin() + c * plane,
                  planes.v.begin() + (c + 1) * plane,
                  static_cast<T>(label.onehot[c]));
      z = nn::concat_ch(tape, img, tape.leaf(std::move(planes)));
    }

    const int ep = (cfg_.encdec_kernel - 1) / 2;
    const int rp = (cfg_.res_kernel - 1) / 2;
    Id r = nn::conv2d(tape, z, enc_w_, enc_b_, 1, ep);
    for (auto& blk : blocks_) {
      Id t = nn::conv2d(tape, nn::sine(tape, r), blk.w1, blk.b1, 1, rp);
      t = nn::conv2d(tape, nn::sine(tape, t), blk.w2, blk.b2, 1, rp);
      r = nn::add(tape, r, t);
    }
    Id p = nn::project_l2_ball(tape, r, proj_theta_, proj_sigma_);
    Id d = nn::conv2d(tape, p, dec_w_, dec_b_, 1, ep);
    return nn::calibrated_residual(tape, img, d, out_gain_, out_bias_);
  }

  std::vector<nn::Parameter<T>*> params() {
    std::vector<nn::Parameter<T>*> out{&enc_w_, &enc_b_};
    for (auto& blk : blocks_) {
      out.push_back(&blk.w1);
      out.push_back(&blk.b1);
      out.push_back(&blk.w2);
      out.push_back(&blk.b2);
    }
    out.push_back(&dec_w_);
    out.push_back(&dec_b_);
    out.push_back(&proj_theta_);
    out.push_back(&proj_sigma_);
    out.push_back(&out_gain_);
    out.push_back(&out_bias_);
    return out;
  }

  const GeneratorConfig& config() const { return cfg_; }
  nn::Parameter<T>& proj_theta() { return proj_theta_; }
  nn::Parameter<T>& proj_sigma() { return proj_sigma_; }
  nn::Parameter<T>& out_gain() { return out_gain_; }
  nn::Parameter<T>& out_bias() { return out_bias_; }

 private:
  struct Block {
    nn::Parameter<T> w1, b1, w2, b2;
  };

  GeneratorConfig cfg_;
  nn::Parameter<T> enc_w_, enc_b_;
  std::vector<Block> blocks_;
  nn::Parameter<T> dec_w_, dec_b_;
  nn::Parameter<T> proj_theta_, proj_sigma_;
  nn::Parameter<T> out_gain_, out_bias_;
};

// PatchGAN-style discriminator: six stride-2 4x4 convolutions doubling
// channels 64 -> 2048 with leaky rectifier, then two heads. The patch head
// is a 3x3 convolution to one channel; the class head covers the whole
// remaining map and emits 5 domain logits.
template <class T>
class Discriminator {
 public:
  using Id = typename nn::Tape<T>::Id;
  struct Heads {
    Id trg_map;
    Id cls_logits;
  };

  explicit Discriminator(const DiscriminatorConfig& cfg = {},
                         const std::string& prefix = "D")
      : cfg_(cfg) {
    cfg_.validate();
    int in_ch = 3;
    int out_ch = cfg_.base_channels;
    convs_.resize(cfg_.layers);
    for (int i = 0; i < cfg_.layers; ++i) {
      auto& l = convs_[i];
      const std::string base = prefix + ".conv" + std::to_string(i);
      l.w.name = base + ".w";
      l.w.resize({out_ch, in_ch, cfg_.kernel, cfg_.kernel});
      l.b.name = base + ".b";
      l.b.resize({out_ch});
      in_ch = out_ch;
      out_ch *= 2;
    }
    const int top_ch = in_ch;
    trg_w_.name = prefix + ".trg.w";
    trg_w_.resize({1, top_ch, 3, 3});
    trg_b_.name = prefix + ".trg.b";
    trg_b_.resize({1});
    const int k = cfg_.input_size / cfg_.shrink();
    cls_w_.name = prefix + ".cls.w";
    cls_w_.resize({kNumDomains, top_ch, k, k});
    cls_b_.name = prefix + ".cls.b";
    cls_b_.resize({kNumDomains});
  }

  void init(Rng& rng) {
    for (auto& l : convs_) l.w.init_gaussian(rng, cfg_.init_stddev);
    trg_w_.init_gaussian(rng, cfg_.init_stddev);
    cls_w_.init_gaussian(rng, cfg_.init_stddev);
  }

  // Accepts a single image (3, H, W) or a batch (B, 3, H, W).
  Heads forward(nn::Tape<T>& tape, Id img) {
    const auto& x = tape.val(img);
    const bool batched = x.shape.size() == 4;
    const int c = x.shape.at(batched ? 1 : 0);
    const int h = x.shape.at(batched ? 2 : 1);
    const int w = x.shape.at(batched ? 3 : 2);
    if (c != 3) throw ShapeError("discriminator: input must have 3 channels");
    if (h != cfg_.input_size || w != cfg_.input_size)
      throw ShapeError("discriminator: built for " +
                       std::to_string(cfg_.input_size) + "x" +
                       std::to_string(cfg_.input_size) + " inputs, got " +
                       std::to_string(h) + "x" + std::to_string(w));

    Id h = img;
    const int pad = (cfg_.kernel - cfg_.stride + 1) / 2;
    for (auto& l : convs_) {
      h = nn::conv2d(tape, h, l.w, l.b, cfg_.stride, pad);
      h = nn::leaky_relu(tape, h, cfg_.leaky_slope);
    }
    Heads heads;
    heads.trg_map = nn::conv2d(tape, h, trg_w_, trg_b_, 1, 1);
    heads.cls_logits = nn::conv2d(tape, h, cls_w_, cls_b_, 1, 0);
    return heads;
  }

  std::vector<nn::Parameter<T>*> params() {
    std::vector<nn::Parameter<T>*> out;
    for (auto& l : convs_) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
    out.push_back(&trg_w_);
    out.push_back(&trg_b_);
    out.push_back(&cls_w_);
    out.push_back(&cls_b_);
    return out;
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  nn::Parameter<T>& trg_head_w() { return trg_w_; }
  nn::Parameter<T>& cls_head_w() { return cls_w_; }

 private:
  struct Layer {
    nn::Parameter<T> w, b;
  };

  DiscriminatorConfig cfg_;
  std::vector<Layer> convs_;
  nn::Parameter<T> trg_w_, trg_b_;
  nn::Parameter<T> cls_w_, cls_b_;
};

// Exact count of trainable scalars.
template <class Model>
int64_t count_params(Model& model) {
  int64_t n = 0;
  for (auto* p : model.params())
    if (p->trainable) n += static_cast<int64_t>(p->value.size());
  return n;
}

}  // namespace starsr
