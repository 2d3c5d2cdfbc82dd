#include "starsr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <thread>

#include "json.hpp"
#include "starsr/degrade.hpp"
#include "starsr/png_io.hpp"

namespace starsr {

namespace {

using Tape = nn::Tape<float>;
using Id = Tape::Id;

// Static round-robin partition; exceptions are collected and rethrown in
// index order so failures are deterministic.
void parallel_for(int n, const std::function<void(int)>& fn) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  hw = std::max(1, std::min(hw, n));
  if (hw <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errs(n);
  std::vector<std::thread> threads;
  threads.reserve(hw);
  for (int t = 0; t < hw; ++t) {
    threads.emplace_back([&, t]() {
      for (int i = t; i < n; i += hw) {
        try {
          fn(i);
        } catch (...) {
          errs[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  for (int i = 0; i < n; ++i)
    if (errs[i]) std::rethrow_exception(errs[i]);
}

template <class T>
void set_trainable(const std::vector<nn::Parameter<T>*>& params, bool value) {
  for (auto* p : params) p->trainable = value;
}

}  // namespace

std::string StepStats::to_json() const {
  nlohmann::json j{{"iter", iter},       {"lr", lr},
                   {"d_gan", d_gan},     {"d_cls", d_cls},
                   {"d_total", d_total}, {"g_gan", g_gan},
                   {"g_cls", g_cls},     {"g_per", g_per},
                   {"g_tv", g_tv},       {"g_l1", g_l1},
                   {"g_cyc", g_cyc},     {"g_total", g_total},
                   {"supervised", supervised}};
  return j.dump();
}

std::optional<ImageTensor> select_supervision(
    const ImageTensor& hr_patch,
    const std::optional<ImageTensor>& real_patch_canonical, Domain target,
    int scale, const NoiseSpec& noise) {
  switch (target) {
    case Domain::kHr:
      return hr_patch;
    case Domain::kBicubicLr:
    case Domain::kBilinearLr:
    case Domain::kNearestLr:
      return to_canonical_grid(synth_lr(hr_patch, encode_label(target), noise),
                               scale);
    case Domain::kRealLr:
      return real_patch_canonical;  // absent unless the entry is paired
  }
  return std::nullopt;
}

struct Trainer::PreparedSample {
  nn::Tensor<float> src;
  std::optional<nn::Tensor<float>> target;
  DomainLabel src_label;
  DomainLabel trg_label;
};

Trainer::Trainer(TrainConfig cfg, CorpusManifest manifest)
    : cfg_(std::move(cfg)), manifest_(std::move(manifest)) {
  cfg_.validate();
  if (manifest_.entries.empty()) throw DataError("trainer: empty manifest");
  wiring_ = configure_ablation(cfg_.ablation_mode);

  GeneratorConfig gcfg;
  gen_ = std::make_unique<Generator<float>>(gcfg, "G");
  DiscriminatorConfig dcfg;
  dcfg.input_size = cfg_.patch;
  disc_trg_ = std::make_unique<Discriminator<float>>(dcfg, "D");
  if (wiring_.discriminators == 2)
    disc_src_ = std::make_unique<Discriminator<float>>(dcfg, "Dsrc");

  if (cfg_.backbone == "fixed-random") {
    backbone_ = std::make_unique<FeatureBackbone<float>>(
        FeatureBackbone<float>::fixed_random(cfg_.backbone_seed));
  } else {
    const Checkpoint bb = Checkpoint::load(cfg_.backbone);
    std::map<std::string, std::pair<std::vector<int>, std::vector<float>>> arrays;
    for (const auto& [name, arr] : bb.arrays)
      arrays.emplace(name, std::make_pair(arr.shape, arr.f32));
    backbone_ = std::make_unique<FeatureBackbone<float>>(
        FeatureBackbone<float>::from_arrays(arrays));
  }

  adam_g_ = std::make_unique<nn::Adam<float>>(cfg_.beta1, cfg_.beta2, cfg_.eps);
  adam_d_ = std::make_unique<nn::Adam<float>>(cfg_.beta1, cfg_.beta2, cfg_.eps);
  if (disc_src_)
    adam_d2_ =
        std::make_unique<nn::Adam<float>>(cfg_.beta1, cfg_.beta2, cfg_.eps);

  data_rng_ = Rng::stream(cfg_.seed, 1);
  aug_rng_ = Rng::stream(cfg_.seed, 2);
}

Trainer::~Trainer() = default;

void Trainer::init_models() {
  Rng init_rng = Rng::stream(cfg_.seed, 0);
  gen_->init(init_rng);
  disc_trg_->init(init_rng);
  if (disc_src_) disc_src_->init(init_rng);
  iter_ = 0;
}

std::vector<nn::Parameter<float>*> Trainer::discriminator_params() {
  auto out = disc_trg_->params();
  if (disc_src_) {
    auto extra = disc_src_->params();
    out.insert(out.end(), extra.begin(), extra.end());
  }
  return out;
}

const ImageTensor& Trainer::cached_image(const std::filesystem::path& path) {
  const std::string key = path.string();
  auto it = image_cache_.find(key);
  if (it == image_cache_.end())
    it = image_cache_.emplace(key, read_png(path)).first;
  return it->second;
}

std::vector<TrainingSample> Trainer::sample_batch() {
  const int batch = cfg_.batch_size;
  std::vector<DomainLabel> targets =
      sample_target_labels(batch, wiring_.target_sampling, data_rng_);

  std::vector<TrainingSample> samples;
  samples.reserve(batch);
  for (int i = 0; i < batch; ++i) {
    const CorpusEntry& entry =
        manifest_.entries[data_rng_.below(manifest_.entries.size())];
    // Source domain drawn uniformly over what the entry provides.
    std::vector<Domain> avail(entry.available_domains.begin(),
                              entry.available_domains.end());
    const Domain src = avail[data_rng_.below(avail.size())];
    const uint64_t noise_seed = data_rng_.next_u64();

    const ImageTensor& hr_full = cached_image(entry.hr_path);
    const PatchOffsets off = sample_patch_offsets(
        hr_full.height, hr_full.width, cfg_.patch, cfg_.scale, data_rng_);
    const ImageTensor hr_patch = crop(hr_full, off.hr_row, off.hr_col, cfg_.patch);

    std::optional<ImageTensor> real_patch_canonical;
    if (entry.real_lr_path) {
      const ImageTensor& lr_full = cached_image(*entry.real_lr_path);
      const ImageTensor lr_patch =
          crop(lr_full, off.lr_row, off.lr_col, cfg_.patch / cfg_.scale);
      real_patch_canonical = to_canonical_grid(lr_patch, cfg_.scale);
    }

    const NoiseSpec noise{cfg_.synth_sigma, noise_seed};
    TrainingSample s;
    s.src_label = encode_label(src);
    s.trg_label = targets[i];
    if (src == Domain::kHr) {
      s.image = hr_patch;
    } else if (src == Domain::kRealLr) {
      s.image = *real_patch_canonical;
    } else {
      s.image = to_canonical_grid(
          synth_lr(hr_patch, encode_label(src), noise), cfg_.scale);
    }
    s.target_image = select_supervision(hr_patch, real_patch_canonical,
                                        targets[i].id, cfg_.scale, noise);

    if (cfg_.flip_rotate) {
      const GeomTransform t = draw_geom(aug_rng_);
      s.image = apply_geom(s.image, t);
      if (s.target_image) s.target_image = apply_geom(*s.target_image, t);
    }
    samples.push_back(std::move(s));
  }

  if (cfg_.aug.enabled && batch > 0) {
    // One augmentation draw per batch, mirrored onto paired targets where
    // both sides of the pairing carry them.
    std::vector<int> partner(batch);
    for (int i = 0; i < batch; ++i) partner[i] = i;
    for (int i = batch - 1; i > 0; --i)
      std::swap(partner[i], partner[static_cast<int>(aug_rng_.below(i + 1))]);
    const MoaReport rep = moa_draw(cfg_.aug, samples[0].image.height,
                                   samples[0].image.width, aug_rng_);
    if (rep.op != MoaOp::kNone) {
      const bool needs_partner = rep.op == MoaOp::kMixup ||
                                 rep.op == MoaOp::kCutMix ||
                                 rep.op == MoaOp::kCutMixup;
      std::vector<TrainingSample> augmented = samples;
      for (int i = 0; i < batch; ++i) {
        const TrainingSample& self = samples[i];
        const TrainingSample& other = samples[partner[i]];
        if (!self.image.same_shape(other.image)) continue;
        if (self.target_image && needs_partner && !other.target_image)
          continue;  // cannot mirror the op consistently; leave unaugmented
        augmented[i].image =
            moa_apply_report({self.image}, {other.image}, rep)[0];
        if (self.target_image) {
          const ImageTensor& partner_target =
              needs_partner ? *other.target_image : self.image;
          augmented[i].target_image = moa_apply_report(
              {*self.target_image}, {partner_target}, rep)[0];
        }
      }
      samples = std::move(augmented);
    }
  }
  return samples;
}

std::vector<Trainer::PreparedSample> Trainer::prepare(
    const std::vector<TrainingSample>& batch) {
  std::vector<PreparedSample> out;
  out.reserve(batch.size());
  for (const TrainingSample& s : batch) {
    PreparedSample p;
    p.src = nn::from_image<float>(s.image);
    if (s.target_image) p.target = nn::from_image<float>(*s.target_image);
    p.src_label = s.src_label;
    p.trg_label = s.trg_label;
    out.push_back(std::move(p));
  }
  return out;
}

StepStats Trainer::train_step() { return train_step_on(sample_batch()); }

StepStats Trainer::train_step_on(const std::vector<TrainingSample>& batch) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  const int n = static_cast<int>(batch.size());
  const double lr = lr_schedule(iter_, cfg_);
  const LossWeights& w = cfg_.weights;
  const bool dual = disc_src_ != nullptr;

  std::vector<PreparedSample> prep = prepare(batch);

  struct Work {
    Tape tape_g;
    std::unique_ptr<Tape> tape_d;
    Id src_leaf = -1, yhat = -1, yprime = -1;
    double d_gan = 0, d_cls = 0;
    double g_gan = 0, g_cls = 0, g_per = 0, g_tv = 0, g_l1 = 0, g_cyc = 0;
    double g_total = 0;
    bool supervised = false;
  };
  std::vector<Work> work(n);

  try {
    // Phase A: generator forward passes plus the discriminator update graph
    // on detached fakes.
    parallel_for(n, [&](int i) {
      Work& wk = work[i];
      PreparedSample& s = prep[i];
      wk.src_leaf = wk.tape_g.leaf(s.src, false);
      wk.yhat = gen_->forward(wk.tape_g, wk.src_leaf, s.trg_label);
      wk.yprime = gen_->forward(wk.tape_g, wk.yhat, s.src_label);

      wk.tape_d = std::make_unique<Tape>();
      Tape& td = *wk.tape_d;
      const Id real = td.leaf(s.src, false);
      const Id fake = td.leaf(wk.tape_g.val(wk.yhat), false);
      auto heads_real = disc_trg_->forward(td, real);
      auto heads_fake = disc_trg_->forward(td, fake);
      const Id gan_d =
          nnops::adversarial_d(td, heads_real.trg_map, heads_fake.trg_map);
      const Id cls_r = nnops::cls_loss(td, heads_real.cls_logits, s.src_label);
      std::vector<std::tuple<Id, double, std::string>> terms;
      if (!dual) {
        wk.d_gan = td.val(gan_d).v[0];
        wk.d_cls = td.val(cls_r).v[0];
        terms = {{gan_d, w.gan_d, "gan_d"}, {cls_r, w.cls_r, "cls_r"}};
      } else {
        const Id fake2 = td.leaf(wk.tape_g.val(wk.yprime), false);
        auto heads2_real = disc_src_->forward(td, real);
        auto heads2_fake = disc_src_->forward(td, fake2);
        const Id gan_d2 =
            nnops::adversarial_d(td, heads2_real.trg_map, heads2_fake.trg_map);
        const Id cls_r2 =
            nnops::cls_loss(td, heads2_real.cls_logits, s.src_label);
        wk.d_gan = 0.5 * (td.val(gan_d).v[0] + td.val(gan_d2).v[0]);
        wk.d_cls = 0.5 * (td.val(cls_r).v[0] + td.val(cls_r2).v[0]);
        terms = {{gan_d, 0.5 * w.gan_d, "gan_d"},
                 {gan_d2, 0.5 * w.gan_d, "gan_d_src"},
                 {cls_r, 0.5 * w.cls_r, "cls_r"},
                 {cls_r2, 0.5 * w.cls_r, "cls_r_src"}};
      }
      td.backward(nnops::weighted_sum(td, terms));
    });

    // Discriminator step on batch-mean gradients, in sample order.
    const float inv_n = 1.0f / static_cast<float>(n);
    for (int i = 0; i < n; ++i) work[i].tape_d->merge_param_grads(inv_n);
    adam_d_->step(disc_trg_->params(), lr);
    if (dual) adam_d2_->step(disc_src_->params(), lr);
    nn::zero_grads(discriminator_params());
    for (int i = 0; i < n; ++i) work[i].tape_d.reset();

    // Phase B: generator losses against the updated discriminator(s).
    // Freezing D here skips its weight-gradient work; only dX flows back.
    set_trainable(discriminator_params(), false);
    parallel_for(n, [&](int i) {
      Work& wk = work[i];
      PreparedSample& s = prep[i];
      Tape& tg = wk.tape_g;
      auto heads = disc_trg_->forward(tg, wk.yhat);
      Id gan_g = nnops::adversarial_g(tg, heads.trg_map);
      Id cls_f = nnops::cls_loss(tg, heads.cls_logits, s.trg_label);
      std::vector<std::tuple<Id, double, std::string>> terms;
      if (dual) {
        auto heads_src = disc_src_->forward(tg, wk.yprime);
        const Id gan_g2 = nnops::adversarial_g(tg, heads_src.trg_map);
        const Id cls_f2 = nnops::cls_loss(tg, heads_src.cls_logits, s.src_label);
        wk.g_gan = 0.5 * (tg.val(gan_g).v[0] + tg.val(gan_g2).v[0]);
        wk.g_cls = 0.5 * (tg.val(cls_f).v[0] + tg.val(cls_f2).v[0]);
        terms.push_back({gan_g, 0.5 * w.gan, "gan"});
        terms.push_back({gan_g2, 0.5 * w.gan, "gan_src"});
        terms.push_back({cls_f, 0.5 * w.cls, "cls_f"});
        terms.push_back({cls_f2, 0.5 * w.cls, "cls_f_src"});
      } else {
        wk.g_gan = tg.val(gan_g).v[0];
        wk.g_cls = tg.val(cls_f).v[0];
        terms.push_back({gan_g, w.gan, "gan"});
        terms.push_back({cls_f, w.cls, "cls_f"});
      }
      const Id tv = nnops::tv_loss(tg, wk.yhat);
      const Id cyc = nnops::mean_abs_diff(tg, wk.yprime, wk.src_leaf);
      wk.g_tv = tg.val(tv).v[0];
      wk.g_cyc = tg.val(cyc).v[0];
      terms.push_back({tv, w.tv, "tv"});
      terms.push_back({cyc, w.cyc, "cyc"});
      if (s.target) {
        wk.supervised = true;
        const Id sup = tg.leaf(*s.target, false);
        const Id l1 = nnops::mean_abs_diff(tg, wk.yhat, sup);
        const Id per = perceptual_loss(tg, wk.yhat, sup, backbone_.get());
        wk.g_l1 = tg.val(l1).v[0];
        wk.g_per = tg.val(per).v[0];
        terms.push_back({l1, w.l1, "l1"});
        terms.push_back({per, w.per, "per"});
      }
      const Id total = nnops::weighted_sum(tg, terms);
      wk.g_total = tg.val(total).v[0];
      tg.backward(total);
    });
    set_trainable(discriminator_params(), true);

    for (int i = 0; i < n; ++i) work[i].tape_g.merge_param_grads(inv_n);
    adam_g_->step(gen_->params(), lr);
    nn::zero_grads(gen_->params());
    nn::zero_grads(discriminator_params());  // dX-only pass left no grads, but
                                             // keep the invariant explicit
  } catch (const NumericError& e) {
    set_trainable(discriminator_params(), true);
    throw DivergenceError(std::string(e.what()) + " at iteration " +
                          std::to_string(iter_));
  }

  StepStats st;
  st.iter = iter_;
  st.lr = lr;
  for (const Work& wk : work) {
    st.d_gan += wk.d_gan;
    st.d_cls += wk.d_cls;
    st.g_gan += wk.g_gan;
    st.g_cls += wk.g_cls;
    st.g_per += wk.g_per;
    st.g_tv += wk.g_tv;
    st.g_l1 += wk.g_l1;
    st.g_cyc += wk.g_cyc;
    st.g_total += wk.g_total;
    st.supervised += wk.supervised ? 1 : 0;
  }
  const double inv = 1.0 / n;
  st.d_gan *= inv;
  st.d_cls *= inv;
  st.g_gan *= inv;
  st.g_cls *= inv;
  st.g_per *= inv;
  st.g_tv *= inv;
  st.g_l1 *= inv;
  st.g_cyc *= inv;
  st.g_total *= inv;
  st.d_total = w.gan_d * st.d_gan + w.cls_r * st.d_cls;
  ++iter_;
  return st;
}

Checkpoint Trainer::make_checkpoint() {
  Checkpoint ckpt;
  ckpt.iteration = iter_;
  ckpt.config_json = cfg_.to_json();

  auto put_param = [&](nn::Parameter<float>* p) {
    NamedArray value, m, v;
    value.kind = m.kind = v.kind = NamedArray::Kind::kF32;
    value.shape = m.shape = v.shape = p->value.shape;
    value.f32 = p->value.v;
    m.f32 = p->m.v;
    v.f32 = p->vmom.v;
    ckpt.arrays.emplace("param." + p->name, std::move(value));
    ckpt.arrays.emplace("adam_m." + p->name, std::move(m));
    ckpt.arrays.emplace("adam_v." + p->name, std::move(v));
  };
  for (auto* p : gen_->params()) put_param(p);
  for (auto* p : discriminator_params()) put_param(p);

  auto put_i64 = [&](const std::string& name, int64_t v) {
    NamedArray arr;
    arr.kind = NamedArray::Kind::kI64;
    arr.shape = {1};
    arr.i64 = {v};
    ckpt.arrays.emplace(name, std::move(arr));
  };
  put_i64("opt.g.t", adam_g_->step_count());
  put_i64("opt.d.t", adam_d_->step_count());
  if (adam_d2_) put_i64("opt.d2.t", adam_d2_->step_count());

  auto put_rng = [&](const std::string& name, const Rng& rng) {
    NamedArray arr;
    arr.kind = NamedArray::Kind::kU64;
    arr.shape = {4};
    const auto st = rng.state();
    arr.u64.assign(st.begin(), st.end());
    ckpt.arrays.emplace(name, std::move(arr));
  };
  put_rng("rng.data", data_rng_);
  put_rng("rng.aug", aug_rng_);
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.config_json != cfg_.to_json())
    throw ConfigError(
        "checkpoint config echo does not match the running config");

  auto take_param = [&](nn::Parameter<float>* p) {
    const NamedArray& value = ckpt.require("param." + p->name);
    const NamedArray& m = ckpt.require("adam_m." + p->name);
    const NamedArray& v = ckpt.require("adam_v." + p->name);
    if (value.shape != p->value.shape)
      throw DataError("checkpoint array 'param." + p->name +
                      "' has mismatched shape");
    p->value.v = value.f32;
    p->m.v = m.f32;
    p->vmom.v = v.f32;
  };
  for (auto* p : gen_->params()) take_param(p);
  for (auto* p : discriminator_params()) take_param(p);

  adam_g_->set_step_count(ckpt.require("opt.g.t").i64.at(0));
  adam_d_->set_step_count(ckpt.require("opt.d.t").i64.at(0));
  if (adam_d2_) adam_d2_->set_step_count(ckpt.require("opt.d2.t").i64.at(0));

  auto take_rng = [&](const std::string& name, Rng& rng) {
    const NamedArray& arr = ckpt.require(name);
    if (arr.u64.size() != 4) throw DataError("bad RNG state in checkpoint");
    std::array<uint64_t, 4> st;
    std::copy(arr.u64.begin(), arr.u64.end(), st.begin());
    rng.set_state(st);
  };
  take_rng("rng.data", data_rng_);
  take_rng("rng.aug", aug_rng_);
  iter_ = ckpt.iteration;
}

namespace {

std::filesystem::path ckpt_path(const std::filesystem::path& dir, int64_t iter) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06lld.bin",
                static_cast<long long>(iter));
  return dir / buf;
}

}  // namespace

RunResult run_training(const TrainConfig& cfg, const CorpusManifest& manifest,
                       const std::filesystem::path& run_dir,
                       const std::optional<std::filesystem::path>& resume_from,
                       bool quiet) {
  cfg.validate();
  std::filesystem::create_directories(run_dir);

  // Config snapshot precedes the first step and is never overwritten.
  const std::filesystem::path snapshot = run_dir / "config.json";
  if (!std::filesystem::exists(snapshot)) {
    std::ofstream f(snapshot);
    f << cfg.to_json() << "\n";
  }

  Trainer trainer(cfg, manifest);
  std::filesystem::path last_good;
  if (resume_from) {
    trainer.restore(Checkpoint::load(*resume_from));
    last_good = *resume_from;
    if (trainer.iteration() >= cfg.iterations) {
      if (!quiet)
        std::cout << "checkpoint already at iteration " << trainer.iteration()
                  << "; nothing to do\n";
      return {*resume_from, 0};
    }
  } else {
    trainer.init_models();
    last_good = ckpt_path(run_dir, 0);
    trainer.make_checkpoint().save(last_good);
  }

  std::ofstream log(run_dir / "train_log.jsonl", std::ios::app);
  if (!log) throw DataError("cannot open run log in " + run_dir.string());

  const int64_t start = trainer.iteration();
  int64_t done = 0;
  for (int64_t it = start; it < cfg.iterations; ++it) {
    StepStats stats;
    try {
      stats = trainer.train_step();
    } catch (const DivergenceError&) {
      if (!quiet)
        std::cerr << "training diverged; last good checkpoint: "
                  << last_good.string() << "\n";
      throw;
    }
    log << stats.to_json() << "\n";
    ++done;
    if (!quiet && (stats.iter % 50 == 0 || it + 1 == cfg.iterations))
      std::cout << "iter " << stats.iter << " lr " << stats.lr << " g_total "
                << stats.g_total << " d_total " << stats.d_total << "\n";
    if ((it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iterations) {
      last_good = ckpt_path(run_dir, it + 1);
      trainer.make_checkpoint().save(last_good);
    }
  }

  std::filesystem::path final_path = last_good;
  if (done > 0 || !resume_from) {
    if (done > 0) {
      final_path = run_dir / "ckpt_final.bin";
      trainer.make_checkpoint().save(final_path);
    }
  }
  return {final_path, done};
}

}  // namespace starsr
