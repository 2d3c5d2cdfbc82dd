#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <unordered_map>

#include "starsr/checkpoint.hpp"
#include "starsr/config.hpp"
#include "starsr/corpus.hpp"
#include "starsr/models.hpp"

namespace starsr {

struct StepStats {
  int64_t iter = 0;
  double lr = 0.0;
  // discriminator parts (batch means)
  double d_gan = 0.0;
  double d_cls = 0.0;
  double d_total = 0.0;
  // generator parts (batch means; absent supervision contributes zero)
  double g_gan = 0.0;
  double g_cls = 0.0;
  double g_per = 0.0;
  double g_tv = 0.0;
  double g_l1 = 0.0;
  double g_cyc = 0.0;
  double g_total = 0.0;
  int supervised = 0;  // samples whose target-domain ground truth existed

  std::string to_json() const;
};

// Picks the ground-truth image for a sampled target domain, all tensors on
// the canonical grid: HR is always available, synthetic LR domains are
// synthesized from the HR patch, RealLR exists only for paired entries.
// Absent supervision means the content/perceptual terms are skipped for
// that sample.
std::optional<ImageTensor> select_supervision(
    const ImageTensor& hr_patch,
    const std::optional<ImageTensor>& real_patch_canonical, Domain target,
    int scale, const NoiseSpec& noise);

class Trainer {
 public:
  Trainer(TrainConfig cfg, CorpusManifest manifest);
  ~Trainer();

  // Fresh weight initialization from the config seed.
  void init_models();

  // Samples a batch from the manifest (data stream), applies augmentation
  // (aug stream), and returns canonical-grid samples.
  std::vector<TrainingSample> sample_batch();

  // One alternating update: discriminator(s) first, then the generator.
  StepStats train_step();
  StepStats train_step_on(const std::vector<TrainingSample>& batch);

  Checkpoint make_checkpoint();
  void restore(const Checkpoint& ckpt);

  int64_t iteration() const { return iter_; }
  const TrainConfig& config() const { return cfg_; }
  const AblationWiring& wiring() const { return wiring_; }

  Generator<float>& generator() { return *gen_; }
  Discriminator<float>& disc_trg() { return *disc_trg_; }
  Discriminator<float>* disc_src() { return disc_src_.get(); }
  FeatureBackbone<float>& backbone() { return *backbone_; }

  std::vector<nn::Parameter<float>*> generator_params() { return gen_->params(); }
  std::vector<nn::Parameter<float>*> discriminator_params();

 private:
  struct PreparedSample;

  std::vector<PreparedSample> prepare(const std::vector<TrainingSample>& batch);
  const ImageTensor& cached_image(const std::filesystem::path& path);

  TrainConfig cfg_;
  CorpusManifest manifest_;
  AblationWiring wiring_;
  int64_t iter_ = 0;

  Rng data_rng_;
  Rng aug_rng_;

  std::unique_ptr<Generator<float>> gen_;
  std::unique_ptr<Discriminator<float>> disc_trg_;
  std::unique_ptr<Discriminator<float>> disc_src_;  // mode v1 only
  std::unique_ptr<FeatureBackbone<float>> backbone_;
  std::unique_ptr<nn::Adam<float>> adam_g_;
  std::unique_ptr<nn::Adam<float>> adam_d_;
  std::unique_ptr<nn::Adam<float>> adam_d2_;

  std::unordered_map<std::string, ImageTensor> image_cache_;
};

struct RunResult {
  std::filesystem::path final_checkpoint;
  int64_t iterations_run = 0;
};

// Executes cfg.iterations steps with periodic checkpoints and a JSONL run
// log under run_dir; resumable from any checkpoint with bit-identical
// continuation. On divergence the last good checkpoint is retained and the
// error rethrown.
RunResult run_training(const TrainConfig& cfg, const CorpusManifest& manifest,
                       const std::filesystem::path& run_dir,
                       const std::optional<std::filesystem::path>& resume_from =
                           std::nullopt,
                       bool quiet = false);

}  // namespace starsr
