#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "starsr/corpus.hpp"
#include "starsr/losses.hpp"

namespace starsr {

enum class AblationMode { kV1, kV2, kV3 };

AblationMode ablation_from_name(const std::string& name);
std::string ablation_name(AblationMode mode);

// Which sampler feeds the first branch and how many discriminators exist.
struct AblationWiring {
  TargetSampling target_sampling = TargetSampling::kRandom;
  int discriminators = 1;
};

AblationWiring configure_ablation(AblationMode mode);

struct TrainConfig {
  // data
  int batch_size = 16;
  int patch = 128;  // multiple of 64; also the discriminator input size
  int scale = 4;
  int64_t iterations = 51000;
  // optimizer
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double lr0 = 1e-4;
  std::vector<int64_t> lr_milestones = {5000, 10000, 20000, 30000};
  double lr_factor = 0.5;
  // run
  AblationMode ablation_mode = AblationMode::kV3;
  uint64_t seed = 0;
  int64_t checkpoint_every = 1000;
  // losses
  LossWeights weights;
  // augmentation
  bool flip_rotate = true;
  AugPolicy aug;
  // perceptual backbone: "fixed-random" or a path to a weights container
  std::string backbone = "fixed-random";
  uint64_t backbone_seed = 17;
  // noise std applied when synthesizing LR supervision targets
  double synth_sigma = 0.0;

  // Small profile for CPU-scale smoke runs.
  void apply_desk_scale() {
    patch = 64;
    batch_size = 4;
    iterations = 500;
    checkpoint_every = 250;
    flip_rotate = false;
    aug.enabled = false;
  }

  // Collects every violation and reports them together.
  void validate() const;

  std::string to_json() const;  // canonical (sorted keys)
  static TrainConfig from_json(const std::string& text);
  static TrainConfig from_file(const std::filesystem::path& path);

  // Flat "key value" override, e.g. ("lr0", "2e-4"); unknown key throws.
  void set_override(const std::string& key, const std::string& value);
};

// lr0 * factor^(number of milestones <= iter).
double lr_schedule(int64_t iter, const TrainConfig& cfg);

}  // namespace starsr
