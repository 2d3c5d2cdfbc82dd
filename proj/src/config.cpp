#include "starsr/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace starsr {

using nlohmann::json;

AblationMode ablation_from_name(const std::string& name) {
  if (name == "v1") return AblationMode::kV1;
  if (name == "v2") return AblationMode::kV2;
  if (name == "v3") return AblationMode::kV3;
  throw ConfigError("unknown ablation mode '" + name + "' (expected v1|v2|v3)");
}

std::string ablation_name(AblationMode mode) {
  switch (mode) {
    case AblationMode::kV1: return "v1";
    case AblationMode::kV2: return "v2";
    case AblationMode::kV3: return "v3";
  }
  return "v3";
}

AblationWiring configure_ablation(AblationMode mode) {
  switch (mode) {
    case AblationMode::kV1:
      return {TargetSampling::kHrOnly, 2};
    case AblationMode::kV2:
      return {TargetSampling::kHrOnly, 1};
    case AblationMode::kV3:
      return {TargetSampling::kRandom, 1};
  }
  throw ConfigError("unknown ablation mode");
}

void TrainConfig::validate() const {
  std::vector<std::string> errs;
  if (batch_size < 1) errs.push_back("batch_size must be >= 1");
  if (patch < 64 || patch % 64 != 0)
    errs.push_back("patch must be a positive multiple of 64");
  if (scale <= 0) errs.push_back("scale must be a positive integer");
  if (patch % std::max(scale, 1) != 0)
    errs.push_back("patch must be divisible by scale");
  if (iterations < 0) errs.push_back("iterations must be >= 0");
  if (lr0 <= 0.0) errs.push_back("lr0 must be > 0");
  if (lr_factor <= 0.0) errs.push_back("lr_factor must be > 0");
  if (!std::is_sorted(lr_milestones.begin(), lr_milestones.end()) ||
      std::adjacent_find(lr_milestones.begin(), lr_milestones.end()) !=
          lr_milestones.end())
    errs.push_back("lr_milestones must be strictly increasing");
  if (checkpoint_every < 1) errs.push_back("checkpoint_every must be >= 1");
  if (synth_sigma < 0.0) errs.push_back("synth_sigma must be >= 0");
  try {
    weights.validate();
  } catch (const ConfigError& e) {
    errs.push_back(e.what());
  }
  try {
    aug.validate();
  } catch (const ConfigError& e) {
    errs.push_back(e.what());
  }
  if (!errs.empty()) {
    std::string all = "invalid config:";
    for (const std::string& e : errs) all += "\n  - " + e;
    throw ConfigError(all);
  }
}

namespace {

json weights_to_json(const LossWeights& w) {
  return json{{"per", w.per},   {"gan", w.gan},     {"tv", w.tv},
              {"cls", w.cls},   {"l1", w.l1},       {"cyc", w.cyc},
              {"gan_d", w.gan_d}, {"cls_r", w.cls_r}};
}

LossWeights weights_from_json(const json& j, LossWeights base) {
  base.per = j.value("per", base.per);
  base.gan = j.value("gan", base.gan);
  base.tv = j.value("tv", base.tv);
  base.cls = j.value("cls", base.cls);
  base.l1 = j.value("l1", base.l1);
  base.cyc = j.value("cyc", base.cyc);
  base.gan_d = j.value("gan_d", base.gan_d);
  base.cls_r = j.value("cls_r", base.cls_r);
  return base;
}

json aug_to_json(const AugPolicy& a) {
  return json{{"enabled", a.enabled},
              {"probs", a.probs},
              {"mixup_alpha", a.mixup_alpha},
              {"cut_lo", a.cut_lo},
              {"cut_hi", a.cut_hi},
              {"canonical_scale", a.canonical_scale}};
}

AugPolicy aug_from_json(const json& j, AugPolicy base) {
  base.enabled = j.value("enabled", base.enabled);
  if (j.contains("probs")) {
    auto p = j.at("probs").get<std::vector<double>>();
    if (p.size() != base.probs.size())
      throw ConfigError("aug.probs must list 7 values");
    std::copy(p.begin(), p.end(), base.probs.begin());
  }
  base.mixup_alpha = j.value("mixup_alpha", base.mixup_alpha);
  base.cut_lo = j.value("cut_lo", base.cut_lo);
  base.cut_hi = j.value("cut_hi", base.cut_hi);
  base.canonical_scale = j.value("canonical_scale", base.canonical_scale);
  return base;
}

json config_to_json(const TrainConfig& c) {
  return json{{"batch_size", c.batch_size},
              {"patch", c.patch},
              {"scale", c.scale},
              {"iterations", c.iterations},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"weight_decay", c.weight_decay},
              {"lr0", c.lr0},
              {"lr_milestones", c.lr_milestones},
              {"lr_factor", c.lr_factor},
              {"ablation_mode", ablation_name(c.ablation_mode)},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every},
              {"weights", weights_to_json(c.weights)},
              {"flip_rotate", c.flip_rotate},
              {"aug", aug_to_json(c.aug)},
              {"backbone", c.backbone},
              {"backbone_seed", c.backbone_seed},
              {"synth_sigma", c.synth_sigma}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.patch = j.value("patch", c.patch);
  c.scale = j.value("scale", c.scale);
  c.iterations = j.value("iterations", c.iterations);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lr0 = j.value("lr0", c.lr0);
  if (j.contains("lr_milestones"))
    c.lr_milestones = j.at("lr_milestones").get<std::vector<int64_t>>();
  c.lr_factor = j.value("lr_factor", c.lr_factor);
  if (j.contains("ablation_mode"))
    c.ablation_mode = ablation_from_name(j.at("ablation_mode").get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  if (j.contains("weights")) c.weights = weights_from_json(j.at("weights"), c.weights);
  c.flip_rotate = j.value("flip_rotate", c.flip_rotate);
  if (j.contains("aug")) c.aug = aug_from_json(j.at("aug"), c.aug);
  c.backbone = j.value("backbone", c.backbone);
  c.backbone_seed = j.value("backbone_seed", c.backbone_seed);
  c.synth_sigma = j.value("synth_sigma", c.synth_sigma);
  return c;
}

}  // namespace

std::string TrainConfig::to_json() const { return config_to_json(*this).dump(); }

TrainConfig TrainConfig::from_json(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError("config parse error: " + std::string(e.what()));
  }
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

void TrainConfig::set_override(const std::string& key, const std::string& value) {
  json j = config_to_json(*this);
  // Dotted keys address nested sections, e.g. weights.l1 or aug.enabled.
  json* slot = &j;
  std::string rest = key;
  for (size_t dot = rest.find('.'); dot != std::string::npos;
       dot = rest.find('.')) {
    const std::string head = rest.substr(0, dot);
    if (!slot->contains(head))
      throw ConfigError("unknown config key '" + key + "'");
    slot = &(*slot)[head];
    rest = rest.substr(dot + 1);
  }
  if (!slot->contains(rest)) throw ConfigError("unknown config key '" + key + "'");
  json& leaf = (*slot)[rest];
  try {
    if (leaf.is_string()) {
      leaf = value;
    } else if (leaf.is_boolean()) {
      if (value == "true" || value == "1") leaf = true;
      else if (value == "false" || value == "0") leaf = false;
      else throw ConfigError("expected boolean for '" + key + "'");
    } else if (leaf.is_number_integer() || leaf.is_number_unsigned()) {
      leaf = json::parse(value);
      if (!leaf.is_number()) throw ConfigError("expected number");
    } else if (leaf.is_number_float()) {
      leaf = std::stod(value);
    } else if (leaf.is_array()) {
      leaf = json::parse(value);
      if (!leaf.is_array()) throw ConfigError("expected array");
    } else {
      throw ConfigError("cannot override structured key '" + key + "'");
    }
  } catch (const std::exception&) {
    throw ConfigError("bad value '" + value + "' for config key '" + key + "'");
  }
  *this = config_from_json(j);
}

double lr_schedule(int64_t iter, const TrainConfig& cfg) {
  if (iter < 0) throw ConfigError("lr_schedule: iter must be >= 0");
  double lr = cfg.lr0;
  for (int64_t m : cfg.lr_milestones)
    if (m <= iter) lr *= cfg.lr_factor;
  return lr;
}

}  // namespace starsr
