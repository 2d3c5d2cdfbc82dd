#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "starsr/checkpoint.hpp"
#include "starsr/evalkit.hpp"
#include "starsr/models.hpp"

namespace starsr {

// Builds the generator from a training checkpoint (param.G.* arrays).
std::shared_ptr<Generator<float>> load_generator(const Checkpoint& ckpt);

// Frozen-weights SR map: canonical-grid LR in, clamped SR estimate out.
SrFunction make_sr_function(std::shared_ptr<Generator<float>> gen);

struct SynthArgs {
  std::filesystem::path hr_dir;
  std::filesystem::path out_dir;
  int scale = 4;
  double sigma = 0.0;
  uint64_t seed = 0;
  int bit_depth = 8;
};
int cmd_synth(const SynthArgs& args);

struct TrainArgs {
  std::optional<std::filesystem::path> config_file;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::filesystem::path corpus_dir;
  std::optional<std::filesystem::path> run_dir;
  std::optional<std::filesystem::path> resume;
  std::optional<std::string> mode;
  bool desk_scale = false;
  bool quiet = false;
};
int cmd_train(const TrainArgs& args);

struct InferArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path input_dir;
  std::filesystem::path output_dir;
  int scale = 4;
};
int cmd_infer(const InferArgs& args);

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path corpus_dir;
  std::vector<std::string> domains;  // empty -> all four LR domains
  std::optional<std::filesystem::path> table_out;
  std::optional<std::filesystem::path> report_out;
};
int cmd_eval(const EvalArgs& args);

struct ReportArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path corpus_dir;
  std::filesystem::path out_file;
  std::string domain = "bicubic";
  int max_rows = 8;
};
int cmd_report(const ReportArgs& args);

// Run-directory root: $STARSR_RUN_ROOT or ./runs.
std::filesystem::path run_root();

}  // namespace starsr
