#include "starsr/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>

#include "starsr/config.hpp"
#include "starsr/degrade.hpp"
#include "starsr/png_io.hpp"
#include "starsr/trainer.hpp"

namespace starsr {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

uint64_t mix_seed(uint64_t seed, const std::string& name) {
  uint64_t h = seed ^ 0xcbf29ce484222325ull;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

std::shared_ptr<Generator<float>> load_generator(const Checkpoint& ckpt) {
  auto gen = std::make_shared<Generator<float>>();
  for (auto* p : gen->params()) {
    const NamedArray& arr = ckpt.require("param." + p->name);
    if (arr.shape != p->value.shape)
      throw DataError("checkpoint array 'param." + p->name +
                      "' has mismatched shape");
    p->value.v = arr.f32;
  }
  return gen;
}

SrFunction make_sr_function(std::shared_ptr<Generator<float>> gen) {
  const DomainLabel hr = encode_label(Domain::kHr);
  return [gen, hr](const ImageTensor& canonical_lr) {
    nn::Tape<float> tape;
    auto in = tape.leaf(nn::from_image<float>(canonical_lr), false);
    auto out = gen->forward(tape, in, hr);
    return clamp01(nn::to_image(tape.val(out)));
  };
}

int cmd_synth(const SynthArgs& args) {
  const std::vector<fs::path> files = sorted_pngs(args.hr_dir);
  if (files.empty())
    throw DataError("no HR PNGs found in " + args.hr_dir.string());
  const Domain domains[] = {Domain::kBicubicLr, Domain::kBilinearLr,
                            Domain::kNearestLr};
  for (Domain d : domains)
    fs::create_directories(args.out_dir / domain_name(d));
  int written = 0;
  for (const fs::path& f : files) {
    const ImageTensor hr = read_png(f);
    if (hr.height % args.scale != 0 || hr.width % args.scale != 0) {
      std::cerr << "skipping " << f.filename().string()
                << ": sides not divisible by scale\n";
      continue;
    }
    for (Domain d : domains) {
      NoiseSpec noise{args.sigma, mix_seed(args.seed, f.filename().string() +
                                                          domain_name(d))};
      DownsampleKernel kernel;
      kernel.method = kernel_for_domain(d);
      kernel.scale = args.scale;
      const ImageTensor lr = add_noise(downsample(hr, kernel), noise);
      write_png(args.out_dir / domain_name(d) / f.filename(), lr,
                args.bit_depth);
      ++written;
    }
  }
  if (written == 0) throw DataError("no images synthesized");
  std::cout << "wrote " << written << " LR images under "
            << args.out_dir.string() << "\n";
  return 0;
}

fs::path run_root() {
  if (const char* env = std::getenv("STARSR_RUN_ROOT")) return fs::path(env);
  return fs::path("runs");
}

int cmd_train(const TrainArgs& args) {
  TrainConfig cfg;
  if (args.config_file) cfg = TrainConfig::from_file(*args.config_file);
  if (args.mode) cfg.ablation_mode = ablation_from_name(*args.mode);
  if (args.desk_scale) cfg.apply_desk_scale();
  for (const auto& [key, value] : args.overrides) cfg.set_override(key, value);
  cfg.validate();

  const fs::path run_dir =
      args.run_dir.value_or(run_root() / ("run_" + std::to_string(cfg.seed) +
                                          "_" + ablation_name(cfg.ablation_mode)));
  CorpusManifest manifest = scan_corpus({args.corpus_dir});
  fs::create_directories(run_dir);
  manifest.save(run_dir / "manifest.json");

  const RunResult result =
      run_training(cfg, manifest, run_dir, args.resume, args.quiet);
  if (!args.quiet)
    std::cout << "final checkpoint: " << result.final_checkpoint.string()
              << "\n";
  return 0;
}

int cmd_infer(const InferArgs& args) {
  const Checkpoint ckpt = Checkpoint::load(args.checkpoint);
  const SrFunction sr = make_sr_function(load_generator(ckpt));
  const std::vector<fs::path> files = sorted_pngs(args.input_dir);
  if (files.empty())
    throw DataError("no input PNGs found in " + args.input_dir.string());
  fs::create_directories(args.output_dir);
  int ok = 0, failed = 0;
  for (const fs::path& f : files) {
    try {
      const ImageTensor lr = read_png(f);
      const ImageTensor lifted = to_canonical_grid(lr, args.scale);
      write_png(args.output_dir / f.filename(), sr(lifted));
      ++ok;
    } catch (const std::exception& e) {
      ++failed;
      std::cerr << "skipping " << f.filename().string() << ": " << e.what()
                << "\n";
    }
  }
  std::cout << "super-resolved " << ok << " images (" << failed
            << " skipped) into " << args.output_dir.string() << "\n";
  if (ok == 0) throw DataError("all inputs failed");
  return 0;
}

namespace {

FeatureBackbone<float> backbone_from_config(const std::string& config_json,
                                            bool* comparable) {
  TrainConfig cfg = TrainConfig::from_json(config_json);
  *comparable = cfg.backbone != "fixed-random";
  if (cfg.backbone == "fixed-random")
    return FeatureBackbone<float>::fixed_random(cfg.backbone_seed);
  const Checkpoint bb = Checkpoint::load(cfg.backbone);
  std::map<std::string, std::pair<std::vector<int>, std::vector<float>>> arrays;
  for (const auto& [name, arr] : bb.arrays)
    arrays.emplace(name, std::make_pair(arr.shape, arr.f32));
  return FeatureBackbone<float>::from_arrays(arrays);
}

}  // namespace

int cmd_eval(const EvalArgs& args) {
  const Checkpoint ckpt = Checkpoint::load(args.checkpoint);
  const SrFunction sr = make_sr_function(load_generator(ckpt));
  const CorpusManifest manifest = scan_corpus({args.corpus_dir});

  std::vector<Domain> domains;
  if (args.domains.empty()) {
    domains = {Domain::kBicubicLr, Domain::kBilinearLr, Domain::kNearestLr,
               Domain::kRealLr};
  } else {
    for (const std::string& name : args.domains)
      domains.push_back(domain_from_name(name));
  }

  EvalOptions opts;
  bool comparable = false;
  FeatureBackbone<float> backbone =
      backbone_from_config(ckpt.config_json, &comparable);
  opts.backbone = &backbone;
  opts.backbone_comparable = comparable;

  const std::vector<EvalRecord> records = evaluate(sr, manifest, domains, opts);
  const std::string table = format_eval_table(records);
  std::cout << table;
  if (args.table_out) {
    std::ofstream f(*args.table_out);
    if (!f) throw DataError("cannot write table " + args.table_out->string());
    f << table;
  }
  if (args.report_out) {
    const ImageTensor grid =
        make_report_grid(sr, manifest, domains.front(), 4, 8);
    write_png(*args.report_out, grid);
  }
  // Success iff every requested domain actually evaluated at least once.
  for (const EvalRecord& r : records)
    if (!r.is_average_row && r.image_count == 0)
      throw DataError("no images evaluated for domain " +
                      domain_name(r.domain));
  return 0;
}

int cmd_report(const ReportArgs& args) {
  const Checkpoint ckpt = Checkpoint::load(args.checkpoint);
  const SrFunction sr = make_sr_function(load_generator(ckpt));
  const CorpusManifest manifest = scan_corpus({args.corpus_dir});
  const ImageTensor grid = make_report_grid(
      sr, manifest, domain_from_name(args.domain), 4, args.max_rows);
  write_png(args.out_file, grid);
  std::cout << "wrote report grid " << args.out_file.string() << "\n";
  return 0;
}

}  // namespace starsr
