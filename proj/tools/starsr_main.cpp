#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "starsr/commands.hpp"
#include "starsr/common.hpp"

namespace {

// Leftover "--key value" pairs become config overrides (CLI > file > defaults).
std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (size_t i = 0; i < extras.size(); ++i) {
    std::string key = extras[i];
    if (key.rfind("--", 0) != 0)
      throw starsr::ConfigError("unexpected argument '" + key +
                                "' (overrides look like --key value)");
    key = key.substr(2);
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(key.substr(0, eq), key.substr(eq + 1));
      continue;
    }
    if (i + 1 >= extras.size())
      throw starsr::ConfigError("missing value for override '--" + key + "'");
    out.emplace_back(key, extras[++i]);
  }
  return out;
}

int dispatch(CLI::App& app, int argc, char** argv) {
  starsr::SynthArgs synth;
  auto* synth_cmd =
      app.add_subcommand("synth", "Synthesize bicubic/bilinear/nearest LR sets");
  synth_cmd->add_option("--hr", synth.hr_dir, "HR image folder")->required();
  synth_cmd->add_option("--out", synth.out_dir, "Output root")->required();
  synth_cmd->add_option("--scale", synth.scale, "Downscaling factor");
  synth_cmd->add_option("--sigma", synth.sigma, "Gaussian noise std");
  synth_cmd->add_option("--seed", synth.seed, "Noise seed");
  synth_cmd->add_option("--bits", synth.bit_depth, "PNG bit depth (8 or 16)");

  starsr::TrainArgs train;
  std::string train_config, train_mode, train_resume, train_run_dir;
  auto* train_cmd = app.add_subcommand("train", "Train the multi-domain model");
  train_cmd->add_option("--corpus", train.corpus_dir, "Corpus directory")
      ->required();
  train_cmd->add_option("--config", train_config, "Config JSON file");
  train_cmd->add_option("--run-dir", train_run_dir, "Run directory");
  train_cmd->add_option("--resume", train_resume, "Checkpoint to resume from");
  train_cmd->add_option("--mode", train_mode, "Ablation mode v1|v2|v3");
  train_cmd->add_flag("--desk-scale", train.desk_scale,
                      "Small CPU profile (patch 64, batch 4, 500 iterations)");
  train_cmd->add_flag("--quiet", train.quiet, "Suppress progress output");
  train_cmd->allow_extras();

  starsr::InferArgs infer;
  auto* infer_cmd =
      app.add_subcommand("infer", "Super-resolve a folder of blind LR images");
  infer_cmd->add_option("--checkpoint", infer.checkpoint, "Trained checkpoint")
      ->required();
  infer_cmd->add_option("--in", infer.input_dir, "LR input folder")->required();
  infer_cmd->add_option("--out", infer.output_dir, "SR output folder")
      ->required();
  infer_cmd->add_option("--scale", infer.scale, "Upscaling factor");

  starsr::EvalArgs eval;
  std::string eval_table, eval_report;
  auto* eval_cmd =
      app.add_subcommand("eval", "Evaluate PSNR/SSIM/LPIPS per LR domain");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Trained checkpoint")
      ->required();
  eval_cmd->add_option("--corpus", eval.corpus_dir, "Corpus directory")
      ->required();
  eval_cmd->add_option("--domains", eval.domains,
                       "Subset of bicubic bilinear nearest real");
  eval_cmd->add_option("--table", eval_table, "Write the results table here");
  eval_cmd->add_option("--report", eval_report, "Write an image grid here");

  starsr::ReportArgs report;
  auto* report_cmd =
      app.add_subcommand("report", "Write a LR / SR / HR comparison grid");
  report_cmd->add_option("--checkpoint", report.checkpoint, "Trained checkpoint")
      ->required();
  report_cmd->add_option("--corpus", report.corpus_dir, "Corpus directory")
      ->required();
  report_cmd->add_option("--out", report.out_file, "Output PNG")->required();
  report_cmd->add_option("--domain", report.domain, "LR domain to show");
  report_cmd->add_option("--rows", report.max_rows, "Max image rows");

  app.require_subcommand(1);
  app.parse(argc, argv);

  if (synth_cmd->parsed()) return starsr::cmd_synth(synth);
  if (train_cmd->parsed()) {
    if (!train_config.empty()) train.config_file = train_config;
    if (!train_run_dir.empty()) train.run_dir = train_run_dir;
    if (!train_resume.empty()) train.resume = train_resume;
    if (!train_mode.empty()) train.mode = train_mode;
    train.overrides = parse_overrides(train_cmd->remaining());
    return starsr::cmd_train(train);
  }
  if (infer_cmd->parsed()) return starsr::cmd_infer(infer);
  if (eval_cmd->parsed()) {
    if (!eval_table.empty()) eval.table_out = eval_table;
    if (!eval_report.empty()) eval.report_out = eval_report;
    return starsr::cmd_eval(eval);
  }
  if (report_cmd->parsed()) return starsr::cmd_report(report);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"starsr: multi-domain single-image super-resolution toolkit"};
  try {
    return dispatch(app, argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const starsr::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const starsr::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const starsr::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const starsr::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const starsr::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
