// av2av: dataset synthesis, two-stage training, editing, evaluation and ablation.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>

#include "av2av/cli.hpp"
#include "av2av/error.hpp"

using namespace av2av;

namespace {

cli::RunConfig config_from(const std::string& path) {
  cli::RunConfig cfg = path.empty() ? cli::RunConfig{} : cli::load_run_config(path);
  cli::apply_env_overrides(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction-guided joint audio-video editing on a synthetic sprite world"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;

  auto* synth = app.add_subcommand("synth", "Generate a verified paired dataset");
  synth->add_option("--config", config, "Run config (JSON)");
  synth->add_option("--out", out, "Dataset directory (overrides paths.data_dir)");
  synth->add_option("--seed", seed, "Dataset seed");

  std::string stage = "all";
  bool resume = false;
  auto* train = app.add_subcommand("train", "Train one stage or the whole schedule");
  train->add_option("--config", config, "Run config (JSON)");
  train->add_option("--stage", stage, "1v, 1a, 2, all or engine")->capture_default_str();
  train->add_option("--out", out, "Run directory (overrides paths.run_dir)");
  train->add_option("--seed", seed, "Training seed");
  train->add_flag("--resume", resume, "Continue from the stage checkpoint in the run directory");

  std::string ckpt, clip_path, text;
  cli::EditFlags eflags;
  std::string method = "euler";
  std::string png_dir, wav_path;
  auto* edit = app.add_subcommand("edit", "Edit one clip with a trained checkpoint");
  edit->add_option("--ckpt", ckpt, "Editor checkpoint")->required();
  edit->add_option("--clip", clip_path, "Source .clip")->required();
  edit->add_option("--instruction", text, "Instruction text")->required();
  edit->add_option("--out", out, "Output .clip")->required();
  edit->add_option("--seed", eflags.seed, "Noise seed")->capture_default_str();
  edit->add_option("--steps", eflags.steps, "ODE steps")->capture_default_str();
  edit->add_option("--method", method, "euler or midpoint")->capture_default_str();
  edit->add_option("--export-png", png_dir, "Write PNG frames to this directory");
  edit->add_option("--export-wav", wav_path, "Write the waveform to this WAV file");

  std::string manifest, outputs, report;
  auto* eval = app.add_subcommand("eval", "Score edited outputs against the eval split");
  eval->add_option("--manifest", manifest, "Dataset directory or manifest.json")->required();
  eval->add_option("--outputs", outputs, "Directory with out_<index>.clip files")->required();
  eval->add_option("--out", report, "Report directory")->required();

  auto* ablate = app.add_subcommand("ablate", "Train and compare the ablation variants");
  ablate->add_option("--config", config, "Run config (JSON)");
  ablate->add_option("--out", out, "Run directory (overrides paths.run_dir)");

  auto* dump = app.add_subcommand("config", "Print the default run config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      auto cfg = config_from(config);
      if (!out.empty()) cfg.paths.data_dir = out;
      if (seed) cfg.dataset.seed = *seed;
      return cli::cmd_synth(cfg, std::cout);
    }
    if (train->parsed()) {
      auto cfg = config_from(config);
      if (!out.empty()) cfg.paths.run_dir = out;
      if (seed) cfg.train.seed = *seed;
      return cli::cmd_train(cfg, stage, resume, std::cout);
    }
    if (edit->parsed()) {
      eflags.method = inference::parse_method(method);
      if (!png_dir.empty()) eflags.export_png = png_dir;
      if (!wav_path.empty()) eflags.export_wav = wav_path;
      return cli::cmd_edit(ckpt, clip_path, text, out, eflags, std::cout);
    }
    if (eval->parsed()) return cli::cmd_eval(manifest, outputs, report, std::cout);
    if (ablate->parsed()) {
      auto cfg = config_from(config);
      if (!out.empty()) cfg.paths.run_dir = out;
      return cli::cmd_ablate(cfg, std::cout);
    }
    if (dump->parsed()) {
      std::cout << cli::to_json(cli::RunConfig{}).dump(2) << '\n';
      return 0;
    }
  } catch (const GrammarError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
