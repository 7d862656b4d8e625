#pragma once

// Run configuration and the operator commands behind the `av2av` tool.
//
// A run config is one JSON file with a versioned schema. Every section is
// optional and defaults to the tiny desk preset; unknown keys and type
// mismatches are rejected with the offending line. Paths may be overridden by
// AV2AV_DATA_DIR, AV2AV_RUN_DIR, AV2AV_OUTPUTS_DIR and AV2AV_REPORT_DIR.

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "av2av/dataengine.hpp"
#include "av2av/flowtrain.hpp"
#include "av2av/inference.hpp"
#include "av2av/metrics.hpp"

namespace av2av::cli {

inline constexpr int kConfigVersion = 1;

struct Paths {
  std::filesystem::path data_dir = "data/tiny";
  std::filesystem::path run_dir = "runs/tiny";
  std::filesystem::path outputs_dir = "runs/tiny/outputs";
  std::filesystem::path report_dir = "runs/tiny/report";
};

struct RunConfig {
  int version = kConfigVersion;
  Paths paths;
  synthworld::DatasetConfig dataset;  // dataset.scene.clip mirrors `clip`
  int train_pairs = 2000;
  int eval_pairs = 32;
  ClipConfig clip;
  codecs::CodecSpec codec;
  backbone::ModelConfig model;
  flowtrain::TrainConfig train;
  inference::SolveConfig solve;
  dataengine::EngineConfig engine;
  dataengine::EngineTrainConfig engine_train;
  std::string provider_id = metrics::kProviderId;
};

nlohmann::json to_json(const RunConfig& c);
// Throws ConfigError with "<source>:<line>: ..." on syntax or schema errors.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);
void apply_env_overrides(RunConfig& c);

int cmd_synth(const RunConfig& cfg, std::ostream& out);

// stage: 1v, 1a, 2, all or engine.
int cmd_train(const RunConfig& cfg, const std::string& stage, bool resume, std::ostream& out);

struct EditFlags {
  std::uint64_t seed = 0;
  int steps = 50;
  inference::Method method = inference::Method::euler;
  std::optional<std::filesystem::path> export_png;  // directory
  std::optional<std::filesystem::path> export_wav;
};

int cmd_edit(const std::filesystem::path& ckpt, const std::filesystem::path& clip_path,
             const std::string& instruction_text, const std::filesystem::path& out_path, const EditFlags& flags,
             std::ostream& out);

int cmd_eval(const std::filesystem::path& manifest, const std::filesystem::path& outputs_dir,
             const std::filesystem::path& report_dir, std::ostream& out);

// Edits every entry of a split with one checkpoint, writing out_<index>.clip.
void edit_split(const flowtrain::Checkpoint& ckpt, const synthworld::DatasetManifest& data,
                const std::filesystem::path& out_dir, const inference::SolveConfig& solve,
                synthworld::Split split = synthworld::Split::eval);

// ---- ablation ---------------------------------------------------------------

enum class Variant { full, no_source_concat, no_siga, no_two_stage };
std::string_view variant_name(Variant v);

struct VariantResult {
  Variant variant = Variant::full;
  metrics::MetricsReport report;
  double eval_loss = 0.0;
  double train_seconds = 0.0;  // summed over the variant's stages
  std::vector<flowtrain::TraceRow> trace;  // final stage
};

// Trains (or reuses a completed checkpoint in <root>/<variant>/), edits the
// eval split and evaluates.
VariantResult run_variant(const RunConfig& cfg, Variant v, const synthworld::DatasetManifest& data,
                          const std::filesystem::path& root, std::ostream& out);

std::string ablation_table(const std::vector<VariantResult>& results);

int cmd_ablate(const RunConfig& cfg, std::ostream& out);

}  // namespace av2av::cli
