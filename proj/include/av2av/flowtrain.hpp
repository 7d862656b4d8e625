#pragma once

// Flow-matching objective, AdamW, the two-stage trainer and checkpoints.
//
//   z_t = (1 - t) eps + t z1,   u = z1 - eps
//   L   = lambda_v * mean((v_hat - u_v)^2) + lambda_a * mean((a_hat - u_a)^2)

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "av2av/backbone.hpp"
#include "av2av/dataset.hpp"

namespace av2av::flowtrain {

using backbone::EditorModel;
using backbone::ModelConfig;

struct TrainConfig {
  double lambda_v = 0.85;
  double lambda_a = 0.15;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global norm, <= 0 disables
  int steps_stage1_video = 1500;
  int steps_stage1_audio = 1500;
  int steps_stage2 = 2000;
  int batch_size = 4;
  std::uint64_t seed = 7;
  double condition_dropout = 0.0;
  int checkpoint_every = 250;

  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Optimizer preset with learning rate 1e-5; the desk default is 1e-3.
TrainConfig low_lr_preset();

enum class Stage { stage1_video, stage1_audio, stage2, direct };
std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view s);

// ---- objective --------------------------------------------------------------

template <typename S>
Mat<S> interpolate(const Mat<S>& eps, const Mat<S>& z1, double t);
template <typename S>
Mat<S> velocity_target(const Mat<S>& eps, const Mat<S>& z1);

template <typename S>
double mse(const Mat<S>& pred, const Mat<S>& target);

// Per-sample loss; either modality may be skipped by passing null.
template <typename S>
struct LossParts {
  double loss_v = 0.0;
  double loss_a = 0.0;
  double total = 0.0;
  Mat<S> d_video;  // dL/d(pred_v), empty when skipped
  Mat<S> d_audio;
};

template <typename S>
LossParts<S> fm_loss(const Mat<S>* pred_v, const Mat<S>* pred_a, const Mat<S>* u_v, const Mat<S>* u_a,
                     double lambda_v, double lambda_a, bool want_grad = false);

double fm_loss_value(const MatF& pred_v, const MatF& pred_a, const MatF& u_v, const MatF& u_a,
                     const TrainConfig& cfg);

// ---- optimizer --------------------------------------------------------------

struct AdamState {
  MatF m, v;
};

class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

  // Applies one update to every parameter whose branch is allowed. Returns the
  // pre-clip global gradient norm over the updated parameters.
  double step(nn::ParamStore<float>& store, const std::function<bool(nn::Branch)>& allowed);

  long long steps() const { return t_; }
  std::map<std::string, AdamState>& state() { return state_; }
  const std::map<std::string, AdamState>& state() const { return state_; }
  void set_steps(long long t) { t_ = t; }

 private:
  TrainConfig cfg_;
  long long t_ = 0;
  std::map<std::string, AdamState> state_;
};

// ---- data -------------------------------------------------------------------

struct Example {
  codecs::LatentBundle source;
  codecs::LatentBundle target;
  std::vector<int> tokens;
};

// Training or eval pairs of a manifest, encoded on demand.
class PairSource {
 public:
  PairSource(const synthworld::DatasetManifest& manifest, synthworld::Split split, const codecs::CodecSpec& spec,
             const ModelConfig& model);

  std::size_t size() const { return entries_.size(); }
  Example load(std::size_t i) const;
  const codecs::Codec& codec() const { return codec_; }
  const ModelConfig& model() const { return model_; }
  const synthworld::ManifestEntry& entry(std::size_t i) const { return *entries_[i]; }

 private:
  const synthworld::DatasetManifest* manifest_;
  std::vector<const synthworld::ManifestEntry*> entries_;
  codecs::Codec codec_;
  ModelConfig model_;
};

// ---- checkpoints ------------------------------------------------------------

struct TraceRow {
  int step = 0;
  double loss_v = 0.0;
  double loss_a = 0.0;
  double loss_total = 0.0;
};

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace);
std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path);

// Moving average with the given window (shorter at the start).
std::vector<double> smooth(const std::vector<double>& xs, int window);

struct Blob {
  std::string name;
  MatF value;
};

// Generic container: "AV2AVCKP", u64 header length, UTF-8 JSON header, then
// raw float32 blobs in header order.
struct Container {
  nlohmann::json header;
  std::vector<Blob> blobs;
  const Blob* find(const std::string& name) const;
};
void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

struct Checkpoint {
  ModelConfig model;
  codecs::CodecSpec codec;
  ClipConfig clip;
  TrainConfig train;
  Stage stage = Stage::stage1_video;
  int step = 0;
  std::string rng_state;
  std::vector<TraceRow> trace;
  std::map<std::string, MatF> params;
  long long adam_steps = 0;
  std::map<std::string, AdamState> adam;
  double train_seconds = 0.0;  // wall time spent in the training loop, across resumes
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Builds a float model from checkpoint weights.
std::unique_ptr<EditorModel<float>> model_from_checkpoint(const Checkpoint& c);
std::map<std::string, MatF> snapshot(const nn::ParamStore<float>& store);

// ---- training ---------------------------------------------------------------

struct RunOptions {
  std::filesystem::path out_dir;  // checkpoints and traces; empty disables persistence
  std::optional<std::filesystem::path> resume;
  std::function<void(Stage, const TraceRow&)> on_step;
  // Stop after this many steps of the run (for interruption tests); -1 runs to the end.
  int stop_after = -1;
};

// Trains one stage. For stage2, `init` must hold the merged stage-1 weights.
Checkpoint train_stage(Stage stage, const ModelConfig& model_cfg, const TrainConfig& cfg,
                       const synthworld::DatasetManifest& data, const codecs::CodecSpec& codec,
                       const std::map<std::string, MatF>* init, const RunOptions& opts);

Checkpoint train_stage1(nn::Branch branch, const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const synthworld::DatasetManifest& data, const codecs::CodecSpec& codec,
                        const RunOptions& opts = {});

// Video-branch weights from `video`, audio-branch weights from `audio`, shared
// weights averaged.
std::map<std::string, MatF> merge_stage1(const Checkpoint& video, const Checkpoint& audio);

Checkpoint train_stage2(const TrainConfig& cfg, const Checkpoint& video, const Checkpoint& audio,
                        const synthworld::DatasetManifest& data, const RunOptions& opts = {});

// Single-stage joint training from initialization (ablation), steps = total budget.
Checkpoint train_direct(const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const synthworld::DatasetManifest& data, const codecs::CodecSpec& codec,
                        const RunOptions& opts = {});

// Mean flow-matching loss of a model over a split with fixed per-sample seeds.
double evaluate_loss(const EditorModel<float>& model, const TrainConfig& cfg, const PairSource& data,
                     std::uint64_t seed, int repeats = 4);

// ---- gradient check ---------------------------------------------------------

struct GradCheckReport {
  int checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_param;
};

struct GradSample {
  double t = 0.5;
  MatD noise_v, noise_a, target_v, target_a, source_v, source_a;
  std::vector<int> tokens;
  backbone::ForwardFlags flags;
};

double sample_loss(EditorModel<double>& model, const GradSample& s, double lambda_v, double lambda_a);

GradCheckReport grad_check(EditorModel<double>& model, const GradSample& sample, double lambda_v,
                           double lambda_a, int n_params = 200, double h = 1e-5, std::uint64_t seed = 1);

}  // namespace av2av::flowtrain
