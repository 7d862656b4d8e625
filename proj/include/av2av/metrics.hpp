#pragma once

// Evaluation metrics: Frechet distance (video/audio), cosine alignments,
// temporal consistency, full-frame SSIM, LPAPS, plus the toy feature providers
// and the rule-based instruction-applied detector.

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "av2av/audio_encoder.hpp"
#include "av2av/dataset.hpp"

namespace av2av::metrics {

struct FeatureSet {
  MatD vectors;  // n_samples x d_f
  std::string provider_id;
};

// Symmetric PSD square root by eigendecomposition; negative eigenvalues clamp to 0.
MatD sqrt_psd(const MatD& a);
MatD covariance(const MatD& x);  // unbiased, rows are samples

double frechet_distance(const FeatureSet& real, const FeatureSet& gen);
double frechet_distance(const MatD& real, const MatD& gen);

double cosine_alignment(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
double temporal_consistency(const MatD& frame_features);

// Luminance (RGB mean) of frame t as an H x W matrix.
MatD luminance(const MediaClip& clip, int t);
// Single-window SSIM over the pixels where mask is false (all pixels when mask is empty).
double ssim_frame(const MatD& x, const MatD& y, const std::vector<bool>* keep = nullptr);
double ssim_video(const MediaClip& a, const MediaClip& b);
// Per-frame `keep` masks (H*W each); frames with no kept pixel are skipped.
double ssim_video_masked(const MediaClip& a, const MediaClip& b, const std::vector<std::vector<bool>>& keep);

double lpaps(const std::vector<float>& src, const std::vector<float>& edited, const dataengine::AudioEncoder& enc);

// ---- toy feature providers --------------------------------------------------

// Shared attribute space: [5 edit kinds | 6 colors | 3 shapes | ambient].
inline constexpr int kFeatureDim = 15;
inline constexpr const char* kProviderId = "toy-attr-v1";
int color_dim(synthworld::Color c);
int shape_dim(synthworld::Shape s);
inline constexpr int kAmbientDim = 14;

// Per-color pixel statistics of one frame.
struct ColorBlob {
  int pixels = 0;
  double fill = 0.0;  // pixels / bounding-box area
};
std::array<ColorBlob, synthworld::kColorCount> color_blobs(const MediaClip& clip, int t);
// Nearest shape for a fill ratio (reference ratios from rasterized sprites).
synthworld::Shape classify_fill(double fill);

Eigen::VectorXd toy_video_frame_features(const MediaClip& clip, int t);
Eigen::VectorXd toy_video_features(const MediaClip& clip);
MatD toy_video_frame_matrix(const MediaClip& clip);
Eigen::VectorXd toy_audio_features(const MediaClip& clip);
Eigen::VectorXd toy_text_features(const std::string& instruction, const synthworld::SceneGraph* scene = nullptr);

// ---- scene observation and instruction-applied detection -------------------

struct Observation {
  std::array<double, synthworld::kColorCount> color_mass{};  // mean pixels per frame
  std::array<std::optional<synthworld::Shape>, synthworld::kColorCount> color_shape{};
  RowVec<double> tone_amp;  // whole-clip amplitude per identity (+ hum)
  MatD frame_tone_amp;      // frames x identities (+ hum)
};
Observation observe(const MediaClip& clip);

// Judges whether `output` realizes `edit` relative to the source and the
// ground-truth target, with 0.5x tolerances on masses and amplitudes.
bool instruction_applied(const synthworld::EditOp& edit, const synthworld::SceneGraph& source_scene,
                         const MediaClip& source, const MediaClip& target, const MediaClip& output);

// Pixels outside the union of the edited sprite's source and target boxes.
std::vector<std::vector<bool>> non_target_keep_mask(const synthworld::EditOp& edit,
                                                    const synthworld::SceneGraph& source,
                                                    const synthworld::SceneGraph& target, const ClipConfig& clip);

// ---- evaluation -------------------------------------------------------------

struct SampleMetrics {
  int index = 0;
  std::string edit_kind;
  std::string instruction;
  double ssim = 0, ssim_nontarget = 0, lpaps = 0, tv_a = 0, ta_a = 0, av_a = 0, tc = 0;
  bool applied = false;
};

struct MetricsReport {
  std::string dataset;
  std::string provider_id = kProviderId;
  int samples = 0;
  double fvd = 0, fad = 0, tv_a = 0, ta_a = 0, av_a = 0, tc = 0, ssim = 0, lpaps = 0;
  double ssim_nontarget = 0;
  double applied_rate = 0;
  std::vector<SampleMetrics> per_sample;
};

void to_json(nlohmann::json& j, const SampleMetrics& s);
void to_json(nlohmann::json& j, const MetricsReport& r);

// Outputs align one-to-one with the eval split entries.
MetricsReport evaluate(const synthworld::DatasetManifest& manifest, const std::vector<MediaClip>& outputs,
                       synthworld::Split split = synthworld::Split::eval);

// Loads <outputs_dir>/out_<index>.clip for each eval entry; a missing file is a named IoError.
std::vector<MediaClip> load_outputs(const synthworld::DatasetManifest& manifest, const std::filesystem::path& dir,
                                    synthworld::Split split = synthworld::Split::eval);
std::string output_name(const synthworld::ManifestEntry& e);

void write_report(const MetricsReport& r, const std::filesystem::path& dir);
// Simple line plot of one per-sample series as SVG.
std::string svg_line_plot(const std::string& title, const std::vector<double>& ys);

}  // namespace av2av::metrics
