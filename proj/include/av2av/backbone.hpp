#pragma once

// Dual-stream diffusion transformer predicting video and audio velocity fields.
//
// Each stream embeds [noisy ++ source] latent tokens. Every block runs, per
// stream: modulated self-attention, instruction injection (SIGA or, for the
// ablation, plain cross-attention), bidirectional cross-modal attention and a
// modulated feed-forward. Timestep conditioning is adaptive layer-norm
// modulation (shift/scale/gate) from a sinusoidal embedding through a 2-layer
// MLP. Linear output heads map the width back to latent channels.

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <vector>

#include "av2av/codecs.hpp"
#include "av2av/error.hpp"
#include "av2av/nn.hpp"
#include "av2av/siga.hpp"

namespace av2av::backbone {

enum class InstructionInjection { siga, cross_attention };

struct ModelConfig {
  int depth = 4;
  int width = 128;
  int heads = 4;
  int mlp_ratio = 4;
  int vocab_size = 64;
  int max_instruction_len = 16;
  int time_dim = 64;
  InstructionInjection injection = InstructionInjection::siga;
  // false zeroes the source latents before concatenation (ablation).
  bool source_concat = true;
  std::uint64_t init_seed = 17;
  // Fixed input normalization: the model works on codec latents of
  // (video - video_center) * video_gain and audio * audio_gain.
  double video_center = 0.3;
  double video_gain = 5.0;
  double audio_gain = 5.0;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Clip <-> model-space latents under the config's normalization.
codecs::LatentBundle encode_for_model(const codecs::Codec& codec, const MediaClip& clip, const ModelConfig& cfg,
                                      codecs::Role role);
MediaClip decode_from_model(const codecs::Codec& codec, const codecs::LatentBundle& latents,
                            const ModelConfig& cfg);

enum class Stream { video = 0, audio = 1 };

struct ForwardFlags {
  bool bypass_cross_modal = false;
  // Skipping a stream is only legal with cross-modal attention bypassed.
  bool run_video = true;
  bool run_audio = true;
};

// Channel-axis concatenation [noisy ++ source].
template <typename S>
Mat<S> concat_source(const Mat<S>& noisy, const Mat<S>& source);
template <typename S>
std::pair<Mat<S>, Mat<S>> split_channels(const Mat<S>& x, Eigen::Index first);

template <typename S>
struct Modulation {
  RowVec<S> shift, scale, gate;
};

template <typename S>
struct BlockParams {
  nn::Linear<S> mod;  // d -> 9d: (shift, scale, gate) for self, injection, ffn
  nn::AttentionSite<S> self_attn;
  siga::SigaSite<S> siga;
  nn::AttentionSite<S> instr_xattn;
  nn::AttentionSite<S> cross;  // queries from this stream, keys/values from the other
  nn::Linear<S> ff1, ff2;
};

template <typename S>
struct StreamParams {
  int tokens = 0;
  int channels = 0;
  nn::Linear<S> in_proj;  // 2C -> d
  nn::Param<S>* pos = nullptr;
  nn::Linear<S> t_fc1, t_fc2;
  std::vector<BlockParams<S>> blocks;
  nn::Linear<S> final_mod;  // d -> 2d
  nn::Linear<S> head;       // d -> C
};

template <typename S>
struct BlockCache {
  RowVec<S> mod;
  Mat<S> h0;
  nn::NormCache<S> n1;
  Mat<S> a_in;
  typename nn::AttentionSite<S>::Cache self;
  Mat<S> sa;
  Mat<S> h1;
  nn::NormCache<S> n2;
  Mat<S> s_in;
  typename siga::SigaSite<S>::Cache siga;
  typename nn::AttentionSite<S>::Cache ixattn;
  Mat<S> inj;
  Mat<S> h2;
  nn::NormCache<S> n3;
  typename nn::AttentionSite<S>::Cache cross;
  bool crossed = false;
  Mat<S> h3;
  nn::NormCache<S> n4;
  Mat<S> f_in, ff_pre, ff_act, ff;
};

template <typename S>
struct StreamCache {
  bool active = false;
  Mat<S> noisy, source, x_in;
  Mat<S> f_x;
  RowVec<S> t_emb, t1, temb, cond;
  std::vector<BlockCache<S>> blocks;
  Mat<S> h_final;
  nn::NormCache<S> nf;
  RowVec<S> fmod;
  Mat<S> f_out;
};

template <typename S>
struct ForwardCache {
  std::vector<int> tokens;
  Mat<S> f_c;
  ForwardFlags flags;
  std::array<StreamCache<S>, 2> streams;
};

template <typename S>
struct Prediction {
  Mat<S> video;
  Mat<S> audio;
};

// Mean SIGA gate value per block, per stream.
struct GateTelemetry {
  std::vector<double> video;
  std::vector<double> audio;
};

template <typename S>
struct InputGrads {
  Mat<S> noisy_video, source_video, noisy_audio, source_audio;
};

template <typename S>
class EditorModel {
 public:
  EditorModel(const ModelConfig& cfg, const codecs::CodecSpec& codec, const codecs::LatentShape& shape);
  EditorModel(const EditorModel&) = delete;
  EditorModel& operator=(const EditorModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const codecs::CodecSpec& codec_spec() const { return codec_; }
  const codecs::LatentShape& latent_shape() const { return shape_; }
  nn::ParamStore<S>& params() { return store_; }
  const nn::ParamStore<S>& params() const { return store_; }
  const StreamParams<S>& stream(Stream s) const { return streams_[static_cast<int>(s)]; }
  StreamParams<S>& stream(Stream s) { return streams_[static_cast<int>(s)]; }

  // Learned token table plus learned positions; throws on out-of-vocabulary ids.
  Mat<S> embed_instruction(const std::vector<int>& tokens) const;

  Prediction<S> forward(double t, const Mat<S>& noisy_video, const Mat<S>& noisy_audio,
                        const Mat<S>& source_video, const Mat<S>& source_audio,
                        const std::vector<int>& tokens, ForwardFlags flags,
                        ForwardCache<S>* cache = nullptr, GateTelemetry* telemetry = nullptr) const;

  // Accumulates parameter gradients given dL/d(prediction). A null gradient
  // skips that stream's backward pass.
  InputGrads<S> backward(const ForwardCache<S>& cache, const Mat<S>* d_video, const Mat<S>* d_audio);

  // Copies every parameter value from a model of any scalar type by name.
  template <typename T>
  void copy_values_from(const nn::ParamStore<T>& other);

 private:
  void build_stream(Stream s, int tokens, int channels, Rng& rng);
  void stream_prologue(Stream s, double t, const Mat<S>& noisy, const Mat<S>& source,
                       StreamCache<S>& c) const;
  void block_pre_cross(Stream s, int b, const Mat<S>& f_x, const Mat<S>& f_c, StreamCache<S>& sc,
                       Mat<S>& h, double* gate_mean) const;
  void block_post_cross(Stream s, int b, StreamCache<S>& sc, Mat<S>& h) const;
  Mat<S> stream_epilogue(Stream s, const Mat<S>& h, StreamCache<S>& c) const;

  ModelConfig cfg_;
  codecs::CodecSpec codec_;
  codecs::LatentShape shape_;
  nn::ParamStore<S> store_;
  nn::Param<S>* instr_table_ = nullptr;
  nn::Param<S>* instr_pos_ = nullptr;
  std::array<StreamParams<S>, 2> streams_;
};

template <typename S>
template <typename T>
void EditorModel<S>::copy_values_from(const nn::ParamStore<T>& other) {
  for (auto& p : store_) {
    const auto* q = other.find(p.name);
    if (q == nullptr || q->value.rows() != p.value.rows() || q->value.cols() != p.value.cols())
      throw ShapeError("copy_values_from: missing or mismatched parameter " + p.name);
    p.value = q->value.template cast<S>();
  }
}

}  // namespace av2av::backbone
