#pragma once

// Mask-guided, audio-synchronized video synthesis engine (toy scale).
//
// A single-stream video transformer whose input tokens are
//   [z_t ++ masked-background latent ++ downsampled mask]
// optionally preceded by reference-frame tokens. Each block runs modulated
// self-attention, plain instruction cross-attention, frame-wise audio
// cross-attention and a feed-forward. Audio features are a learned weighted
// sum over the tap points of the toy audio encoder.
//
// Trained by self-reconstruction: the model regenerates a clip's video from
// its own audio, an entity mask and "reconstruct the video".

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <optional>
#include <vector>

#include "av2av/audio_encoder.hpp"
#include "av2av/codecs.hpp"
#include "av2av/dataset.hpp"
#include "av2av/flowtrain.hpp"
#include "av2av/inference.hpp"
#include "av2av/nn.hpp"

namespace av2av::dataengine {

// Binary (T, H, W) grid, row-major.
struct EntityMask {
  int frames = 0, height = 0, width = 0;
  std::vector<std::uint8_t> m;

  static EntityMask zeros(const ClipConfig& clip);
  std::uint8_t& at(int t, int y, int x) { return m[(static_cast<std::size_t>(t) * height + y) * width + x]; }
  std::uint8_t at(int t, int y, int x) const { return m[(static_cast<std::size_t>(t) * height + y) * width + x]; }
  std::size_t count() const;
};

// Union of a sprite's pixel boxes per frame.
EntityMask sprite_mask(const synthworld::Sprite& s, const ClipConfig& clip);

// Per-patch max-pool to one channel at latent resolution (rows in codec order).
template <typename S>
Mat<S> downsample_mask(const EntityMask& mask, const codecs::CodecSpec& spec, const codecs::LatentShape& shape);

template <typename S>
Mat<S> concat_mask(const Mat<S>& z, const Mat<S>& mask_latent);

// Video with masked pixels set to zero.
MediaClip mask_out(const MediaClip& clip, const EntityMask& mask);

// e_bar(t) = sum_l alpha_l e^(l,t), alpha unconstrained.
template <typename S>
Mat<S> aggregate_audio(const std::vector<Mat<S>>& layers, const RowVec<S>& alpha);

// Queries of latent frame t' (tokens [t' * per_frame, (t'+1) * per_frame))
// attend only to audio rows [t' * patch_t, (t'+1) * patch_t). Returns the
// attention output without the residual.
template <typename S>
struct FramewiseCache {
  std::vector<typename nn::AttentionSite<S>::Cache> groups;
};

template <typename S>
Mat<S> framewise_attention(const nn::AttentionSite<S>& site, const Mat<S>& tokens, const Mat<S>& audio,
                           int tokens_per_frame, int patch_t, FramewiseCache<S>* cache);

template <typename S>
struct FramewiseGrads {
  Mat<S> dtokens, daudio;
};

template <typename S>
FramewiseGrads<S> framewise_attention_backward(const nn::AttentionSite<S>& site, const Mat<S>& dout,
                                               const FramewiseCache<S>& cache, int tokens_per_frame, int patch_t,
                                               Eigen::Index audio_rows);

// tokens + framewise_attention(tokens).
template <typename S>
Mat<S> framewise_cross_attention(const nn::AttentionSite<S>& site, const Mat<S>& tokens, const Mat<S>& audio,
                                 int tokens_per_frame, int patch_t);

template <typename S>
Mat<S> prepend_reference(const Mat<S>& ref, const Mat<S>& tokens);
template <typename S>
Mat<S> trim_reference(const Mat<S>& seq, Eigen::Index n_ref);

struct EngineConfig {
  int depth = 2;
  int width = 128;
  int heads = 4;
  int mlp_ratio = 2;
  int time_dim = 32;
  int vocab_size = 64;
  int max_instruction_len = 16;
  int audio_dim = 32;
  std::uint64_t audio_seed = 99;
  std::uint64_t init_seed = 23;

  bool operator==(const EngineConfig&) const = default;
};

void to_json(nlohmann::json& j, const EngineConfig& c);
void from_json(const nlohmann::json& j, EngineConfig& c);

// Per-example conditioning.
template <typename S>
struct EngineInputs {
  Mat<S> background;          // N x C, latent of the masked-out clip
  Mat<S> mask;                // N x 1
  std::vector<Mat<S>> audio;  // L x (T x audio_dim)
  std::vector<int> tokens;
  Mat<S> reference;  // N_ref x C, zero rows when absent
};

template <typename S>
struct EngineBlockCache {
  RowVec<S> mod;
  Mat<S> h0, a_in, sa, h1, s_in, inj, h2, u_in, au, h3, f_in, ff_pre, ff_act, ff;
  nn::NormCache<S> n1, n2, n3, n4;
  typename nn::AttentionSite<S>::Cache self, ixattn;
  FramewiseCache<S> audio;
};

template <typename S>
struct EngineCache {
  Mat<S> x_in, ref, f_c, e_bar;
  std::vector<Mat<S>> audio;
  std::vector<int> tokens;
  RowVec<S> t_emb, t1, temb, cond, fmod;
  std::vector<EngineBlockCache<S>> blocks;
  Mat<S> h_trim, f_out;
  nn::NormCache<S> nf;
};

template <typename S>
class EngineModel {
 public:
  EngineModel(const EngineConfig& cfg, const codecs::CodecSpec& codec, const codecs::LatentShape& shape);
  EngineModel(const EngineModel&) = delete;
  EngineModel& operator=(const EngineModel&) = delete;

  const EngineConfig& config() const { return cfg_; }
  const codecs::CodecSpec& codec_spec() const { return codec_; }
  const codecs::LatentShape& latent_shape() const { return shape_; }
  nn::ParamStore<S>& params() { return store_; }
  const nn::ParamStore<S>& params() const { return store_; }
  const RowVec<S> alpha() const { return alpha_->value.row(0); }
  const nn::AttentionSite<S>& audio_site(int block) const { return blocks_[static_cast<std::size_t>(block)].audio; }
  nn::AttentionSite<S>& audio_site(int block) { return blocks_[static_cast<std::size_t>(block)].audio; }

  // Velocity for the video latent only.
  Mat<S> forward(double t, const Mat<S>& noisy, const EngineInputs<S>& in, EngineCache<S>* cache = nullptr) const;
  // Accumulates parameter gradients; returns dL/d(noisy).
  Mat<S> backward(const EngineCache<S>& cache, const Mat<S>& d_out);

 private:
  struct Block {
    nn::Linear<S> mod;  // d -> 12d: (shift, scale, gate) for self, instruction, audio, ffn
    nn::AttentionSite<S> self, instr, audio;
    nn::Linear<S> ff1, ff2;
  };

  EngineConfig cfg_;
  codecs::CodecSpec codec_;
  codecs::LatentShape shape_;
  nn::ParamStore<S> store_;
  nn::Param<S>* instr_table_ = nullptr;
  nn::Param<S>* instr_pos_ = nullptr;
  nn::Param<S>* pos_ = nullptr;
  nn::Param<S>* ref_pos_ = nullptr;
  nn::Param<S>* alpha_ = nullptr;
  nn::Linear<S> in_proj_, ref_proj_, t_fc1_, t_fc2_, final_mod_, head_;
  std::vector<Block> blocks_;
};

// Reconstruction flow-matching loss: MSE(v_hat, z1 - eps) at z_t, all
// conditioners active. Fills d_out with dL/d(v_hat) when non-null.
template <typename S>
double engine_reconstruction_loss(const EngineModel<S>& model, const Mat<S>& z1, const EngineInputs<S>& in,
                                  const Mat<S>& eps, double t, EngineCache<S>* cache = nullptr,
                                  Mat<S>* d_out = nullptr);

flowtrain::GradCheckReport engine_grad_check(EngineModel<double>& model, const MatD& z1,
                                             const EngineInputs<double>& in, const MatD& eps, double t,
                                             int n_params = 200, double h = 1e-5, std::uint64_t seed = 1);

// Builds conditioning from raw media. The reference frame (if any) is
// encoded as a static clip of patch_t copies, giving h * w tokens.
EngineInputs<float> make_inputs(const codecs::Codec& codec, const AudioEncoder& enc, const MediaClip& clip,
                                const std::vector<float>& audio, const EntityMask& mask,
                                const std::vector<int>& tokens, std::optional<int> reference_frame);

struct EngineTrainConfig {
  double lr = 1e-3;
  double grad_clip = 1.0;
  int steps = 400;
  int batch_size = 2;
  double reference_dropout = 0.5;
  std::uint64_t seed = 11;

  bool operator==(const EngineTrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const EngineTrainConfig& c);
void from_json(const nlohmann::json& j, EngineTrainConfig& c);

struct EngineCheckpoint {
  EngineConfig model;
  codecs::CodecSpec codec;
  ClipConfig clip;
  EngineTrainConfig train;
  int step = 0;
  std::vector<flowtrain::TraceRow> trace;
  std::map<std::string, MatF> params;
};

// Same container as editor checkpoints; header kind "engine".
void save_engine(const std::filesystem::path& path, const EngineCheckpoint& c);
EngineCheckpoint load_engine(const std::filesystem::path& path);
std::unique_ptr<EngineModel<float>> engine_from_checkpoint(const EngineCheckpoint& c);

// Self-reconstruction training on the train split's clips (sources and
// targets), masking one random sprite per example.
EngineCheckpoint train_engine(const EngineConfig& model_cfg, const EngineTrainConfig& cfg,
                              const synthworld::DatasetManifest& data, const codecs::CodecSpec& codec,
                              const std::filesystem::path& out_dir = {});

// Generates the video for `edited_audio`; the returned clip carries that audio.
MediaClip synthesize_target(const MediaClip& source, const std::vector<float>& edited_audio,
                            const EntityMask& mask, const std::vector<int>& tokens, const EngineCheckpoint& ckpt,
                            const inference::SolveConfig& solve, std::optional<int> reference_frame = std::nullopt);

}  // namespace av2av::dataengine
