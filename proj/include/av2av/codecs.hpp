#pragma once

// Exactly invertible latent codecs: non-overlapping patchify followed by a
// seeded orthonormal map. Decoding applies the transpose, so the round trip is
// exact up to float rounding and the map preserves Euclidean norm.

#include <nlohmann/json_fwd.hpp>

#include "av2av/media.hpp"
#include "av2av/tensor.hpp"

namespace av2av::codecs {

struct CodecSpec {
  int patch_t = 2;
  int patch_h = 4;
  int patch_w = 4;
  int audio_patch = 40;
  std::uint64_t basis_seed = 1234;

  bool operator==(const CodecSpec&) const = default;
};

void to_json(nlohmann::json& j, const CodecSpec& s);
void from_json(const nlohmann::json& j, CodecSpec& s);

struct LatentShape {
  int t = 0, h = 0, w = 0;  // video latent grid
  int video_channels = 0;
  int audio_tokens = 0;
  int audio_channels = 0;

  int video_tokens() const { return t * h * w; }
  bool operator==(const LatentShape&) const = default;
};

enum class Role { source, target, noisy, noise };

// Per-modality latents; video rows are (t', y', x') grid cells in row-major order.
struct LatentBundle {
  MatF video;
  MatF audio;
  Role role = Role::source;
};

class Codec {
 public:
  Codec(const CodecSpec& spec, const ClipConfig& clip);

  const CodecSpec& spec() const { return spec_; }
  const ClipConfig& clip_config() const { return clip_; }
  const LatentShape& latent_shape() const { return shape_; }

  MatF encode_video(const std::vector<float>& video) const;
  std::vector<float> decode_video(const MatF& latent) const;
  MatF encode_audio(const std::vector<float>& audio) const;
  std::vector<float> decode_audio(const MatF& latent) const;

  LatentBundle encode(const MediaClip& clip, Role role = Role::source) const;
  MediaClip decode(const LatentBundle& latents) const;

  const MatD& video_basis() const { return video_basis_; }
  const MatD& audio_basis() const { return audio_basis_; }

 private:
  CodecSpec spec_;
  ClipConfig clip_;
  LatentShape shape_;
  MatD video_basis_;  // P x P orthonormal
  MatD audio_basis_;
};

// Seeded Haar-distributed orthonormal matrix via QR of a Gaussian matrix.
MatD orthonormal_basis(int n, std::uint64_t seed);

}  // namespace av2av::codecs
