#include "av2av/codecs.hpp"

#include <nlohmann/json.hpp>

#include "av2av/error.hpp"

namespace av2av::codecs {

void to_json(nlohmann::json& j, const CodecSpec& s) {
  j = nlohmann::json{{"video_patch", {s.patch_t, s.patch_h, s.patch_w}},
                     {"audio_patch", s.audio_patch},
                     {"basis_seed", s.basis_seed}};
}

void from_json(const nlohmann::json& j, CodecSpec& s) {
  const auto& vp = j.at("video_patch");
  s.patch_t = vp.at(0).get<int>();
  s.patch_h = vp.at(1).get<int>();
  s.patch_w = vp.at(2).get<int>();
  s.audio_patch = j.at("audio_patch").get<int>();
  s.basis_seed = j.at("basis_seed").get<std::uint64_t>();
}

MatD orthonormal_basis(int n, std::uint64_t seed) {
  Rng rng(seed);
  const MatD g = randn<double>(n, n, rng);
  Eigen::HouseholderQR<MatD> qr(g);
  MatD q = qr.householderQ();
  // Fix column signs so the factorization is unique.
  const MatD r = qr.matrixQR().template triangularView<Eigen::Upper>();
  for (int i = 0; i < n; ++i)
    if (r(i, i) < 0) q.col(i) *= -1.0;
  return q;
}

Codec::Codec(const CodecSpec& spec, const ClipConfig& clip) : spec_(spec), clip_(clip) {
  clip.validate();
  if (spec.patch_t <= 0 || spec.patch_h <= 0 || spec.patch_w <= 0 || spec.audio_patch <= 0)
    throw ShapeError("codec: patch sizes must be positive");
  if (clip.frames % spec.patch_t != 0 || clip.height % spec.patch_h != 0 ||
      clip.width % spec.patch_w != 0)
    throw ShapeError("codec: video patch does not divide clip dimensions");
  if (clip.audio_size() % static_cast<std::size_t>(spec.audio_patch) != 0)
    throw ShapeError("codec: audio patch does not divide waveform length");
  shape_.t = clip.frames / spec.patch_t;
  shape_.h = clip.height / spec.patch_h;
  shape_.w = clip.width / spec.patch_w;
  shape_.video_channels = spec.patch_t * spec.patch_h * spec.patch_w * 3;
  shape_.audio_tokens = static_cast<int>(clip.audio_size() / static_cast<std::size_t>(spec.audio_patch));
  shape_.audio_channels = spec.audio_patch;
  video_basis_ = orthonormal_basis(shape_.video_channels, derive_seed(spec.basis_seed, 1));
  audio_basis_ = orthonormal_basis(shape_.audio_channels, derive_seed(spec.basis_seed, 2));
}

MatF Codec::encode_video(const std::vector<float>& video) const {
  if (video.size() != clip_.video_size()) throw ShapeError("encode_video: size mismatch");
  const int P = shape_.video_channels;
  MatD patches(shape_.video_tokens(), P);
  int row = 0;
  for (int tt = 0; tt < shape_.t; ++tt)
    for (int yy = 0; yy < shape_.h; ++yy)
      for (int xx = 0; xx < shape_.w; ++xx, ++row) {
        int col = 0;
        for (int dt = 0; dt < spec_.patch_t; ++dt)
          for (int dy = 0; dy < spec_.patch_h; ++dy)
            for (int dx = 0; dx < spec_.patch_w; ++dx)
              for (int c = 0; c < 3; ++c, ++col) {
                const int t = tt * spec_.patch_t + dt;
                const int y = yy * spec_.patch_h + dy;
                const int x = xx * spec_.patch_w + dx;
                patches(row, col) =
                    video[((static_cast<std::size_t>(t) * clip_.height + y) * clip_.width + x) * 3 + c];
              }
      }
  return (patches * video_basis_).cast<float>();
}

std::vector<float> Codec::decode_video(const MatF& latent) const {
  if (latent.rows() != shape_.video_tokens() || latent.cols() != shape_.video_channels)
    throw ShapeError("decode_video: latent shape mismatch");
  const MatD patches = latent.cast<double>() * video_basis_.transpose();
  std::vector<float> video(clip_.video_size());
  int row = 0;
  for (int tt = 0; tt < shape_.t; ++tt)
    for (int yy = 0; yy < shape_.h; ++yy)
      for (int xx = 0; xx < shape_.w; ++xx, ++row) {
        int col = 0;
        for (int dt = 0; dt < spec_.patch_t; ++dt)
          for (int dy = 0; dy < spec_.patch_h; ++dy)
            for (int dx = 0; dx < spec_.patch_w; ++dx)
              for (int c = 0; c < 3; ++c, ++col) {
                const int t = tt * spec_.patch_t + dt;
                const int y = yy * spec_.patch_h + dy;
                const int x = xx * spec_.patch_w + dx;
                video[((static_cast<std::size_t>(t) * clip_.height + y) * clip_.width + x) * 3 + c] =
                    static_cast<float>(patches(row, col));
              }
      }
  return video;
}

MatF Codec::encode_audio(const std::vector<float>& audio) const {
  if (audio.size() != clip_.audio_size()) throw ShapeError("encode_audio: size mismatch");
  const Eigen::Map<const Mat<float>> patches(audio.data(), shape_.audio_tokens, shape_.audio_channels);
  return (patches.cast<double>() * audio_basis_).cast<float>();
}

std::vector<float> Codec::decode_audio(const MatF& latent) const {
  if (latent.rows() != shape_.audio_tokens || latent.cols() != shape_.audio_channels)
    throw ShapeError("decode_audio: latent shape mismatch");
  const MatF patches = (latent.cast<double>() * audio_basis_.transpose()).cast<float>();
  return {patches.data(), patches.data() + patches.size()};
}

LatentBundle Codec::encode(const MediaClip& clip, Role role) const {
  if (!(clip.config == clip_)) throw ShapeError("codec: clip config does not match codec");
  return LatentBundle{encode_video(clip.video), encode_audio(clip.audio), role};
}

MediaClip Codec::decode(const LatentBundle& latents) const {
  MediaClip clip;
  clip.config = clip_;
  clip.video = decode_video(latents.video);
  clip.audio = decode_audio(latents.audio);
  return clip;
}

}  // namespace av2av::codecs
