#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "av2av/codecs.hpp"
#include "av2av/error.hpp"

using namespace av2av;

namespace {

MediaClip random_clip(const ClipConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  MediaClip c = MediaClip::blank(cfg);
  for (auto& x : c.video) x = u(rng);
  for (auto& x : c.audio) x = 2.0F * u(rng) - 1.0F;
  return c;
}

double norm(const std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

TEST(Codecs, BasisIsOrthonormal) {
  const MatD q = codecs::orthonormal_basis(96, 5);
  EXPECT_LT((q.transpose() * q - MatD::Identity(96, 96)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Codecs, DefaultLatentShape) {
  const codecs::Codec codec(codecs::CodecSpec{}, ClipConfig{});
  const auto& s = codec.latent_shape();
  EXPECT_EQ(s.t, 8);
  EXPECT_EQ(s.h, 8);
  EXPECT_EQ(s.w, 8);
  EXPECT_EQ(s.video_channels, 96);
  EXPECT_EQ(s.audio_tokens, 16 * 200 / 40);
  EXPECT_EQ(s.audio_channels, 40);
}

TEST(Codecs, ZeroMapsToZero) {
  const ClipConfig cfg;
  const codecs::Codec codec(codecs::CodecSpec{}, cfg);
  const MediaClip blank = MediaClip::blank(cfg);
  EXPECT_EQ(codec.encode_video(blank.video).cwiseAbs().maxCoeff(), 0.0F);
  EXPECT_EQ(codec.encode_audio(blank.audio).cwiseAbs().maxCoeff(), 0.0F);
}

TEST(Codecs, RoundTripAndIsometry) {
  const ClipConfig cfg;
  const codecs::Codec codec(codecs::CodecSpec{}, cfg);
  for (std::uint64_t seed : {1, 2, 3}) {
    const MediaClip c = random_clip(cfg, seed);
    const auto lat = codec.encode(c);
    const MediaClip back = codec.decode(lat);
    double worst = 0.0;
    for (std::size_t i = 0; i < c.video.size(); ++i) worst = std::max(worst, std::abs(double(c.video[i]) - back.video[i]));
    for (std::size_t i = 0; i < c.audio.size(); ++i) worst = std::max(worst, std::abs(double(c.audio[i]) - back.audio[i]));
    EXPECT_LT(worst, 1e-5);
    EXPECT_NEAR(lat.video.cast<double>().norm(), norm(c.video), 1e-5 * norm(c.video));
    EXPECT_NEAR(lat.audio.cast<double>().norm(), norm(c.audio), 1e-5 * norm(c.audio));
  }
}

TEST(Codecs, IndivisibleShapesRejected) {
  ClipConfig cfg;
  cfg.width = 30;
  EXPECT_THROW(codecs::Codec(codecs::CodecSpec{}, cfg), ShapeError);
  codecs::CodecSpec spec;
  spec.audio_patch = 33;
  EXPECT_THROW(codecs::Codec(spec, ClipConfig{}), ShapeError);
}

TEST(Media, ClipFileRoundTrip) {
  const ClipConfig cfg;
  const MediaClip c = random_clip(cfg, 9);
  const auto path = std::filesystem::temp_directory_path() / "av2av_test_roundtrip.clip";
  write_clip(path, c);
  EXPECT_EQ(read_clip(path), c);
  std::filesystem::remove(path);
}

TEST(Media, RejectsBadMagic) {
  const auto path = std::filesystem::temp_directory_path() / "av2av_test_bad.clip";
  std::ofstream(path) << "NOTACLIP";
  EXPECT_THROW(read_clip(path), IoError);
  std::filesystem::remove(path);
}

TEST(Media, ClampRanges) {
  MediaClip c = MediaClip::blank(ClipConfig{});
  c.video[0] = 2.0F;
  c.audio[0] = -3.0F;
  EXPECT_FALSE(c.values_legal());
  c.clamp_ranges();
  EXPECT_TRUE(c.values_legal());
  EXPECT_EQ(c.video[0], 1.0F);
  EXPECT_EQ(c.audio[0], -1.0F);
}
