#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace av2av {

struct ClipConfig {
  int frames = 16;
  int height = 32;
  int width = 32;
  int fps = 8;
  int sample_rate = 1600;

  int samples_per_frame() const { return sample_rate / fps; }
  std::size_t video_size() const {
    return static_cast<std::size_t>(frames) * height * width * 3;
  }
  std::size_t audio_size() const {
    return static_cast<std::size_t>(frames) * samples_per_frame();
  }
  // Throws ConfigError if the sample rate is not a whole multiple of fps.
  void validate() const;

  bool operator==(const ClipConfig&) const = default;
};

void to_json(nlohmann::json& j, const ClipConfig& c);
void from_json(const nlohmann::json& j, ClipConfig& c);

// Paired video frames (T, H, W, 3) in [0,1] and a mono waveform in [-1,1]
// holding exactly T * samples_per_frame samples.
struct MediaClip {
  ClipConfig config;
  std::vector<float> video;
  std::vector<float> audio;

  static MediaClip blank(const ClipConfig& cfg);

  std::size_t pixel_index(int t, int y, int x, int c) const {
    return ((static_cast<std::size_t>(t) * config.height + y) * config.width + x) * 3 + c;
  }
  float& pixel(int t, int y, int x, int c) { return video[pixel_index(t, y, x, c)]; }
  float pixel(int t, int y, int x, int c) const { return video[pixel_index(t, y, x, c)]; }

  // Clamps video to [0,1] and audio to [-1,1].
  void clamp_ranges();
  bool values_legal() const;

  bool operator==(const MediaClip&) const = default;
};

// Binary .clip container: "AVCLIP01", five little-endian int32 (T, H, W, fps,
// sample_rate), float32 video row-major, float32 audio.
void write_clip(const std::filesystem::path& path, const MediaClip& clip);
MediaClip read_clip(const std::filesystem::path& path);

// Human-inspection exports.
void export_png_frames(const std::filesystem::path& dir, const std::string& stem,
                       const MediaClip& clip);
void export_wav(const std::filesystem::path& path, const MediaClip& clip);

}  // namespace av2av
