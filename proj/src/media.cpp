#include "av2av/media.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "av2av/error.hpp"

namespace av2av {

static_assert(std::endian::native == std::endian::little, "clip files assume a little-endian host");

namespace {

constexpr std::array<char, 8> kClipMagic = {'A', 'V', 'C', 'L', 'I', 'P', '0', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw IoError("truncated clip file " + path.string());
  return v;
}

}  // namespace

void ClipConfig::validate() const {
  if (frames <= 0 || height <= 0 || width <= 0 || fps <= 0 || sample_rate <= 0)
    throw ConfigError("clip_config: all dimensions must be positive");
  if (sample_rate % fps != 0)
    throw ConfigError("clip_config: sample_rate must be a multiple of fps");
}

MediaClip MediaClip::blank(const ClipConfig& cfg) {
  cfg.validate();
  MediaClip c;
  c.config = cfg;
  c.video.assign(cfg.video_size(), 0.0F);
  c.audio.assign(cfg.audio_size(), 0.0F);
  return c;
}

void MediaClip::clamp_ranges() {
  for (float& v : video) v = std::clamp(v, 0.0F, 1.0F);
  for (float& a : audio) a = std::clamp(a, -1.0F, 1.0F);
}

bool MediaClip::values_legal() const {
  if (video.size() != config.video_size() || audio.size() != config.audio_size()) return false;
  for (float v : video)
    if (!std::isfinite(v) || v < 0.0F || v > 1.0F) return false;
  for (float a : audio)
    if (!std::isfinite(a) || a < -1.0F || a > 1.0F) return false;
  return true;
}

void write_clip(const std::filesystem::path& path, const MediaClip& clip) {
  if (clip.video.size() != clip.config.video_size() || clip.audio.size() != clip.config.audio_size())
    throw ShapeError("write_clip: buffers do not match clip_config");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kClipMagic.data(), kClipMagic.size());
  const auto& c = clip.config;
  for (std::int32_t v : {c.frames, c.height, c.width, c.fps, c.sample_rate}) put(out, v);
  out.write(reinterpret_cast<const char*>(clip.video.data()),
            static_cast<std::streamsize>(clip.video.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(clip.audio.data()),
            static_cast<std::streamsize>(clip.audio.size() * sizeof(float)));
  if (!out) throw IoError("failed writing " + path.string());
}

MediaClip read_clip(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open clip " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kClipMagic)
    throw IoError("bad clip magic in " + path.string());
  MediaClip clip;
  auto& c = clip.config;
  c.frames = get<std::int32_t>(in, path);
  c.height = get<std::int32_t>(in, path);
  c.width = get<std::int32_t>(in, path);
  c.fps = get<std::int32_t>(in, path);
  c.sample_rate = get<std::int32_t>(in, path);
  c.validate();
  clip.video.resize(c.video_size());
  clip.audio.resize(c.audio_size());
  if (!in.read(reinterpret_cast<char*>(clip.video.data()),
               static_cast<std::streamsize>(clip.video.size() * sizeof(float))) ||
      !in.read(reinterpret_cast<char*>(clip.audio.data()),
               static_cast<std::streamsize>(clip.audio.size() * sizeof(float))))
    throw IoError("truncated clip payload in " + path.string());
  return clip;
}

void export_png_frames(const std::filesystem::path& dir, const std::string& stem,
                       const MediaClip& clip) {
  std::filesystem::create_directories(dir);
  const auto& c = clip.config;
  std::vector<png_byte> row(static_cast<std::size_t>(c.width) * 3);
  for (int t = 0; t < c.frames; ++t) {
    char name[64];
    std::snprintf(name, sizeof(name), "_%03d.png", t);
    const auto path = dir / (stem + name);
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (fp == nullptr) throw IoError("cannot open " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      std::fclose(fp);
      throw IoError("png encoding failed for " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(c.width), static_cast<png_uint_32>(c.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < c.height; ++y) {
      for (int x = 0; x < c.width; ++x)
        for (int ch = 0; ch < 3; ++ch)
          row[static_cast<std::size_t>(x) * 3 + ch] = static_cast<png_byte>(
              std::lround(std::clamp(clip.pixel(t, y, x, ch), 0.0F, 1.0F) * 255.0F));
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
  }
}

void export_wav(const std::filesystem::path& path, const MediaClip& clip) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string());
  const auto n = static_cast<std::uint32_t>(clip.audio.size());
  const std::uint32_t rate = static_cast<std::uint32_t>(clip.config.sample_rate);
  const std::uint32_t data_bytes = n * 2;
  out.write("RIFF", 4);
  put<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put<std::uint32_t>(out, 16);
  put<std::uint16_t>(out, 1);  // PCM
  put<std::uint16_t>(out, 1);  // mono
  put<std::uint32_t>(out, rate);
  put<std::uint32_t>(out, rate * 2);
  put<std::uint16_t>(out, 2);
  put<std::uint16_t>(out, 16);
  out.write("data", 4);
  put<std::uint32_t>(out, data_bytes);
  for (float s : clip.audio)
    put<std::int16_t>(out, static_cast<std::int16_t>(std::lround(std::clamp(s, -1.0F, 1.0F) * 32767.0F)));
  if (!out) throw IoError("failed writing " + path.string());
}

void to_json(nlohmann::json& j, const ClipConfig& c) {
  j = nlohmann::json{{"T", c.frames}, {"H", c.height}, {"W", c.width}, {"fps", c.fps},
                     {"sample_rate", c.sample_rate}};
}

void from_json(const nlohmann::json& j, ClipConfig& c) {
  c.frames = j.at("T").get<int>();
  c.height = j.at("H").get<int>();
  c.width = j.at("W").get<int>();
  c.fps = j.at("fps").get<int>();
  c.sample_rate = j.at("sample_rate").get<int>();
  c.validate();
}

}  // namespace av2av
