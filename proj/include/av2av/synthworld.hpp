#pragma once

// Procedural sprite-and-tone world with exactly computable edits.
//
// A scene is a handful of sprites moving linearly over a flat background;
// each sprite emits a sine tone whose frequency encodes its identity
// (shape base frequency plus a per-color offset). Rendering is deterministic
// and edits are applied symbolically, so every ground-truth target is exact.

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "av2av/media.hpp"
#include "av2av/tensor.hpp"

namespace av2av::synthworld {

enum class Shape : std::uint8_t { circle, square, triangle };
enum class Color : std::uint8_t { red, green, blue, yellow, cyan, magenta };

inline constexpr int kShapeCount = 3;
inline constexpr int kColorCount = 6;
inline constexpr int kIdentityCount = kShapeCount * kColorCount;
inline constexpr double kHumHz = 60.0;

std::string_view shape_name(Shape s);
std::string_view color_name(Color c);
std::optional<Shape> parse_shape(std::string_view s);
std::optional<Color> parse_color(std::string_view s);
std::array<float, 3> palette_rgb(Color c);

struct Identity {
  Shape shape = Shape::circle;
  Color color = Color::red;

  int index() const { return static_cast<int>(shape) * kColorCount + static_cast<int>(color); }
  static Identity from_index(int i) {
    return {static_cast<Shape>(i / kColorCount), static_cast<Color>(i % kColorCount)};
  }
  std::string describe() const;
  bool operator==(const Identity&) const = default;
};

// Fixed per-shape base (circle 220, square 330, triangle 440 Hz) plus
// 10 Hz per color index (0-50 Hz).
double tone_frequency(Identity id);

struct Sprite {
  Shape shape = Shape::circle;
  Color color = Color::red;
  double x0 = 0.0, y0 = 0.0;  // center at frame 0, pixels
  double vx = 0.0, vy = 0.0;  // pixels per frame
  double size = 8.0;          // side / diameter in pixels
  double tone_hz = 220.0;
  double tone_amp = 0.0;
  int tone_onset = 0;  // first audible frame

  Identity id() const { return {shape, color}; }
  double cx(int t) const { return x0 + vx * t; }
  double cy(int t) const { return y0 + vy * t; }
  double speed() const;
  bool audible_at(int t) const { return tone_amp > 0.0 && t >= tone_onset; }
  bool operator==(const Sprite&) const = default;
};

struct SceneGraph {
  std::vector<Sprite> sprites;
  std::array<double, 3> background_color{0.2, 0.2, 0.2};
  double background_hum_amp = 0.05;
  int duration_frames = 16;
  std::uint64_t rng_seed = 0;

  const Sprite* find(Identity id) const;
  bool operator==(const SceneGraph&) const = default;
};

struct SceneConfig {
  ClipConfig clip;
  int min_sprites = 1;
  int max_sprites = 4;
  std::array<int, 3> sizes{6, 8, 10};
  double max_speed = 1.2;
  double hum_amp_min = 0.0;
  double hum_amp_max = 0.1;
  double tone_amp_min = 0.1;
  double tone_amp_max = 0.2;
  double silent_sprite_prob = 0.15;
  int max_attempts = 100;
};

void to_json(nlohmann::json& j, const Sprite& s);
void from_json(const nlohmann::json& j, Sprite& s);
void to_json(nlohmann::json& j, const SceneGraph& s);
void from_json(const nlohmann::json& j, SceneGraph& s);
void to_json(nlohmann::json& j, const SceneConfig& s);
void from_json(const nlohmann::json& j, SceneConfig& s);

// Checks count, identity uniqueness, distinct colors and in-bounds motion.
// Returns an empty string when valid, otherwise the first violation.
std::string validate_scene(const SceneGraph& scene, const ClipConfig& clip);
bool sprite_in_bounds(const Sprite& s, const ClipConfig& clip, int frames);

SceneGraph sample_scene(std::uint64_t seed, const SceneConfig& config);

MediaClip render(const SceneGraph& scene, const ClipConfig& clip);
bool sprite_covers(const Sprite& s, int t, double px, double py);
// The tone track contributed by one sprite (before clipping).
std::vector<double> tone_track(const Sprite& s, const ClipConfig& clip);

// Pixel-space box (inclusive-exclusive) that contains every pixel a sprite may cover at frame t.
struct PixelBox {
  int x0, y0, x1, y1;
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};
PixelBox sprite_box(const Sprite& s, int t, const ClipConfig& clip);

// ---- edits ----------------------------------------------------------------

enum class EditKind : std::uint8_t { remove, insert, replace, retime_tone, silence };
inline constexpr int kEditKindCount = 5;
std::string_view edit_kind_name(EditKind k);
EditKind parse_edit_kind(std::string_view s);

struct EditOp {
  EditKind kind = EditKind::remove;
  Identity target;                // ignored for insert
  std::optional<Sprite> payload;  // insert/replace: new sprite; retime_tone: carries the new onset

  bool operator==(const EditOp&) const = default;
};

void to_json(nlohmann::json& j, const EditOp& e);
void from_json(const nlohmann::json& j, EditOp& e);

// Throws NotApplicableError naming the missing or colliding identity.
void check_applicable(const SceneGraph& scene, const EditOp& edit);
SceneGraph apply_edit(const SceneGraph& scene, const EditOp& edit);

// ---- filters & verification ------------------------------------------------

// Keep iff mean sprite speed >= threshold; empty scenes are rejected.
bool motion_filter(const SceneGraph& scene, double threshold);
double rms_dbfs(const std::vector<float>& audio);
// Keep iff 20 log10(RMS) >= threshold_dbfs. Throws on an empty waveform.
bool silence_filter(const std::vector<float>& audio, double threshold_dbfs = -45.0);

// Per-frame least-squares amplitude of every identity tone (and the hum).
// Returns (frames x (kIdentityCount + 1)), last column = hum.
MatD frame_tone_amplitudes(const std::vector<float>& audio, const ClipConfig& clip);
// Whole-clip least-squares amplitudes, same column layout.
RowVec<double> clip_tone_amplitudes(const std::vector<float>& audio, const ClipConfig& clip);
inline constexpr double kAudibleAmplitude = 0.05;

struct VerificationReport {
  bool instruction_fidelity = false;
  bool content_preservation = false;
  bool perceptual_quality = false;
  bool av_sync = false;
  bool safety = false;
  bool passed = false;
};

// Audible sprites (per frame) must match detected tones; see frame_tone_amplitudes.
bool av_synchronized(const SceneGraph& scene, const MediaClip& clip);
VerificationReport verify_pair(const SceneGraph& source, const SceneGraph& target, const EditOp& edit,
                               const MediaClip& rendered_target);

}  // namespace av2av::synthworld
