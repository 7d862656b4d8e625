#include "av2av/synthworld.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "av2av/error.hpp"

namespace av2av::synthworld {

namespace {

constexpr std::array<std::string_view, kShapeCount> kShapeNames = {"circle", "square", "triangle"};
constexpr std::array<std::string_view, kColorCount> kColorNames = {"red",    "green", "blue",
                                                                   "yellow", "cyan",  "magenta"};
constexpr std::array<std::string_view, kEditKindCount> kEditNames = {"remove", "insert", "replace",
                                                                     "retime_tone", "silence"};
constexpr std::array<double, kShapeCount> kShapeBaseHz = {220.0, 330.0, 440.0};

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

std::string_view shape_name(Shape s) { return kShapeNames[static_cast<std::size_t>(s)]; }
std::string_view color_name(Color c) { return kColorNames[static_cast<std::size_t>(c)]; }

std::optional<Shape> parse_shape(std::string_view s) {
  for (std::size_t i = 0; i < kShapeNames.size(); ++i)
    if (kShapeNames[i] == s) return static_cast<Shape>(i);
  return std::nullopt;
}

std::optional<Color> parse_color(std::string_view s) {
  for (std::size_t i = 0; i < kColorNames.size(); ++i)
    if (kColorNames[i] == s) return static_cast<Color>(i);
  return std::nullopt;
}

std::array<float, 3> palette_rgb(Color c) {
  switch (c) {
    case Color::red: return {0.90F, 0.15F, 0.15F};
    case Color::green: return {0.15F, 0.85F, 0.20F};
    case Color::blue: return {0.20F, 0.30F, 0.95F};
    case Color::yellow: return {0.95F, 0.90F, 0.15F};
    case Color::cyan: return {0.15F, 0.90F, 0.90F};
    case Color::magenta: return {0.90F, 0.20F, 0.90F};
  }
  return {0.0F, 0.0F, 0.0F};
}

std::string Identity::describe() const {
  return std::string(color_name(color)) + " " + std::string(shape_name(shape));
}

double tone_frequency(Identity id) {
  return kShapeBaseHz[static_cast<std::size_t>(id.shape)] + 10.0 * static_cast<int>(id.color);
}

double Sprite::speed() const { return std::hypot(vx, vy); }

const Sprite* SceneGraph::find(Identity id) const {
  for (const auto& s : sprites)
    if (s.id() == id) return &s;
  return nullptr;
}

std::string_view edit_kind_name(EditKind k) { return kEditNames[static_cast<std::size_t>(k)]; }

EditKind parse_edit_kind(std::string_view s) {
  for (std::size_t i = 0; i < kEditNames.size(); ++i)
    if (kEditNames[i] == s) return static_cast<EditKind>(i);
  throw ConfigError("unknown edit kind '" + std::string(s) + "'");
}

// ---- JSON -------------------------------------------------------------------

void to_json(nlohmann::json& j, const Sprite& s) {
  j = nlohmann::json{{"shape", shape_name(s.shape)},
                     {"color", color_name(s.color)},
                     {"position0", {s.x0, s.y0}},
                     {"velocity", {s.vx, s.vy}},
                     {"size", s.size},
                     {"tone_hz", s.tone_hz},
                     {"tone_amp", s.tone_amp},
                     {"tone_onset", s.tone_onset}};
}

void from_json(const nlohmann::json& j, Sprite& s) {
  const auto shape = parse_shape(j.at("shape").get<std::string>());
  const auto color = parse_color(j.at("color").get<std::string>());
  if (!shape || !color) throw ConfigError("sprite has unknown shape or color");
  s.shape = *shape;
  s.color = *color;
  s.x0 = j.at("position0").at(0).get<double>();
  s.y0 = j.at("position0").at(1).get<double>();
  s.vx = j.at("velocity").at(0).get<double>();
  s.vy = j.at("velocity").at(1).get<double>();
  s.size = j.at("size").get<double>();
  s.tone_hz = j.at("tone_hz").get<double>();
  s.tone_amp = j.at("tone_amp").get<double>();
  s.tone_onset = j.at("tone_onset").get<int>();
}

void to_json(nlohmann::json& j, const SceneGraph& s) {
  j = nlohmann::json{{"sprites", s.sprites},
                     {"background_color", s.background_color},
                     {"background_hum_amp", s.background_hum_amp},
                     {"duration_frames", s.duration_frames},
                     {"rng_seed", s.rng_seed}};
}

void from_json(const nlohmann::json& j, SceneGraph& s) {
  s.sprites = j.at("sprites").get<std::vector<Sprite>>();
  s.background_color = j.at("background_color").get<std::array<double, 3>>();
  s.background_hum_amp = j.at("background_hum_amp").get<double>();
  s.duration_frames = j.at("duration_frames").get<int>();
  s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const SceneConfig& s) {
  j = nlohmann::json{{"min_sprites", s.min_sprites},
                     {"max_sprites", s.max_sprites},
                     {"sizes", s.sizes},
                     {"max_speed", s.max_speed},
                     {"hum_amp_range", {s.hum_amp_min, s.hum_amp_max}},
                     {"tone_amp_range", {s.tone_amp_min, s.tone_amp_max}},
                     {"silent_sprite_prob", s.silent_sprite_prob},
                     {"max_attempts", s.max_attempts}};
}

void from_json(const nlohmann::json& j, SceneConfig& s) {
  s.min_sprites = j.at("min_sprites").get<int>();
  s.max_sprites = j.at("max_sprites").get<int>();
  s.sizes = j.at("sizes").get<std::array<int, 3>>();
  s.max_speed = j.at("max_speed").get<double>();
  s.hum_amp_min = j.at("hum_amp_range").at(0).get<double>();
  s.hum_amp_max = j.at("hum_amp_range").at(1).get<double>();
  s.tone_amp_min = j.at("tone_amp_range").at(0).get<double>();
  s.tone_amp_max = j.at("tone_amp_range").at(1).get<double>();
  s.silent_sprite_prob = j.at("silent_sprite_prob").get<double>();
  s.max_attempts = j.at("max_attempts").get<int>();
}

void to_json(nlohmann::json& j, const EditOp& e) {
  j = nlohmann::json{{"kind", edit_kind_name(e.kind)},
                     {"target", {{"shape", shape_name(e.target.shape)}, {"color", color_name(e.target.color)}}}};
  if (e.payload) j["payload"] = *e.payload;
}

void from_json(const nlohmann::json& j, EditOp& e) {
  e.kind = parse_edit_kind(j.at("kind").get<std::string>());
  const auto shape = parse_shape(j.at("target").at("shape").get<std::string>());
  const auto color = parse_color(j.at("target").at("color").get<std::string>());
  if (!shape || !color) throw ConfigError("edit target has unknown shape or color");
  e.target = {*shape, *color};
  if (j.contains("payload")) e.payload = j.at("payload").get<Sprite>();
  else e.payload.reset();
}

// ---- scenes -----------------------------------------------------------------

bool sprite_in_bounds(const Sprite& s, const ClipConfig& clip, int frames) {
  const double half = s.size / 2.0;
  for (int t : {0, frames - 1}) {
    const double x = s.cx(t);
    const double y = s.cy(t);
    if (x - half < 0.0 || x + half > clip.width || y - half < 0.0 || y + half > clip.height)
      return false;
  }
  return true;
}

std::string validate_scene(const SceneGraph& scene, const ClipConfig& clip) {
  if (scene.sprites.size() > 4) return "more than 4 sprites";
  for (std::size_t i = 0; i < scene.sprites.size(); ++i) {
    const Sprite& a = scene.sprites[i];
    if (!sprite_in_bounds(a, clip, scene.duration_frames))
      return a.id().describe() + " leaves the frame";
    if (std::abs(a.tone_hz - tone_frequency(a.id())) > 1e-9)
      return a.id().describe() + " has a tone that does not match its identity";
    for (std::size_t k = i + 1; k < scene.sprites.size(); ++k) {
      if (scene.sprites[k].id() == a.id()) return "duplicate identity " + a.id().describe();
      if (scene.sprites[k].color == a.color) return "two sprites share color " + std::string(color_name(a.color));
    }
  }
  return {};
}

SceneGraph sample_scene(std::uint64_t seed, const SceneConfig& cfg) {
  if (cfg.max_sprites > 4 || cfg.min_sprites < 0 || cfg.min_sprites > cfg.max_sprites)
    throw ConfigError("scene config: need 0 <= min_sprites <= max_sprites <= 4");
  cfg.clip.validate();
  Rng rng(seed);
  SceneGraph scene;
  scene.duration_frames = cfg.clip.frames;
  scene.rng_seed = seed;
  const double gray = uniform(rng, 0.1, 0.4);
  for (double& c : scene.background_color) c = std::clamp(gray + uniform(rng, -0.05, 0.05), 0.0, 1.0);
  scene.background_hum_amp = uniform(rng, cfg.hum_amp_min, cfg.hum_amp_max);
  const int n = std::uniform_int_distribution<int>(cfg.min_sprites, cfg.max_sprites)(rng);
  std::array<int, kColorCount> colors{0, 1, 2, 3, 4, 5};
  std::shuffle(colors.begin(), colors.end(), rng);
  const double span = cfg.clip.frames - 1;
  for (int i = 0; i < n; ++i) {
    Sprite s;
    s.shape = static_cast<Shape>(std::uniform_int_distribution<int>(0, kShapeCount - 1)(rng));
    s.color = static_cast<Color>(colors[static_cast<std::size_t>(i)]);
    s.size = cfg.sizes[std::uniform_int_distribution<std::size_t>(0, cfg.sizes.size() - 1)(rng)];
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const double speed = uniform(rng, 0.0, cfg.max_speed);
      const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double vx = speed * std::cos(angle);
      const double vy = speed * std::sin(angle);
      const double half = s.size / 2.0;
      const double xlo = half + std::max(0.0, -vx * span);
      const double xhi = cfg.clip.width - half - std::max(0.0, vx * span);
      const double ylo = half + std::max(0.0, -vy * span);
      const double yhi = cfg.clip.height - half - std::max(0.0, vy * span);
      if (xlo > xhi || ylo > yhi) continue;
      s.vx = vx;
      s.vy = vy;
      s.x0 = uniform(rng, xlo, xhi);
      s.y0 = uniform(rng, ylo, yhi);
      placed = true;
    }
    if (!placed)
      throw InfeasibleError("sample_scene: no feasible placement for sprite " + std::to_string(i) +
                            " after " + std::to_string(cfg.max_attempts) + " attempts");
    const bool silent = uniform(rng, 0.0, 1.0) < cfg.silent_sprite_prob;
    s.tone_amp = silent ? 0.0 : uniform(rng, cfg.tone_amp_min, cfg.tone_amp_max);
    s.tone_hz = tone_frequency(s.id());
    s.tone_onset = 0;
    scene.sprites.push_back(s);
  }
  return scene;
}

// ---- rendering --------------------------------------------------------------

bool sprite_covers(const Sprite& s, int t, double px, double py) {
  const double half = s.size / 2.0;
  const double dx = px - s.cx(t);
  const double dy = py - s.cy(t);
  switch (s.shape) {
    case Shape::square: return std::abs(dx) <= half && std::abs(dy) <= half;
    case Shape::circle: return dx * dx + dy * dy <= half * half;
    case Shape::triangle:
      // apex up, base at the bottom edge
      return dy >= -half && dy <= half && std::abs(dx) <= (dy + half) / 2.0;
  }
  return false;
}

PixelBox sprite_box(const Sprite& s, int t, const ClipConfig& clip) {
  const double half = s.size / 2.0;
  PixelBox b;
  b.x0 = std::max(0, static_cast<int>(std::floor(s.cx(t) - half)) - 1);
  b.y0 = std::max(0, static_cast<int>(std::floor(s.cy(t) - half)) - 1);
  b.x1 = std::min(clip.width, static_cast<int>(std::ceil(s.cx(t) + half)) + 1);
  b.y1 = std::min(clip.height, static_cast<int>(std::ceil(s.cy(t) + half)) + 1);
  return b;
}

std::vector<double> tone_track(const Sprite& s, const ClipConfig& clip) {
  const int spf = clip.samples_per_frame();
  std::vector<double> track(clip.audio_size(), 0.0);
  if (s.tone_amp <= 0.0) return track;
  for (std::size_t n = static_cast<std::size_t>(std::max(0, s.tone_onset)) * spf; n < track.size(); ++n)
    track[n] = s.tone_amp * std::sin(2.0 * std::numbers::pi * s.tone_hz * static_cast<double>(n) / clip.sample_rate);
  return track;
}

MediaClip render(const SceneGraph& scene, const ClipConfig& clip) {
  if (scene.duration_frames != clip.frames) throw ShapeError("render: scene duration differs from clip frames");
  MediaClip out = MediaClip::blank(clip);
  for (int t = 0; t < clip.frames; ++t)
    for (int y = 0; y < clip.height; ++y)
      for (int x = 0; x < clip.width; ++x)
        for (int c = 0; c < 3; ++c) out.pixel(t, y, x, c) = static_cast<float>(scene.background_color[static_cast<std::size_t>(c)]);
  for (const Sprite& s : scene.sprites) {
    const auto rgb = palette_rgb(s.color);
    for (int t = 0; t < clip.frames; ++t) {
      const PixelBox b = sprite_box(s, t, clip);
      for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x)
          if (sprite_covers(s, t, x + 0.5, y + 0.5))
            for (int c = 0; c < 3; ++c) out.pixel(t, y, x, c) = rgb[static_cast<std::size_t>(c)];
    }
  }
  std::vector<double> audio(clip.audio_size(), 0.0);
  for (std::size_t n = 0; n < audio.size(); ++n)
    audio[n] = scene.background_hum_amp *
               std::sin(2.0 * std::numbers::pi * kHumHz * static_cast<double>(n) / clip.sample_rate);
  for (const Sprite& s : scene.sprites) {
    const auto track = tone_track(s, clip);
    for (std::size_t n = 0; n < audio.size(); ++n) audio[n] += track[n];
  }
  for (std::size_t n = 0; n < audio.size(); ++n)
    out.audio[n] = static_cast<float>(std::clamp(audio[n], -1.0, 1.0));
  return out;
}

// ---- edits ------------------------------------------------------------------

namespace {

std::size_t index_of(const SceneGraph& scene, Identity id) {
  for (std::size_t i = 0; i < scene.sprites.size(); ++i)
    if (scene.sprites[i].id() == id) return i;
  throw NotApplicableError("scene has no " + id.describe());
}

}  // namespace

void check_applicable(const SceneGraph& scene, const EditOp& edit) {
  if (edit.kind == EditKind::insert) {
    if (!edit.payload) throw NotApplicableError("insert requires a payload sprite");
    if (scene.find(edit.payload->id()) != nullptr)
      throw NotApplicableError("scene already has a " + edit.payload->id().describe());
    for (const auto& s : scene.sprites)
      if (s.color == edit.payload->color)
        throw NotApplicableError("scene already has a " + std::string(color_name(s.color)) + " sprite");
    if (scene.sprites.size() >= 4) throw NotApplicableError("scene already holds 4 sprites");
    return;
  }
  const std::size_t at = index_of(scene, edit.target);
  const Sprite& target = scene.sprites[at];
  switch (edit.kind) {
    case EditKind::replace: {
      if (!edit.payload) throw NotApplicableError("replace requires a payload sprite");
      const Identity nid = edit.payload->id();
      if (nid == edit.target) throw NotApplicableError("replace must change the identity");
      for (std::size_t i = 0; i < scene.sprites.size(); ++i)
        if (i != at && (scene.sprites[i].id() == nid || scene.sprites[i].color == nid.color))
          throw NotApplicableError("replacement collides with " + scene.sprites[i].id().describe());
      break;
    }
    case EditKind::silence:
      if (target.tone_amp <= 0.0) throw NotApplicableError(edit.target.describe() + " is already silent");
      break;
    case EditKind::retime_tone:
      if (!edit.payload) throw NotApplicableError("retime_tone requires the new onset");
      if (target.tone_amp <= 0.0) throw NotApplicableError(edit.target.describe() + " is silent");
      if (edit.payload->tone_onset == target.tone_onset)
        throw NotApplicableError("retime_tone must change the onset");
      if (edit.payload->tone_onset < 0 || edit.payload->tone_onset >= scene.duration_frames)
        throw NotApplicableError("retime_tone onset outside the clip");
      break;
    default: break;
  }
}

SceneGraph apply_edit(const SceneGraph& scene, const EditOp& edit) {
  check_applicable(scene, edit);
  SceneGraph out = scene;
  switch (edit.kind) {
    case EditKind::remove: out.sprites.erase(out.sprites.begin() + static_cast<long>(index_of(scene, edit.target))); break;
    case EditKind::insert: out.sprites.push_back(*edit.payload); break;
    case EditKind::replace: out.sprites[index_of(scene, edit.target)] = *edit.payload; break;
    case EditKind::silence: out.sprites[index_of(scene, edit.target)].tone_amp = 0.0; break;
    case EditKind::retime_tone:
      out.sprites[index_of(scene, edit.target)].tone_onset = edit.payload->tone_onset;
      break;
  }
  return out;
}

// ---- filters ----------------------------------------------------------------

bool motion_filter(const SceneGraph& scene, double threshold) {
  if (scene.sprites.empty()) return false;
  double sum = 0.0;
  for (const auto& s : scene.sprites) sum += s.speed();
  return sum / static_cast<double>(scene.sprites.size()) >= threshold;
}

double rms_dbfs(const std::vector<float>& audio) {
  if (audio.empty()) throw ShapeError("rms_dbfs: empty waveform");
  double ss = 0.0;
  for (float a : audio) ss += static_cast<double>(a) * a;
  const double rms = std::sqrt(ss / static_cast<double>(audio.size()));
  return rms > 0.0 ? 20.0 * std::log10(rms) : -std::numeric_limits<double>::infinity();
}

bool silence_filter(const std::vector<float>& audio, double threshold_dbfs) {
  return rms_dbfs(audio) >= threshold_dbfs;
}

namespace {

MatD tone_design(const ClipConfig& clip, std::size_t n0, std::size_t len) {
  MatD a(static_cast<Eigen::Index>(len), kIdentityCount + 1);
  for (std::size_t k = 0; k < len; ++k) {
    const double tsec = static_cast<double>(n0 + k) / clip.sample_rate;
    for (int i = 0; i < kIdentityCount; ++i)
      a(static_cast<Eigen::Index>(k), i) =
          std::sin(2.0 * std::numbers::pi * tone_frequency(Identity::from_index(i)) * tsec);
    a(static_cast<Eigen::Index>(k), kIdentityCount) = std::sin(2.0 * std::numbers::pi * kHumHz * tsec);
  }
  return a;
}

}  // namespace

MatD frame_tone_amplitudes(const std::vector<float>& audio, const ClipConfig& clip) {
  if (audio.size() != clip.audio_size()) throw ShapeError("frame_tone_amplitudes: length mismatch");
  const auto spf = static_cast<std::size_t>(clip.samples_per_frame());
  MatD amps(clip.frames, kIdentityCount + 1);
  for (int t = 0; t < clip.frames; ++t) {
    const std::size_t n0 = static_cast<std::size_t>(t) * spf;
    const MatD a = tone_design(clip, n0, spf);
    Eigen::VectorXd b(static_cast<Eigen::Index>(spf));
    for (std::size_t k = 0; k < spf; ++k) b(static_cast<Eigen::Index>(k)) = audio[n0 + k];
    amps.row(t) = a.colPivHouseholderQr().solve(b).transpose();
  }
  return amps;
}

RowVec<double> clip_tone_amplitudes(const std::vector<float>& audio, const ClipConfig& clip) {
  if (audio.size() != clip.audio_size()) throw ShapeError("clip_tone_amplitudes: length mismatch");
  const MatD a = tone_design(clip, 0, audio.size());
  Eigen::VectorXd b(static_cast<Eigen::Index>(audio.size()));
  for (std::size_t k = 0; k < audio.size(); ++k) b(static_cast<Eigen::Index>(k)) = audio[k];
  return a.colPivHouseholderQr().solve(b).transpose();
}

bool av_synchronized(const SceneGraph& scene, const MediaClip& clip) {
  const MatD amps = frame_tone_amplitudes(clip.audio, clip.config);
  for (int t = 0; t < clip.config.frames; ++t) {
    std::array<bool, kIdentityCount> expected{};
    for (const auto& s : scene.sprites)
      if (s.audible_at(t)) expected[static_cast<std::size_t>(s.id().index())] = true;
    for (int i = 0; i < kIdentityCount; ++i)
      if (expected[static_cast<std::size_t>(i)] != (std::abs(amps(t, i)) > kAudibleAmplitude)) return false;
  }
  return true;
}

namespace {

std::vector<Sprite> without(const std::vector<Sprite>& sprites, std::initializer_list<std::optional<Identity>> drop) {
  std::vector<Sprite> out;
  for (const auto& s : sprites) {
    bool skip = false;
    for (const auto& d : drop)
      if (d && s.id() == *d) skip = true;
    if (!skip) out.push_back(s);
  }
  return out;
}

}  // namespace

VerificationReport verify_pair(const SceneGraph& source, const SceneGraph& target, const EditOp& edit,
                               const MediaClip& rendered_target) {
  VerificationReport r;
  try {
    r.instruction_fidelity = apply_edit(source, edit) == target;
  } catch (const NotApplicableError&) {
    r.instruction_fidelity = false;
  }
  const std::optional<Identity> tid =
      edit.kind == EditKind::insert ? std::nullopt : std::optional<Identity>(edit.target);
  const std::optional<Identity> pid =
      edit.payload ? std::optional<Identity>(edit.payload->id()) : std::nullopt;
  r.content_preservation = source.background_color == target.background_color &&
                           source.background_hum_amp == target.background_hum_amp &&
                           source.duration_frames == target.duration_frames &&
                           without(source.sprites, {tid, pid}) == without(target.sprites, {tid, pid});
  r.perceptual_quality = rendered_target.values_legal();
  r.av_sync = r.perceptual_quality && av_synchronized(target, rendered_target);
  // The synthetic world carries no unsafe content.
  r.safety = true;
  r.passed = r.instruction_fidelity && r.content_preservation && r.perceptual_quality && r.av_sync && r.safety;
  return r;
}

}  // namespace av2av::synthworld
