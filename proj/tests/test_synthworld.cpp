#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "av2av/dataset.hpp"
#include "av2av/error.hpp"
#include "av2av/instruction.hpp"
#include "av2av/synthworld.hpp"

using namespace av2av;
using namespace av2av::synthworld;

namespace {

Sprite make_sprite(Shape s, Color c, double x, double y, double vx = 0.0, double vy = 0.0, double amp = 0.15) {
  Sprite sp;
  sp.shape = s;
  sp.color = c;
  sp.x0 = x;
  sp.y0 = y;
  sp.vx = vx;
  sp.vy = vy;
  sp.size = 8.0;
  sp.tone_hz = tone_frequency(sp.id());
  sp.tone_amp = amp;
  return sp;
}

SceneGraph two_sprite_scene() {
  SceneGraph g;
  g.sprites.push_back(make_sprite(Shape::circle, Color::red, 8, 8, 0.5, 0.5));
  g.sprites.push_back(make_sprite(Shape::square, Color::blue, 22, 20, -0.5, 0.25, 0.12));
  g.background_hum_amp = 0.04;
  return g;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path tmp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("av2av_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(SynthWorld, ToneMapping) {
  EXPECT_DOUBLE_EQ(tone_frequency({Shape::circle, Color::red}), 220.0);
  EXPECT_DOUBLE_EQ(tone_frequency({Shape::square, Color::red}), 330.0);
  EXPECT_DOUBLE_EQ(tone_frequency({Shape::triangle, Color::magenta}), 490.0);
}

TEST(SynthWorld, SampleSceneDeterministicAndInBounds) {
  SceneConfig cfg;
  EXPECT_EQ(sample_scene(7, cfg), sample_scene(7, cfg));
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SceneGraph g = sample_scene(seed, cfg);
    EXPECT_EQ(validate_scene(g, cfg.clip), "");
    for (const auto& s : g.sprites) {
      const int last = cfg.clip.frames - 1;
      const double cx = s.x0 + last * s.vx;
      const double cy = s.y0 + last * s.vy;
      EXPECT_GE(cx - s.size / 2, 0.0);
      EXPECT_LE(cx + s.size / 2, cfg.clip.width);
      EXPECT_GE(cy - s.size / 2, 0.0);
      EXPECT_LE(cy + s.size / 2, cfg.clip.height);
    }
  }
}

TEST(SynthWorld, ZeroSpriteScene) {
  SceneConfig cfg;
  cfg.min_sprites = 0;
  cfg.max_sprites = 0;
  const SceneGraph g = sample_scene(3, cfg);
  EXPECT_TRUE(g.sprites.empty());
  const MediaClip c = render(g, cfg.clip);
  for (int i = 0; i < cfg.clip.height * cfg.clip.width * cfg.clip.frames; ++i)
    for (int ch = 0; ch < 3; ++ch) EXPECT_FLOAT_EQ(c.video[i * 3 + ch], static_cast<float>(g.background_color[ch]));
}

TEST(SynthWorld, RenderDeterministic) {
  const ClipConfig clip;
  const SceneGraph g = two_sprite_scene();
  EXPECT_EQ(render(g, clip), render(g, clip));
}

TEST(SynthWorld, AudioAdditivity) {
  const ClipConfig clip;
  const SceneGraph g = two_sprite_scene();
  SceneGraph without = g;
  without.sprites.erase(without.sprites.begin());
  const MediaClip a = render(g, clip);
  const MediaClip b = render(without, clip);
  const auto track = tone_track(g.sprites[0], clip);
  for (std::size_t i = 0; i < a.audio.size(); ++i) EXPECT_NEAR(a.audio[i] - b.audio[i], track[i], 1e-6);
}

TEST(SynthWorld, SilentSpriteAddsNothing) {
  const ClipConfig clip;
  SceneGraph g;
  g.sprites.push_back(make_sprite(Shape::circle, Color::red, 10, 10, 0, 0, 0.0));
  SceneGraph empty = g;
  empty.sprites.clear();
  EXPECT_EQ(render(g, clip).audio, render(empty, clip).audio);
}

TEST(SynthWorld, EditsPreserveNonTargets) {
  const SceneGraph g = two_sprite_scene();
  EditOp rm{EditKind::remove, {Shape::circle, Color::red}, std::nullopt};
  const SceneGraph r = apply_edit(g, rm);
  ASSERT_EQ(r.sprites.size(), 1U);
  EXPECT_EQ(r.sprites[0], g.sprites[1]);
  EXPECT_EQ(r.background_color, g.background_color);

  EditOp mute{EditKind::silence, {Shape::square, Color::blue}, std::nullopt};
  SceneGraph expect = g;
  expect.sprites[1].tone_amp = 0.0;
  EXPECT_EQ(apply_edit(g, mute), expect);
}

TEST(SynthWorld, ReplaceInverse) {
  const SceneGraph g = two_sprite_scene();
  Sprite payload = g.sprites[0];
  payload.shape = Shape::triangle;
  payload.color = Color::green;
  payload.tone_hz = tone_frequency(payload.id());
  const SceneGraph once = apply_edit(g, {EditKind::replace, {Shape::circle, Color::red}, payload});
  const SceneGraph back = apply_edit(once, {EditKind::replace, {Shape::triangle, Color::green}, g.sprites[0]});
  EXPECT_EQ(back, g);
}

TEST(SynthWorld, InapplicableEditNamesIdentity) {
  const SceneGraph g = two_sprite_scene();
  try {
    apply_edit(g, {EditKind::remove, {Shape::triangle, Color::cyan}, std::nullopt});
    FAIL();
  } catch (const NotApplicableError& e) {
    EXPECT_NE(std::string(e.what()).find("cyan triangle"), std::string::npos) << e.what();
  }
}

TEST(SynthWorld, MotionFilter) {
  SceneGraph g;
  EXPECT_FALSE(motion_filter(g, 0.0));
  g.sprites.push_back(make_sprite(Shape::circle, Color::red, 10, 10, 0, 0));
  EXPECT_FALSE(motion_filter(g, 0.1));
  g.sprites[0].vx = 2.0;
  EXPECT_TRUE(motion_filter(g, 1.0));
  g.sprites[0].vx = 0.0;
  g.sprites.push_back(make_sprite(Shape::square, Color::blue, 20, 20, 0, 3.0));
  EXPECT_FALSE(motion_filter(g, 2.0));
  EXPECT_TRUE(motion_filter(g, 1.5));
}

TEST(SynthWorld, SilenceFilterAnalytic) {
  EXPECT_THROW(silence_filter({}), Error);
  EXPECT_FALSE(silence_filter(std::vector<float>(1600, 0.0F)));
  std::vector<float> square(1600);
  for (std::size_t i = 0; i < square.size(); ++i) square[i] = (i / 8) % 2 ? 1.0F : -1.0F;
  EXPECT_NEAR(rms_dbfs(square), 0.0, 1e-9);
  std::vector<float> sine(3200);
  const double pi = std::acos(-1.0);
  for (std::size_t i = 0; i < sine.size(); ++i) sine[i] = static_cast<float>(0.01 * std::sin(2 * pi * 100.0 * i / 1600.0));
  const double expected = 20.0 * std::log10(0.01 / std::sqrt(2.0));
  EXPECT_NEAR(rms_dbfs(sine), expected, 1e-3);
  EXPECT_NEAR(rms_dbfs(sine), -43.0, 0.1);
  EXPECT_TRUE(silence_filter(sine, -45.0));
}

TEST(SynthWorld, FilterMonotonicity) {
  SceneConfig cfg;
  int prev_motion = 1 << 30;
  int prev_silence = 1 << 30;
  for (double th : {0.0, 0.3, 0.6, 0.9, 1.2}) {
    int kept_m = 0;
    int kept_s = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const SceneGraph g = sample_scene(seed, cfg);
      kept_m += motion_filter(g, th);
      kept_s += silence_filter(render(g, cfg.clip).audio, -60.0 + 10.0 * th);
    }
    EXPECT_LE(kept_m, prev_motion);
    EXPECT_LE(kept_s, prev_silence);
    prev_motion = kept_m;
    prev_silence = kept_s;
  }
}

TEST(SynthWorld, VerifyPairChecks) {
  const ClipConfig clip;
  const SceneGraph src = two_sprite_scene();
  const EditOp rm{EditKind::remove, {Shape::circle, Color::red}, std::nullopt};
  const SceneGraph tgt = apply_edit(src, rm);
  const MediaClip rendered = render(tgt, clip);
  const VerificationReport ok = verify_pair(src, tgt, rm, rendered);
  EXPECT_TRUE(ok.instruction_fidelity && ok.content_preservation && ok.perceptual_quality && ok.av_sync &&
              ok.safety && ok.passed);

  SceneGraph extra = tgt;
  extra.sprites.push_back(make_sprite(Shape::triangle, Color::yellow, 16, 16));
  EXPECT_FALSE(verify_pair(src, extra, rm, render(extra, clip)).content_preservation);
}

TEST(SynthWorld, ShiftedAudioBreaksSync) {
  const ClipConfig clip;
  SceneGraph g;
  Sprite s = make_sprite(Shape::circle, Color::red, 10, 10, 0.5, 0);
  s.tone_onset = 6;
  g.sprites.push_back(s);
  MediaClip c = render(g, clip);
  EXPECT_TRUE(av_synchronized(g, c));
  const std::size_t shift = 4 * static_cast<std::size_t>(clip.samples_per_frame());
  SceneGraph bare = g;
  bare.sprites.clear();
  const std::vector<float> hum = render(bare, clip).audio;
  std::vector<float> shifted = hum;
  for (std::size_t i = shift; i < c.audio.size(); ++i) shifted[i] += c.audio[i - shift] - hum[i - shift];
  c.audio = shifted;
  EXPECT_FALSE(av_synchronized(g, c));
}

TEST(SynthWorld, NonTargetPixelsBitIdentical) {
  DatasetConfig cfg;
  YieldStats stats;
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 20 && seed < 200; ++seed) {
    const auto draw = draw_pair(cfg, seed, stats);
    if (!draw) continue;
    ++checked;
    const ClipConfig& clip = cfg.scene.clip;
    for (int t = 0; t < clip.frames; ++t) {
      std::vector<PixelBox> boxes;
      for (const auto& s : draw->source.sprites)
        if (!draw->target.find(s.id()) || !(*draw->target.find(s.id()) == s)) boxes.push_back(sprite_box(s, t, clip));
      for (const auto& s : draw->target.sprites)
        if (!draw->source.find(s.id()) || !(*draw->source.find(s.id()) == s)) boxes.push_back(sprite_box(s, t, clip));
      for (int y = 0; y < clip.height; ++y)
        for (int x = 0; x < clip.width; ++x) {
          bool inside = false;
          for (const auto& b : boxes) inside = inside || b.contains(x, y);
          if (inside) continue;
          for (int c = 0; c < 3; ++c)
            ASSERT_EQ(draw->source_clip.pixel(t, y, x, c), draw->target_clip.pixel(t, y, x, c));
        }
    }
  }
  EXPECT_EQ(checked, 20);
}

TEST(Instruction, TokenizeRoundTrip) {
  const std::string text = "insert a green triangle at the top left moving right";
  EXPECT_EQ(instruction::detokenize(instruction::tokenize(text)), text);
  EXPECT_THROW(instruction::tokenize("remove the purple circle"), GrammarError);
  EXPECT_THROW(instruction::parse_text("remove red circle"), GrammarError);
}

TEST(Instruction, ParseAndRender) {
  const auto in = instruction::parse_text("replace the red circle with a blue square");
  EXPECT_EQ(in.kind, EditKind::replace);
  EXPECT_EQ(in.target, (Identity{Shape::circle, Color::red}));
  EXPECT_EQ(in.payload, (Identity{Shape::square, Color::blue}));
  EXPECT_EQ(instruction::render(in).text, "replace the red circle with a blue square");
  EXPECT_TRUE(instruction::parse_text("reconstruct the video").reconstruct);
  EXPECT_EQ(instruction::parse_text("make the blue square sound from the third quarter").quarter, 2);
}

TEST(Instruction, SingleBindingRemove) {
  SceneGraph g;
  g.sprites.push_back(make_sprite(Shape::circle, Color::red, 10, 10));
  const auto [ins, op] = instruction::sample_instruction(g, 1, ClipConfig{}, EditKind::remove);
  EXPECT_EQ(ins.text, "remove the red circle");
  EXPECT_EQ(op.kind, EditKind::remove);
  EXPECT_EQ(op.target, (Identity{Shape::circle, Color::red}));
}

TEST(Instruction, EmptySceneOnlyInsert) {
  const SceneGraph g;
  EXPECT_THROW(instruction::sample_instruction(g, 1, ClipConfig{}, EditKind::remove), NotApplicableError);
  const auto [ins, op] = instruction::sample_instruction(g, 1, ClipConfig{}, EditKind::insert);
  EXPECT_EQ(op.kind, EditKind::insert);
  ASSERT_TRUE(op.payload.has_value());
  EXPECT_NE(ins.text.find(std::string(color_name(op.payload->color))), std::string::npos);
  EXPECT_NE(ins.text.find(std::string(shape_name(op.payload->shape))), std::string::npos);
}

TEST(Dataset, BuildSmallManifest) {
  DatasetConfig cfg;
  const auto dir = tmp_dir("ds_a");
  const auto m = build_dataset(cfg, 8, 2, dir);
  ASSERT_EQ(m.entries.size(), 10U);
  EXPECT_EQ(m.split(Split::train).size(), 8U);
  EXPECT_EQ(m.split(Split::eval).size(), 2U);
  for (const auto& e : m.entries) {
    EXPECT_TRUE(e.passed);
    const MediaClip src = read_clip(m.source_file(e));
    const MediaClip tgt = read_clip(m.target_file(e));
    EXPECT_TRUE(motion_filter(e.source_scene, cfg.motion_threshold));
    EXPECT_TRUE(silence_filter(src.audio, cfg.silence_threshold_dbfs));
    EXPECT_TRUE(verify_pair(e.source_scene, e.target_scene, e.edit, tgt).passed);
    const auto intent = instruction::parse_text(e.instruction);
    EXPECT_EQ(apply_edit(e.source_scene, instruction::bind(intent, e.source_scene, m.clip_config)), e.target_scene);
  }
  const auto loaded = load_manifest(dir);
  EXPECT_EQ(loaded.entries.size(), 10U);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, DeterministicManifest) {
  DatasetConfig cfg;
  const auto a = tmp_dir("ds_det_a");
  const auto b = tmp_dir("ds_det_b");
  build_dataset(cfg, 4, 1, a);
  build_dataset(cfg, 4, 1, b);
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  EXPECT_EQ(slurp(a / "tgt_0.clip"), slurp(b / "tgt_0.clip"));
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Dataset, InfeasibleThreshold) {
  DatasetConfig cfg;
  cfg.motion_threshold = 100.0;
  cfg.max_attempts_per_entry = 5;
  const auto dir = tmp_dir("ds_inf");
  EXPECT_THROW(build_dataset(cfg, 2, 0, dir), InfeasibleError);
  std::filesystem::remove_all(dir);
}
