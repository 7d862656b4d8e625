#include "av2av/instruction.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

#include "av2av/error.hpp"

namespace av2av::instruction {

namespace {

using synthworld::Color;
using synthworld::Shape;
using synthworld::Sprite;

constexpr std::array<std::string_view, 4> kOrdinals = {"first", "second", "third", "fourth"};
constexpr std::array<std::string_view, kMotionCount> kMotionWords = {"left", "right", "up", "down",
                                                                     "still"};

const std::unordered_map<std::string, int>& word_index() {
  static const auto index = [] {
    std::unordered_map<std::string, int> m;
    const auto& v = vocabulary();
    for (std::size_t i = 0; i < v.size(); ++i) m.emplace(v[i], static_cast<int>(i));
    return m;
  }();
  return index;
}

class Cursor {
 public:
  explicit Cursor(std::vector<std::string> words) : words_(std::move(words)) {}

  bool done() const { return pos_ == words_.size(); }
  const std::string& peek() const {
    if (done()) fail("instruction ended early");
    return words_[pos_];
  }
  std::string next() {
    const std::string w = peek();
    ++pos_;
    return w;
  }
  void expect(std::string_view w) {
    if (done() || words_[pos_] != w) fail("expected '" + std::string(w) + "'");
    ++pos_;
  }
  Identity identity() {
    const auto color = synthworld::parse_color(next());
    if (!color) fail("expected a color");
    const auto shape = synthworld::parse_shape(next());
    if (!shape) fail("expected a shape");
    return {*shape, *color};
  }
  [[noreturn]] void fail(const std::string& why) const {
    std::string text;
    for (const auto& w : words_) text += (text.empty() ? "" : " ") + w;
    throw GrammarError("cannot parse '" + text + "': " + why + " at word " + std::to_string(pos_ + 1) +
                       "\n" + templates_help());
  }

 private:
  std::vector<std::string> words_;
  std::size_t pos_ = 0;
};

std::string region_text(Region r) {
  switch (r) {
    case Region::top_left: return "top left";
    case Region::top_right: return "top right";
    case Region::bottom_left: return "bottom left";
    case Region::bottom_right: return "bottom right";
    case Region::center: return "center";
  }
  return {};
}

std::string motion_text(Motion m) {
  return m == Motion::still ? "standing still" : "moving " + std::string(kMotionWords[static_cast<std::size_t>(m)]);
}

std::size_t index_of(const SceneGraph& scene, Identity id) {
  for (std::size_t i = 0; i < scene.sprites.size(); ++i)
    if (scene.sprites[i].id() == id) return i;
  throw NotApplicableError("scene has no " + id.describe());
}

int quarter_onset(int quarter, const ClipConfig& clip) { return quarter * clip.frames / 4; }

}  // namespace

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v = {"remove", "insert", "replace", "silence", "make",   "reconstruct",
                                  "the",    "a",      "at",      "with",    "sound",  "from",
                                  "quarter", "video", "first",   "second",  "third",  "fourth",
                                  "top",    "bottom", "left",    "right",   "center", "moving",
                                  "up",     "down",   "standing", "still"};
    for (int c = 0; c < synthworld::kColorCount; ++c)
      v.emplace_back(synthworld::color_name(static_cast<Color>(c)));
    for (int s = 0; s < synthworld::kShapeCount; ++s)
      v.emplace_back(synthworld::shape_name(static_cast<Shape>(s)));
    return v;
  }();
  return vocab;
}

int vocab_size() { return static_cast<int>(vocabulary().size()); }

std::string templates_help() {
  return "valid instructions:\n"
         "  remove the <color> <shape>\n"
         "  insert a <color> <shape> at the <region> <motion>\n"
         "  replace the <color> <shape> with a <color> <shape>\n"
         "  silence the <color> <shape>\n"
         "  make the <color> <shape> sound from the <first|second|third|fourth> quarter\n"
         "  reconstruct the video\n"
         "colors: red green blue yellow cyan magenta; shapes: circle square triangle\n"
         "regions: top left, top right, bottom left, bottom right, center\n"
         "motions: moving left, moving right, moving up, moving down, standing still";
}

std::vector<int> tokenize(const std::string& text) {
  std::istringstream in(text);
  std::vector<int> tokens;
  std::string w;
  while (in >> w) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return std::tolower(ch); });
    const auto it = word_index().find(w);
    if (it == word_index().end())
      throw GrammarError("unknown word '" + w + "' in instruction\n" + templates_help());
    tokens.push_back(it->second);
  }
  return tokens;
}

std::string detokenize(const std::vector<int>& tokens) {
  std::string text;
  for (int t : tokens) {
    if (t < 0 || t >= vocab_size()) throw GrammarError("token id " + std::to_string(t) + " outside vocabulary");
    if (!text.empty()) text += ' ';
    text += vocabulary()[static_cast<std::size_t>(t)];
  }
  return text;
}

Instruction make_instruction(const std::string& text) {
  Instruction ins;
  ins.tokens = tokenize(text);
  ins.text = detokenize(ins.tokens);
  return ins;
}

Intent parse(const std::vector<int>& tokens) {
  std::vector<std::string> words;
  for (int t : tokens) {
    if (t < 0 || t >= vocab_size()) throw GrammarError("token id " + std::to_string(t) + " outside vocabulary");
    words.push_back(vocabulary()[static_cast<std::size_t>(t)]);
  }
  Cursor c(words);
  Intent in;
  const std::string verb = c.next();
  if (verb == "reconstruct") {
    c.expect("the");
    c.expect("video");
    in.reconstruct = true;
  } else if (verb == "remove" || verb == "silence") {
    in.kind = verb == "remove" ? EditKind::remove : EditKind::silence;
    c.expect("the");
    in.target = c.identity();
  } else if (verb == "replace") {
    in.kind = EditKind::replace;
    c.expect("the");
    in.target = c.identity();
    c.expect("with");
    c.expect("a");
    in.payload = c.identity();
  } else if (verb == "make") {
    in.kind = EditKind::retime_tone;
    c.expect("the");
    in.target = c.identity();
    c.expect("sound");
    c.expect("from");
    c.expect("the");
    const auto ord = std::find(kOrdinals.begin(), kOrdinals.end(), c.next());
    if (ord == kOrdinals.end()) c.fail("expected first, second, third or fourth");
    in.quarter = static_cast<int>(ord - kOrdinals.begin());
    c.expect("quarter");
  } else if (verb == "insert") {
    in.kind = EditKind::insert;
    c.expect("a");
    in.payload = c.identity();
    c.expect("at");
    c.expect("the");
    const std::string r = c.next();
    if (r == "center") {
      in.region = Region::center;
    } else if (r == "top" || r == "bottom") {
      const std::string side = c.next();
      if (side != "left" && side != "right") c.fail("expected left or right");
      in.region = r == "top" ? (side == "left" ? Region::top_left : Region::top_right)
                             : (side == "left" ? Region::bottom_left : Region::bottom_right);
    } else {
      c.fail("expected a region");
    }
    const std::string m = c.next();
    if (m == "standing") {
      c.expect("still");
      in.motion = Motion::still;
    } else if (m == "moving") {
      const auto dir = std::find(kMotionWords.begin(), kMotionWords.end() - 1, c.next());
      if (dir == kMotionWords.end() - 1) c.fail("expected left, right, up or down");
      in.motion = static_cast<Motion>(dir - kMotionWords.begin());
    } else {
      c.fail("expected a motion");
    }
  } else {
    c.fail("unknown verb");
  }
  if (!c.done()) c.fail("trailing words");
  return in;
}

Intent parse_text(const std::string& text) { return parse(tokenize(text)); }

Instruction render(const Intent& in) {
  std::string text;
  if (in.reconstruct) {
    text = "reconstruct the video";
  } else {
    switch (in.kind) {
      case EditKind::remove: text = "remove the " + in.target.describe(); break;
      case EditKind::silence: text = "silence the " + in.target.describe(); break;
      case EditKind::replace:
        text = "replace the " + in.target.describe() + " with a " + in.payload.describe();
        break;
      case EditKind::retime_tone:
        text = "make the " + in.target.describe() + " sound from the " +
               std::string(kOrdinals[static_cast<std::size_t>(in.quarter)]) + " quarter";
        break;
      case EditKind::insert:
        text = "insert a " + in.payload.describe() + " at the " + region_text(in.region) + " " +
               motion_text(in.motion);
        break;
    }
  }
  return make_instruction(text);
}

Sprite insert_payload(Identity id, Region region, Motion motion, const ClipConfig& clip) {
  Sprite s;
  s.shape = id.shape;
  s.color = id.color;
  s.size = std::min(clip.width, clip.height) / 4.0;
  const double qx = clip.width / 4.0;
  const double qy = clip.height / 4.0;
  switch (region) {
    case Region::top_left: s.x0 = qx, s.y0 = qy; break;
    case Region::top_right: s.x0 = 3 * qx, s.y0 = qy; break;
    case Region::bottom_left: s.x0 = qx, s.y0 = 3 * qy; break;
    case Region::bottom_right: s.x0 = 3 * qx, s.y0 = 3 * qy; break;
    case Region::center: s.x0 = 2 * qx, s.y0 = 2 * qy; break;
  }
  // Total travel over the clip stays below the gap between sprite edge and frame edge.
  const double speed = (std::min(qx, qy) - s.size / 2.0 - 0.25) / std::max(1, clip.frames - 1);
  switch (motion) {
    case Motion::left: s.vx = -speed; break;
    case Motion::right: s.vx = speed; break;
    case Motion::up: s.vy = -speed; break;
    case Motion::down: s.vy = speed; break;
    case Motion::still: break;
  }
  s.tone_hz = synthworld::tone_frequency(id);
  s.tone_amp = 0.15;
  s.tone_onset = 0;
  return s;
}

EditOp bind(const Intent& in, const SceneGraph& scene, const ClipConfig& clip) {
  if (in.reconstruct) throw NotApplicableError("'reconstruct the video' is not a scene edit");
  EditOp op;
  op.kind = in.kind;
  op.target = in.target;
  switch (in.kind) {
    case EditKind::remove:
    case EditKind::silence: break;
    case EditKind::insert:
      op.target = in.payload;
      op.payload = insert_payload(in.payload, in.region, in.motion, clip);
      break;
    case EditKind::replace: {
      Sprite s = scene.sprites[index_of(scene, in.target)];
      s.shape = in.payload.shape;
      s.color = in.payload.color;
      s.tone_hz = synthworld::tone_frequency(in.payload);
      op.payload = s;
      break;
    }
    case EditKind::retime_tone: {
      Sprite s = scene.sprites[index_of(scene, in.target)];
      s.tone_onset = quarter_onset(in.quarter, clip);
      op.payload = s;
      break;
    }
  }
  synthworld::check_applicable(scene, op);
  return op;
}

std::pair<Instruction, EditOp> sample_instruction(const SceneGraph& scene, std::uint64_t seed,
                                                  const ClipConfig& clip, std::optional<EditKind> kind) {
  std::array<std::vector<Intent>, synthworld::kEditKindCount> candidates;
  auto consider = [&](const Intent& in) {
    try {
      bind(in, scene, clip);
      candidates[static_cast<std::size_t>(in.kind)].push_back(in);
    } catch (const NotApplicableError&) {
    }
  };
  for (const auto& s : scene.sprites) {
    Intent in;
    in.target = s.id();
    for (EditKind k : {EditKind::remove, EditKind::silence}) {
      in.kind = k;
      consider(in);
    }
    in.kind = EditKind::retime_tone;
    for (int q = 0; q < 4; ++q) {
      in.quarter = q;
      consider(in);
    }
    in.kind = EditKind::replace;
    for (int i = 0; i < synthworld::kIdentityCount; ++i) {
      in.payload = Identity::from_index(i);
      consider(in);
    }
  }
  for (int i = 0; i < synthworld::kIdentityCount; ++i)
    for (int r = 0; r < kRegionCount; ++r)
      for (int m = 0; m < kMotionCount; ++m) {
        Intent in;
        in.kind = EditKind::insert;
        in.payload = Identity::from_index(i);
        in.region = static_cast<Region>(r);
        in.motion = static_cast<Motion>(m);
        consider(in);
      }

  std::vector<int> kinds;
  for (int k = 0; k < synthworld::kEditKindCount; ++k)
    if (!candidates[static_cast<std::size_t>(k)].empty() && (!kind || static_cast<int>(*kind) == k))
      kinds.push_back(k);
  if (kinds.empty())
    throw NotApplicableError(std::string("no applicable ") +
                             (kind ? std::string(synthworld::edit_kind_name(*kind)) : std::string("edit")) +
                             " for this scene");
  Rng rng(seed);
  const int k = kinds[std::uniform_int_distribution<std::size_t>(0, kinds.size() - 1)(rng)];
  const auto& pool = candidates[static_cast<std::size_t>(k)];
  const Intent& in = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  return {render(in), bind(in, scene, clip)};
}

}  // namespace av2av::instruction
