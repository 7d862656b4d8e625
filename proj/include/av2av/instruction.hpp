#pragma once

// Closed instruction grammar over the sprite world.
//
//   remove the <color> <shape>
//   insert a <color> <shape> at the <region> <motion>
//   replace the <color> <shape> with a <color> <shape>
//   silence the <color> <shape>
//   make the <color> <shape> sound from the <ordinal> quarter
//   reconstruct the video
//
// region: top left | top right | bottom left | bottom right | center
// motion: moving left | moving right | moving up | moving down | standing still

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "av2av/synthworld.hpp"

namespace av2av::instruction {

using synthworld::EditKind;
using synthworld::EditOp;
using synthworld::Identity;
using synthworld::SceneGraph;

struct Instruction {
  std::vector<int> tokens;
  std::string text;

  bool operator==(const Instruction&) const = default;
};

const std::vector<std::string>& vocabulary();
int vocab_size();

// Throws GrammarError on any word outside the vocabulary.
std::vector<int> tokenize(const std::string& text);
std::string detokenize(const std::vector<int>& tokens);
Instruction make_instruction(const std::string& text);

// Human-readable list of the templates, used in error messages.
std::string templates_help();

enum class Region { top_left, top_right, bottom_left, bottom_right, center };
enum class Motion { left, right, up, down, still };
inline constexpr int kRegionCount = 5;
inline constexpr int kMotionCount = 5;

// Parsed, scene-independent meaning of an instruction.
struct Intent {
  bool reconstruct = false;
  EditKind kind = EditKind::remove;
  Identity target;                // remove/replace/silence/retime
  Identity payload;               // insert/replace
  Region region = Region::center;  // insert
  Motion motion = Motion::still;   // insert
  int quarter = 0;                 // retime, 0..3

  bool operator==(const Intent&) const = default;
};

Intent parse(const std::vector<int>& tokens);
Intent parse_text(const std::string& text);
Instruction render(const Intent& intent);

// Fully determined insert payload for a region/motion pair.
synthworld::Sprite insert_payload(Identity id, Region region, Motion motion, const ClipConfig& clip);

// Resolves an intent against a scene; throws NotApplicableError if the edit
// cannot apply (missing target, identity collision, no-op).
EditOp bind(const Intent& intent, const SceneGraph& scene, const ClipConfig& clip);

// Draws a random applicable edit; `kind` restricts the draw. Throws
// NotApplicableError when no edit of the requested kind applies.
std::pair<Instruction, EditOp> sample_instruction(const SceneGraph& scene, std::uint64_t seed,
                                                  const ClipConfig& clip,
                                                  std::optional<EditKind> kind = std::nullopt);

}  // namespace av2av::instruction
