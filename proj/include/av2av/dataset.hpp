#pragma once

// Verified paired-clip datasets on disk.
//
// Layout: <dir>/manifest.json plus src_<i>.clip / tgt_<i>.clip per entry.

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "av2av/instruction.hpp"
#include "av2av/synthworld.hpp"

namespace av2av::synthworld {

enum class Split { train, eval };
std::string_view split_name(Split s);

struct DatasetConfig {
  SceneConfig scene;
  std::uint64_t seed = 2024;
  double motion_threshold = 0.5;
  double silence_threshold_dbfs = -45.0;
  std::vector<EditKind> kinds{EditKind::remove, EditKind::insert, EditKind::replace,
                              EditKind::retime_tone, EditKind::silence};
  // Candidate draws allowed per requested entry before declaring infeasibility.
  int max_attempts_per_entry = 100;
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

struct ManifestEntry {
  int index = 0;
  Split split = Split::train;
  std::string source_path;  // relative to the manifest directory
  std::string target_path;
  std::string instruction;
  EditKind edit_kind = EditKind::remove;
  std::uint64_t seed = 0;
  SceneGraph source_scene;
  SceneGraph target_scene;
  EditOp edit;
  bool passed = false;
};

struct YieldStats {
  int attempts = 0;
  int kept = 0;
  int rejected_motion = 0;
  int rejected_silence = 0;
  int rejected_no_edit = 0;
  int rejected_verification = 0;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory holding the manifest (not serialized)
  ClipConfig clip_config;
  DatasetConfig config;
  std::vector<ManifestEntry> entries;
  YieldStats stats;

  std::vector<const ManifestEntry*> split(Split s) const;
  std::filesystem::path source_file(const ManifestEntry& e) const { return root / e.source_path; }
  std::filesystem::path target_file(const ManifestEntry& e) const { return root / e.target_path; }
};

void to_json(nlohmann::json& j, const ManifestEntry& e);
void from_json(const nlohmann::json& j, ManifestEntry& e);
void to_json(nlohmann::json& j, const YieldStats& s);

// Draws one verified pair for entry `index`; nullopt if the draw was filtered
// (the stats record why).
struct PairDraw {
  SceneGraph source, target;
  MediaClip source_clip, target_clip;
  instruction::Instruction instruction;
  EditOp edit;
};
std::optional<PairDraw> draw_pair(const DatasetConfig& cfg, std::uint64_t seed, YieldStats& stats);

DatasetManifest build_dataset(const DatasetConfig& cfg, int n_train, int n_eval,
                              const std::filesystem::path& out_dir);

DatasetManifest load_manifest(const std::filesystem::path& dir_or_file);

}  // namespace av2av::synthworld
