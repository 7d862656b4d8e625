#include "av2av/dataset.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

#include "av2av/error.hpp"

namespace av2av::synthworld {

std::string_view split_name(Split s) { return s == Split::train ? "train" : "eval"; }

namespace {

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "eval") return Split::eval;
  throw ConfigError("unknown split '" + s + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const DatasetConfig& c) {
  std::vector<std::string> kinds;
  for (auto k : c.kinds) kinds.emplace_back(edit_kind_name(k));
  j = nlohmann::json{{"scene", c.scene},
                     {"seed", c.seed},
                     {"motion_threshold", c.motion_threshold},
                     {"silence_threshold_dbfs", c.silence_threshold_dbfs},
                     {"kinds", kinds},
                     {"max_attempts_per_entry", c.max_attempts_per_entry}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
  c.scene = j.at("scene").get<SceneConfig>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.motion_threshold = j.at("motion_threshold").get<double>();
  c.silence_threshold_dbfs = j.at("silence_threshold_dbfs").get<double>();
  c.kinds.clear();
  for (const auto& k : j.at("kinds")) c.kinds.push_back(parse_edit_kind(k.get<std::string>()));
  c.max_attempts_per_entry = j.at("max_attempts_per_entry").get<int>();
}

void to_json(nlohmann::json& j, const ManifestEntry& e) {
  j = nlohmann::json{{"index", e.index},
                     {"split", split_name(e.split)},
                     {"source_path", e.source_path},
                     {"target_path", e.target_path},
                     {"instruction", e.instruction},
                     {"edit_kind", edit_kind_name(e.edit_kind)},
                     {"seed", e.seed},
                     {"source_scene", e.source_scene},
                     {"target_scene", e.target_scene},
                     {"edit", e.edit},
                     {"passed", e.passed}};
}

void from_json(const nlohmann::json& j, ManifestEntry& e) {
  e.index = j.at("index").get<int>();
  e.split = parse_split(j.at("split").get<std::string>());
  e.source_path = j.at("source_path").get<std::string>();
  e.target_path = j.at("target_path").get<std::string>();
  e.instruction = j.at("instruction").get<std::string>();
  e.edit_kind = parse_edit_kind(j.at("edit_kind").get<std::string>());
  e.seed = j.at("seed").get<std::uint64_t>();
  e.source_scene = j.at("source_scene").get<SceneGraph>();
  e.target_scene = j.at("target_scene").get<SceneGraph>();
  e.edit = j.at("edit").get<EditOp>();
  e.passed = j.at("passed").get<bool>();
}

void to_json(nlohmann::json& j, const YieldStats& s) {
  j = nlohmann::json{{"attempts", s.attempts},
                     {"kept", s.kept},
                     {"rejected_motion", s.rejected_motion},
                     {"rejected_silence", s.rejected_silence},
                     {"rejected_no_edit", s.rejected_no_edit},
                     {"rejected_verification", s.rejected_verification}};
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

std::optional<PairDraw> draw_pair(const DatasetConfig& cfg, std::uint64_t seed, YieldStats& stats) {
  ++stats.attempts;
  const ClipConfig& clip = cfg.scene.clip;
  PairDraw d;
  d.source = sample_scene(derive_seed(seed, 1), cfg.scene);
  if (!motion_filter(d.source, cfg.motion_threshold)) {
    ++stats.rejected_motion;
    return std::nullopt;
  }
  d.source_clip = render(d.source, clip);
  if (!silence_filter(d.source_clip.audio, cfg.silence_threshold_dbfs)) {
    ++stats.rejected_silence;
    return std::nullopt;
  }
  Rng rng(derive_seed(seed, 2));
  std::vector<EditKind> kinds = cfg.kinds;
  std::shuffle(kinds.begin(), kinds.end(), rng);
  bool found = false;
  for (EditKind k : kinds) {
    try {
      std::tie(d.instruction, d.edit) = instruction::sample_instruction(d.source, derive_seed(seed, 3), clip, k);
      found = true;
      break;
    } catch (const NotApplicableError&) {
    }
  }
  if (!found) {
    ++stats.rejected_no_edit;
    return std::nullopt;
  }
  d.target = apply_edit(d.source, d.edit);
  d.target_clip = render(d.target, clip);
  if (!motion_filter(d.target, cfg.motion_threshold)) {
    ++stats.rejected_motion;
    return std::nullopt;
  }
  if (!silence_filter(d.target_clip.audio, cfg.silence_threshold_dbfs)) {
    ++stats.rejected_silence;
    return std::nullopt;
  }
  if (!verify_pair(d.source, d.target, d.edit, d.target_clip).passed) {
    ++stats.rejected_verification;
    return std::nullopt;
  }
  ++stats.kept;
  return d;
}

DatasetManifest build_dataset(const DatasetConfig& cfg, int n_train, int n_eval,
                              const std::filesystem::path& out_dir) {
  if (n_train < 0 || n_eval < 0) throw ConfigError("dataset sizes must be non-negative");
  if (cfg.kinds.empty()) throw ConfigError("dataset needs at least one edit kind");
  if (cfg.max_attempts_per_entry < 1) throw ConfigError("max_attempts_per_entry must be positive");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.root = out_dir;
  m.clip_config = cfg.scene.clip;
  m.config = cfg;
  const int total = n_train + n_eval;
  for (int i = 0; i < total; ++i) {
    std::optional<PairDraw> pair;
    std::uint64_t seed = 0;
    for (int a = 0; a < cfg.max_attempts_per_entry && !pair; ++a) {
      seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(a));
      pair = draw_pair(cfg, seed, m.stats);
    }
    if (!pair)
      throw InfeasibleError("dataset entry " + std::to_string(i) + ": no pair survived the filters in " +
                            std::to_string(cfg.max_attempts_per_entry) + " attempts");
    ManifestEntry e;
    e.index = i;
    e.split = i < n_train ? Split::train : Split::eval;
    e.source_path = "src_" + std::to_string(i) + ".clip";
    e.target_path = "tgt_" + std::to_string(i) + ".clip";
    e.instruction = pair->instruction.text;
    e.edit_kind = pair->edit.kind;
    e.seed = seed;
    e.source_scene = pair->source;
    e.target_scene = pair->target;
    e.edit = pair->edit;
    e.passed = true;
    write_clip(out_dir / e.source_path, pair->source_clip);
    write_clip(out_dir / e.target_path, pair->target_clip);
    m.entries.push_back(std::move(e));
  }

  nlohmann::json j{{"format", "av2av-manifest/1"},
                   {"clip_config", m.clip_config},
                   {"config", cfg},
                   {"counts", {{"train", n_train}, {"eval", n_eval}}},
                   {"yield", m.stats},
                   {"entries", m.entries}};
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (out_dir / "manifest.json").string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write failed for " + (out_dir / "manifest.json").string());
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& dir_or_file) {
  const auto file = std::filesystem::is_directory(dir_or_file) ? dir_or_file / "manifest.json" : dir_or_file;
  std::ifstream in(file);
  if (!in) throw IoError("cannot open manifest " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("manifest " + file.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = file.parent_path();
  try {
    m.clip_config = j.at("clip_config").get<ClipConfig>();
    m.config = j.at("config").get<DatasetConfig>();
    m.entries = j.at("entries").get<std::vector<ManifestEntry>>();
    const auto& y = j.at("yield");
    m.stats = {y.at("attempts").get<int>(),         y.at("kept").get<int>(),
               y.at("rejected_motion").get<int>(),  y.at("rejected_silence").get<int>(),
               y.at("rejected_no_edit").get<int>(), y.at("rejected_verification").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + file.string() + ": " + e.what());
  }
  return m;
}

}  // namespace av2av::synthworld
