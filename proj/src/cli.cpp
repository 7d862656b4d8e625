#include "av2av/cli.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "av2av/error.hpp"

namespace av2av::cli {

namespace {

using nlohmann::json;

int line_of(const std::string& text, std::size_t pos) {
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(std::min(pos, text.size())), '\n'));
}

// Line of the last key of `path`, found by scanning keys in order; 0 if not found.
int locate(const std::string& text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  for (const auto& key : path) {
    pos = text.find("\"" + key + "\"", pos);
    if (pos == std::string::npos) return 0;
  }
  return line_of(text, pos);
}

std::string join(const std::vector<std::string>& path) {
  std::string s;
  for (const auto& p : path) s += (s.empty() ? "" : ".") + p;
  return s;
}

bool same_kind(const json& def, const json& got) {
  if (def.is_number_integer()) return got.is_number_integer();
  if (def.is_number()) return got.is_number();
  return def.type() == got.type();
}

// Overlays `user` onto `def`, rejecting unknown keys and type changes.
void overlay(json& def, const json& user, std::vector<std::string>& path, const std::string& text,
             const std::string& source) {
  auto fail = [&](const std::string& msg) {
    throw ConfigError(source + ":" + std::to_string(locate(text, path)) + ": " + msg);
  };
  if (!user.is_object()) fail("'" + join(path) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    path.push_back(key);
    if (!def.contains(key)) fail("unknown key '" + join(path) + "'");
    json& slot = def[key];
    if (!same_kind(slot, value)) fail("'" + join(path) + "' must be " + std::string(slot.type_name()));
    if (slot.is_object()) overlay(slot, value, path, text, source);
    else slot = value;
    path.pop_back();
  }
}

std::filesystem::path ckpt_path(const std::filesystem::path& dir, flowtrain::Stage s) {
  return dir / (std::string(flowtrain::stage_name(s)) + ".ckpt");
}

int stage_steps(flowtrain::Stage s, const flowtrain::TrainConfig& c) {
  switch (s) {
    case flowtrain::Stage::stage1_video: return c.steps_stage1_video;
    case flowtrain::Stage::stage1_audio: return c.steps_stage1_audio;
    case flowtrain::Stage::stage2: return c.steps_stage2;
    case flowtrain::Stage::direct: return c.steps_stage1_video + c.steps_stage1_audio + c.steps_stage2;
  }
  return 0;
}

// A finished checkpoint for exactly this configuration, if one exists.
std::optional<flowtrain::Checkpoint> completed(const std::filesystem::path& dir, flowtrain::Stage s,
                                               const backbone::ModelConfig& model, const RunConfig& cfg) {
  const auto path = ckpt_path(dir, s);
  if (!std::filesystem::exists(path)) return std::nullopt;
  auto ck = flowtrain::load_checkpoint(path);
  if (ck.stage != s || !(ck.model == model) || !(ck.train == cfg.train) || !(ck.codec == cfg.codec) ||
      ck.step != stage_steps(s, cfg.train))
    return std::nullopt;
  return ck;
}

flowtrain::RunOptions run_options(const std::filesystem::path& dir, flowtrain::Stage s, bool resume,
                                  std::ostream& out) {
  flowtrain::RunOptions ro;
  ro.out_dir = dir;
  if (resume && std::filesystem::exists(ckpt_path(dir, s))) ro.resume = ckpt_path(dir, s);
  ro.on_step = [&out](flowtrain::Stage st, const flowtrain::TraceRow& r) {
    if (r.step % 100 == 0)
      out << flowtrain::stage_name(st) << " step " << r.step << " loss " << std::setprecision(5) << r.loss_total
          << std::endl;
  };
  return ro;
}

flowtrain::Checkpoint train_one(flowtrain::Stage s, const backbone::ModelConfig& model, const RunConfig& cfg,
                                const synthworld::DatasetManifest& data, const std::map<std::string, MatF>* init,
                                const std::filesystem::path& dir, bool resume, std::ostream& out) {
  out << "training " << flowtrain::stage_name(s) << " (" << stage_steps(s, cfg.train) << " steps)" << std::endl;
  return flowtrain::train_stage(s, model, cfg.train, data, cfg.codec, init, run_options(dir, s, resume, out));
}

synthworld::DatasetManifest require_dataset(const RunConfig& cfg) {
  const auto path = cfg.paths.data_dir / "manifest.json";
  if (!std::filesystem::exists(path))
    throw ConfigError("dataset not found: " + path.string() + " (run `av2av synth` first)");
  auto m = synthworld::load_manifest(cfg.paths.data_dir);
  if (!(m.clip_config == cfg.clip)) throw ConfigError("dataset clip config differs from the run config");
  return m;
}

}  // namespace

// ---- config -----------------------------------------------------------------

json to_json(const RunConfig& c) {
  json ds = c.dataset;
  ds["train_pairs"] = c.train_pairs;
  ds["eval_pairs"] = c.eval_pairs;
  return json{{"version", c.version},
              {"paths",
               {{"data_dir", c.paths.data_dir.string()},
                {"run_dir", c.paths.run_dir.string()},
                {"outputs_dir", c.paths.outputs_dir.string()},
                {"report_dir", c.paths.report_dir.string()}}},
              {"dataset", ds},
              {"clip", c.clip},
              {"codec", c.codec},
              {"model", c.model},
              {"train", c.train},
              {"solve", c.solve},
              {"engine", c.engine},
              {"engine_train", c.engine_train},
              {"metrics", {{"provider_id", c.provider_id}}}};
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ":" + std::to_string(line_of(text, e.byte == 0 ? 0 : e.byte - 1)) +
                      ": syntax error: " + e.what());
  }
  if (!user.is_object()) throw ConfigError(source + ":1: config must be a JSON object");
  if (!user.contains("version"))
    throw ConfigError(source + ":1: missing 'version' (expected " + std::to_string(kConfigVersion) + ")");
  if (!user["version"].is_number_integer() || user["version"].get<int>() != kConfigVersion)
    throw ConfigError(source + ":" + std::to_string(locate(text, {"version"})) + ": unsupported config version " +
                      user["version"].dump() + " (expected " + std::to_string(kConfigVersion) + ")");
  json merged = to_json(RunConfig{});
  std::vector<std::string> path;
  overlay(merged, user, path, text, source);

  RunConfig c;
  std::string section;
  try {
    section = "paths";
    const auto& p = merged.at("paths");
    c.paths.data_dir = p.at("data_dir").get<std::string>();
    c.paths.run_dir = p.at("run_dir").get<std::string>();
    c.paths.outputs_dir = p.at("outputs_dir").get<std::string>();
    c.paths.report_dir = p.at("report_dir").get<std::string>();
    section = "clip";
    c.clip = merged.at("clip").get<ClipConfig>();
    section = "dataset";
    c.train_pairs = merged["dataset"]["train_pairs"].get<int>();
    c.eval_pairs = merged["dataset"]["eval_pairs"].get<int>();
    if (c.train_pairs < 0 || c.eval_pairs < 0) throw ConfigError("pair counts must be non-negative");
    c.dataset = merged.at("dataset").get<synthworld::DatasetConfig>();
    c.dataset.scene.clip = c.clip;
    section = "codec";
    c.codec = merged.at("codec").get<codecs::CodecSpec>();
    codecs::Codec probe(c.codec, c.clip);
    section = "model";
    c.model = merged.at("model").get<backbone::ModelConfig>();
    section = "train";
    c.train = merged.at("train").get<flowtrain::TrainConfig>();
    section = "solve";
    c.solve = merged.at("solve").get<inference::SolveConfig>();
    section = "engine";
    c.engine = merged.at("engine").get<dataengine::EngineConfig>();
    section = "engine_train";
    c.engine_train = merged.at("engine_train").get<dataengine::EngineTrainConfig>();
    section = "metrics";
    c.provider_id = merged.at("metrics").at("provider_id").get<std::string>();
    if (c.provider_id != metrics::kProviderId)
      throw ConfigError("unknown feature provider '" + c.provider_id + "' (available: " + metrics::kProviderId + ")");
  } catch (const Error& e) {
    throw ConfigError(source + ":" + std::to_string(locate(text, {section})) + ": " + section + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(source + ":" + std::to_string(locate(text, {section})) + ": " + section + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

void apply_env_overrides(RunConfig& c) {
  const std::pair<const char*, std::filesystem::path*> vars[] = {{"AV2AV_DATA_DIR", &c.paths.data_dir},
                                                                 {"AV2AV_RUN_DIR", &c.paths.run_dir},
                                                                 {"AV2AV_OUTPUTS_DIR", &c.paths.outputs_dir},
                                                                 {"AV2AV_REPORT_DIR", &c.paths.report_dir}};
  for (const auto& [name, slot] : vars)
    if (const char* v = std::getenv(name); v != nullptr && *v != '\0') *slot = v;
}

// ---- commands ---------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const auto m = synthworld::build_dataset(cfg.dataset, cfg.train_pairs, cfg.eval_pairs, cfg.paths.data_dir);
  const auto& s = m.stats;
  out << "wrote " << m.entries.size() << " pairs to " << cfg.paths.data_dir.string() << "\n"
      << "attempts " << s.attempts << ", kept " << s.kept << "\n"
      << "rejected: motion " << s.rejected_motion << ", silence " << s.rejected_silence << ", no applicable edit "
      << s.rejected_no_edit << ", verification " << s.rejected_verification << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& stage, bool resume, std::ostream& out) {
  using flowtrain::Stage;
  const auto data = require_dataset(cfg);
  const auto& dir = cfg.paths.run_dir;
  if (stage == "engine") {
    dataengine::train_engine(cfg.engine, cfg.engine_train, data, cfg.codec, dir);
    out << "wrote " << (dir / "engine.ckpt").string() << "\n";
    return 0;
  }
  if (stage == "1v" || stage == "all") train_one(Stage::stage1_video, cfg.model, cfg, data, nullptr, dir, resume, out);
  if (stage == "1a" || stage == "all") train_one(Stage::stage1_audio, cfg.model, cfg, data, nullptr, dir, resume, out);
  if (stage == "2" || stage == "all") {
    std::string missing;
    for (auto s : {Stage::stage1_video, Stage::stage1_audio})
      if (!std::filesystem::exists(ckpt_path(dir, s))) missing += " " + ckpt_path(dir, s).string();
    if (!missing.empty()) throw ConfigError("stage 2 needs the stage-1 checkpoints; missing:" + missing);
    const auto v = flowtrain::load_checkpoint(ckpt_path(dir, Stage::stage1_video));
    const auto a = flowtrain::load_checkpoint(ckpt_path(dir, Stage::stage1_audio));
    for (const auto* ck : {&v, &a})
      if (ck->step != stage_steps(ck->stage, ck->train))
        throw ConfigError(std::string(flowtrain::stage_name(ck->stage)) + " checkpoint is incomplete (step " +
                          std::to_string(ck->step) + "); finish it with --resume");
    const auto merged = flowtrain::merge_stage1(v, a);
    train_one(Stage::stage2, v.model, cfg, data, &merged, dir, resume, out);
  }
  if (stage != "1v" && stage != "1a" && stage != "2" && stage != "all")
    throw ConfigError("unknown stage '" + stage + "' (use 1v, 1a, 2, all or engine)");
  return 0;
}

int cmd_edit(const std::filesystem::path& ckpt_file, const std::filesystem::path& clip_path,
             const std::string& instruction_text, const std::filesystem::path& out_path, const EditFlags& flags,
             std::ostream& out) {
  const auto instr = instruction::make_instruction(instruction_text);
  const auto ckpt = flowtrain::load_checkpoint(ckpt_file);
  const MediaClip source = read_clip(clip_path);
  inference::SolveConfig solve{flags.method, flags.steps, flags.seed};
  const MediaClip edited = inference::edit(source, instr, ckpt, solve);
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  write_clip(out_path, edited);
  out << "wrote " << out_path.string() << "\n";
  if (flags.export_png) export_png_frames(*flags.export_png, out_path.stem().string(), edited);
  if (flags.export_wav) export_wav(*flags.export_wav, edited);
  return 0;
}

int cmd_eval(const std::filesystem::path& manifest, const std::filesystem::path& outputs_dir,
             const std::filesystem::path& report_dir, std::ostream& out) {
  const auto m = synthworld::load_manifest(manifest);
  const auto report = metrics::evaluate(m, metrics::load_outputs(m, outputs_dir));
  metrics::write_report(report, report_dir);
  out << std::setprecision(5) << "samples " << report.samples << "  fvd " << report.fvd << "  fad " << report.fad
      << "  tv_a " << report.tv_a << "  ta_a " << report.ta_a << "  av_a " << report.av_a << "  tc " << report.tc
      << "  ssim " << report.ssim << "  lpaps " << report.lpaps << "\n"
      << "non-target ssim " << report.ssim_nontarget << "  applied rate " << report.applied_rate << "\n";
  return 0;
}

void edit_split(const flowtrain::Checkpoint& ckpt, const synthworld::DatasetManifest& data,
                const std::filesystem::path& out_dir, const inference::SolveConfig& solve, synthworld::Split split) {
  const auto model = flowtrain::model_from_checkpoint(ckpt);
  std::filesystem::create_directories(out_dir);
  for (const auto* e : data.split(split)) {
    const MediaClip src = read_clip(data.source_file(*e));
    inference::SolveConfig sc = solve;
    sc.seed = derive_seed(solve.seed, static_cast<std::uint64_t>(e->index));
    write_clip(out_dir / metrics::output_name(*e),
               inference::edit(src, instruction::make_instruction(e->instruction), *model, sc));
  }
}

// ---- ablation ---------------------------------------------------------------

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_source_concat: return "wo_sc";
    case Variant::no_siga: return "wo_siga";
    case Variant::no_two_stage: return "wo_tsts";
  }
  return "?";
}

VariantResult run_variant(const RunConfig& cfg, Variant v, const synthworld::DatasetManifest& data,
                          const std::filesystem::path& root, std::ostream& out) {
  using flowtrain::Stage;
  const auto dir = root / std::string(variant_name(v));
  backbone::ModelConfig model = cfg.model;
  if (v == Variant::no_source_concat) model.source_concat = false;
  if (v == Variant::no_siga) model.injection = backbone::InstructionInjection::cross_attention;
  out << "== variant " << variant_name(v) << std::endl;

  auto ensure = [&](Stage s, const std::map<std::string, MatF>* init) {
    if (auto ck = completed(dir, s, model, cfg)) {
      out << "reusing " << ckpt_path(dir, s).string() << std::endl;
      return *ck;
    }
    return train_one(s, model, cfg, data, init, dir, true, out);
  };
  VariantResult r;
  r.variant = v;
  flowtrain::Checkpoint final_ck;
  if (v == Variant::no_two_stage) {
    final_ck = ensure(Stage::direct, nullptr);
  } else {
    const auto cv = ensure(Stage::stage1_video, nullptr);
    const auto ca = ensure(Stage::stage1_audio, nullptr);
    const auto merged = flowtrain::merge_stage1(cv, ca);
    final_ck = ensure(Stage::stage2, &merged);
    r.train_seconds = cv.train_seconds + ca.train_seconds;
  }
  r.train_seconds += final_ck.train_seconds;
  r.trace = final_ck.trace;
  const auto outputs = dir / "outputs";
  edit_split(final_ck, data, outputs, cfg.solve);
  r.report = metrics::evaluate(data, metrics::load_outputs(data, outputs));
  metrics::write_report(r.report, dir / "report");
  const auto model_ptr = flowtrain::model_from_checkpoint(final_ck);
  r.eval_loss = flowtrain::evaluate_loss(*model_ptr, cfg.train,
                                         flowtrain::PairSource(data, synthworld::Split::eval, cfg.codec, final_ck.model),
                                         derive_seed(cfg.train.seed, 999));
  return r;
}

std::string ablation_table(const std::vector<VariantResult>& results) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  s << "| variant | FVD | FAD | TV-A | TA-A | AV-A | TC | SSIM | LPAPS | non-target SSIM | applied | eval loss |\n"
    << "|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : results) {
    const auto& m = r.report;
    s << "| " << variant_name(r.variant) << " | " << m.fvd << " | " << m.fad << " | " << m.tv_a << " | " << m.ta_a
      << " | " << m.av_a << " | " << m.tc << " | " << m.ssim << " | " << m.lpaps << " | " << m.ssim_nontarget
      << " | " << m.applied_rate << " | " << r.eval_loss << " |\n";
  }
  return s.str();
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  const auto data = require_dataset(cfg);
  const auto root = cfg.paths.run_dir / "ablate";
  std::vector<VariantResult> results;
  for (auto v : {Variant::full, Variant::no_source_concat, Variant::no_siga, Variant::no_two_stage})
    results.push_back(run_variant(cfg, v, data, root, out));
  const std::string table = ablation_table(results);
  std::filesystem::create_directories(cfg.paths.report_dir);
  std::ofstream(cfg.paths.report_dir / "ablation.md") << table;
  json j = json::array();
  for (const auto& r : results) {
    json row = r.report;
    row.erase("per_sample");
    row["variant"] = variant_name(r.variant);
    row["eval_loss"] = r.eval_loss;
    row["train_seconds"] = r.train_seconds;
    j.push_back(row);
  }
  std::ofstream(cfg.paths.report_dir / "ablation.json") << j.dump(1) << '\n';
  out << table;
  return 0;
}

}  // namespace av2av::cli
