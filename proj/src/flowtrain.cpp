#include "av2av/flowtrain.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "av2av/error.hpp"

namespace av2av::flowtrain {

namespace {

constexpr std::array<char, 8> kCkptMagic = {'A', 'V', '2', 'A', 'V', 'C', 'K', 'P'};

bool stage_updates(Stage stage, nn::Branch b) {
  switch (stage) {
    case Stage::stage1_video: return b == nn::Branch::video || b == nn::Branch::shared;
    case Stage::stage1_audio: return b == nn::Branch::audio || b == nn::Branch::shared;
    case Stage::stage2:
    case Stage::direct: return b != nn::Branch::engine;
  }
  return false;
}

int stage_steps(Stage stage, const TrainConfig& cfg) {
  switch (stage) {
    case Stage::stage1_video: return cfg.steps_stage1_video;
    case Stage::stage1_audio: return cfg.steps_stage1_audio;
    case Stage::stage2: return cfg.steps_stage2;
    case Stage::direct: return cfg.steps_stage1_video + cfg.steps_stage1_audio + cfg.steps_stage2;
  }
  return 0;
}

backbone::ForwardFlags stage_flags(Stage stage) {
  backbone::ForwardFlags f;
  if (stage == Stage::stage1_video || stage == Stage::stage1_audio) {
    f.bypass_cross_modal = true;
    f.run_video = stage == Stage::stage1_video;
    f.run_audio = stage == Stage::stage1_audio;
  }
  return f;
}

void load_values(nn::ParamStore<float>& store, const std::map<std::string, MatF>& values) {
  for (auto& p : store) {
    const auto it = values.find(p.name);
    if (it == values.end() || it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw ShapeError("checkpoint is missing or mismatches parameter " + p.name);
    p.value = it->second;
  }
}

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lambda_v", c.lambda_v},
                     {"lambda_a", c.lambda_a},
                     {"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"grad_clip", c.grad_clip},
                     {"steps_stage1_video", c.steps_stage1_video},
                     {"steps_stage1_audio", c.steps_stage1_audio},
                     {"steps_stage2", c.steps_stage2},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"condition_dropout", c.condition_dropout},
                     {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lambda_v = j.at("lambda_v").get<double>();
  c.lambda_a = j.at("lambda_a").get<double>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.steps_stage1_video = j.at("steps_stage1_video").get<int>();
  c.steps_stage1_audio = j.at("steps_stage1_audio").get<int>();
  c.steps_stage2 = j.at("steps_stage2").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.condition_dropout = j.at("condition_dropout").get<double>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
}

TrainConfig low_lr_preset() {
  TrainConfig c;
  c.lr = 1e-5;
  return c;
}

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::stage1_video: return "stage1_video";
    case Stage::stage1_audio: return "stage1_audio";
    case Stage::stage2: return "stage2";
    case Stage::direct: return "direct";
  }
  return "";
}

Stage parse_stage(std::string_view s) {
  for (Stage st : {Stage::stage1_video, Stage::stage1_audio, Stage::stage2, Stage::direct})
    if (stage_name(st) == s) return st;
  throw ConfigError("unknown stage '" + std::string(s) + "'");
}

// ---- objective --------------------------------------------------------------

template <typename S>
Mat<S> interpolate(const Mat<S>& eps, const Mat<S>& z1, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("interpolate: t must lie in [0,1]");
  if (eps.rows() != z1.rows() || eps.cols() != z1.cols()) throw ShapeError("interpolate: shape mismatch");
  if (t == 0.0) return eps;
  if (t == 1.0) return z1;
  return static_cast<S>(1.0 - t) * eps + static_cast<S>(t) * z1;
}

template <typename S>
Mat<S> velocity_target(const Mat<S>& eps, const Mat<S>& z1) {
  if (eps.rows() != z1.rows() || eps.cols() != z1.cols()) throw ShapeError("velocity_target: shape mismatch");
  return z1 - eps;
}

template <typename S>
double mse(const Mat<S>& pred, const Mat<S>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("mse: shape mismatch");
  if (pred.size() == 0) return 0.0;
  return (pred - target).template cast<double>().squaredNorm() / static_cast<double>(pred.size());
}

template <typename S>
LossParts<S> fm_loss(const Mat<S>* pred_v, const Mat<S>* pred_a, const Mat<S>* u_v, const Mat<S>* u_a,
                     double lambda_v, double lambda_a, bool want_grad) {
  LossParts<S> out;
  if ((pred_v == nullptr) != (u_v == nullptr) || (pred_a == nullptr) != (u_a == nullptr))
    throw ShapeError("fm_loss: prediction and target must be given together");
  if (pred_v != nullptr) {
    out.loss_v = mse(*pred_v, *u_v);
    out.total += lambda_v * out.loss_v;
    if (want_grad)
      out.d_video = static_cast<S>(2.0 * lambda_v / static_cast<double>(pred_v->size())) * (*pred_v - *u_v);
  }
  if (pred_a != nullptr) {
    out.loss_a = mse(*pred_a, *u_a);
    out.total += lambda_a * out.loss_a;
    if (want_grad)
      out.d_audio = static_cast<S>(2.0 * lambda_a / static_cast<double>(pred_a->size())) * (*pred_a - *u_a);
  }
  return out;
}

double fm_loss_value(const MatF& pred_v, const MatF& pred_a, const MatF& u_v, const MatF& u_a,
                     const TrainConfig& cfg) {
  return fm_loss<float>(&pred_v, &pred_a, &u_v, &u_a, cfg.lambda_v, cfg.lambda_a).total;
}

// ---- optimizer --------------------------------------------------------------

double AdamW::step(nn::ParamStore<float>& store, const std::function<bool(nn::Branch)>& allowed) {
  double sq = 0.0;
  for (const auto& p : store)
    if (allowed(p.branch)) sq += p.grad.cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double clip = cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(cfg_.beta1);
  const auto b2 = static_cast<float>(cfg_.beta2);
  const auto step_size = static_cast<float>(cfg_.lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(cfg_.adam_eps);
  const auto decay = static_cast<float>(1.0 - cfg_.lr * cfg_.weight_decay);
  for (auto& p : store) {
    if (!allowed(p.branch)) continue;
    auto [it, fresh] = state_.try_emplace(p.name);
    AdamState& s = it->second;
    if (fresh) {
      s.m = MatF::Zero(p.value.rows(), p.value.cols());
      s.v = MatF::Zero(p.value.rows(), p.value.cols());
    }
    const MatF g = p.grad * static_cast<float>(clip);
    s.m = b1 * s.m + (1.0F - b1) * g;
    s.v = b2 * s.v + (1.0F - b2) * g.cwiseAbs2();
    if (decay != 1.0F) p.value *= decay;
    p.value.array() -= step_size * s.m.array() / ((s.v.array() * inv_bc2).sqrt() + eps);
  }
  return norm;
}

// ---- data -------------------------------------------------------------------

PairSource::PairSource(const synthworld::DatasetManifest& manifest, synthworld::Split split,
                       const codecs::CodecSpec& spec, const ModelConfig& model)
    : manifest_(&manifest), entries_(manifest.split(split)), codec_(spec, manifest.clip_config), model_(model) {}

Example PairSource::load(std::size_t i) const {
  const auto& e = *entries_.at(i);
  Example ex;
  const MediaClip src = read_clip(manifest_->source_file(e));
  const MediaClip tgt = read_clip(manifest_->target_file(e));
  if (!(src.config == manifest_->clip_config) || !(tgt.config == manifest_->clip_config))
    throw ShapeError("clip " + e.source_path + " does not match the manifest clip config");
  ex.source = backbone::encode_for_model(codec_, src, model_, codecs::Role::source);
  ex.target = backbone::encode_for_model(codec_, tgt, model_, codecs::Role::target);
  ex.tokens = instruction::tokenize(e.instruction);
  return ex;
}

// ---- traces -----------------------------------------------------------------

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,loss_v,loss_a,loss_total\n" << std::setprecision(9);
  for (const auto& r : trace) out << r.step << ',' << r.loss_v << ',' << r.loss_a << ',' << r.loss_total << '\n';
}

std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    TraceRow r;
    char c1, c2, c3;
    if (!(ls >> r.step >> c1 >> r.loss_v >> c2 >> r.loss_a >> c3 >> r.loss_total))
      throw IoError("malformed trace line in " + path.string() + ": " + line);
    rows.push_back(r);
  }
  return rows;
}

std::vector<double> smooth(const std::vector<double>& xs, int window) {
  std::vector<double> out(xs.size());
  double run = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    run += xs[i];
    if (i >= static_cast<std::size_t>(window)) run -= xs[i - static_cast<std::size_t>(window)];
    out[i] = run / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(window)));
  }
  return out;
}

// ---- containers -------------------------------------------------------------

const Blob* Container::find(const std::string& name) const {
  for (const auto& b : blobs)
    if (b.name == name) return &b;
  return nullptr;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  nlohmann::json header = c.header;
  header["blobs"] = nlohmann::json::array();
  for (const auto& b : c.blobs) header["blobs"].push_back({{"name", b.name}, {"rows", b.value.rows()}, {"cols", b.value.cols()}, {"dtype", "float32"}});
  const std::string text = header.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kCkptMagic.data(), kCkptMagic.size());
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : c.blobs)
      out.write(reinterpret_cast<const char*>(b.value.data()), static_cast<std::streamsize>(b.value.size() * sizeof(float)));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCkptMagic) throw IoError(path.string() + " is not a checkpoint container");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ULL << 31)) throw IoError(path.string() + ": corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path.string() + ": truncated header");
  Container c;
  try {
    c.header = nlohmann::json::parse(text);
    for (const auto& b : c.header.at("blobs")) {
      Blob blob;
      blob.name = b.at("name").get<std::string>();
      blob.value.resize(b.at("rows").get<Eigen::Index>(), b.at("cols").get<Eigen::Index>());
      in.read(reinterpret_cast<char*>(blob.value.data()), static_cast<std::streamsize>(blob.value.size() * sizeof(float)));
      if (!in) throw IoError(path.string() + ": truncated blob " + blob.name);
      c.blobs.push_back(std::move(blob));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad header: " + e.what());
  }
  c.header.erase("blobs");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  Container c;
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& r : ck.trace) trace.push_back({r.step, r.loss_v, r.loss_a, r.loss_total});
  c.header = {{"format", "av2av-checkpoint/1"},
              {"kind", "editor"},
              {"model", ck.model},
              {"codec", ck.codec},
              {"clip", ck.clip},
              {"train", ck.train},
              {"stage", stage_name(ck.stage)},
              {"step", ck.step},
              {"rng_state", ck.rng_state},
              {"adam_steps", ck.adam_steps},
              {"train_seconds", ck.train_seconds},
              {"trace", trace}};
  for (const auto& [name, v] : ck.params) c.blobs.push_back({"param/" + name, v});
  for (const auto& [name, s] : ck.adam) {
    c.blobs.push_back({"adam_m/" + name, s.m});
    c.blobs.push_back({"adam_v/" + name, s.v});
  }
  write_container(path, c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path);
  Checkpoint ck;
  try {
    if (c.header.at("kind").get<std::string>() != "editor")
      throw ConfigError(path.string() + " is not an editor checkpoint");
    ck.model = c.header.at("model").get<ModelConfig>();
    ck.codec = c.header.at("codec").get<codecs::CodecSpec>();
    ck.clip = c.header.at("clip").get<ClipConfig>();
    ck.train = c.header.at("train").get<TrainConfig>();
    ck.stage = parse_stage(c.header.at("stage").get<std::string>());
    ck.step = c.header.at("step").get<int>();
    ck.rng_state = c.header.at("rng_state").get<std::string>();
    ck.adam_steps = c.header.at("adam_steps").get<long long>();
    ck.train_seconds = c.header.value("train_seconds", 0.0);
    for (const auto& r : c.header.at("trace"))
      ck.trace.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad checkpoint header: " + e.what());
  }
  for (auto& b : c.blobs) {
    const auto slash = b.name.find('/');
    const std::string kind = b.name.substr(0, slash);
    const std::string name = b.name.substr(slash + 1);
    if (kind == "param") ck.params[name] = std::move(b.value);
    else if (kind == "adam_m") ck.adam[name].m = std::move(b.value);
    else if (kind == "adam_v") ck.adam[name].v = std::move(b.value);
  }
  return ck;
}

std::map<std::string, MatF> snapshot(const nn::ParamStore<float>& store) {
  std::map<std::string, MatF> out;
  for (const auto& p : store) out[p.name] = p.value;
  return out;
}

std::unique_ptr<EditorModel<float>> model_from_checkpoint(const Checkpoint& c) {
  const codecs::Codec codec(c.codec, c.clip);
  auto model = std::make_unique<EditorModel<float>>(c.model, c.codec, codec.latent_shape());
  load_values(model->params(), c.params);
  return model;
}

// ---- training ---------------------------------------------------------------

Checkpoint train_stage(Stage stage, const ModelConfig& model_cfg, const TrainConfig& cfg,
                       const synthworld::DatasetManifest& data, const codecs::CodecSpec& codec_spec,
                       const std::map<std::string, MatF>* init, const RunOptions& opts) {
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (cfg.condition_dropout < 0.0 || cfg.condition_dropout > 1.0)
    throw ConfigError("condition_dropout must lie in [0,1]");
  const PairSource src(data, synthworld::Split::train, codec_spec, model_cfg);
  if (src.size() == 0) throw ConfigError("dataset has no training pairs");
  EditorModel<float> model(model_cfg, codec_spec, src.codec().latent_shape());
  if (init != nullptr) load_values(model.params(), *init);
  if (model_cfg.vocab_size < instruction::vocab_size())
    throw ConfigError("model vocab_size is smaller than the instruction vocabulary");

  AdamW opt(cfg);
  Rng rng(derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(stage)));
  Checkpoint ck;
  ck.model = model_cfg;
  ck.codec = codec_spec;
  ck.clip = data.clip_config;
  ck.train = cfg;
  ck.stage = stage;

  if (opts.resume) {
    Checkpoint prev = load_checkpoint(*opts.resume);
    if (prev.stage != stage) throw ConfigError("resume checkpoint is for stage " + std::string(stage_name(prev.stage)));
    if (!(prev.model == model_cfg) || !(prev.codec == codec_spec) || !(prev.train == cfg))
      throw ConfigError("resume checkpoint was written with a different configuration");
    load_values(model.params(), prev.params);
    opt.set_steps(prev.adam_steps);
    opt.state() = std::move(prev.adam);
    std::istringstream rs(prev.rng_state);
    rs >> rng;
    ck.trace = std::move(prev.trace);
    ck.step = prev.step;
    ck.train_seconds = prev.train_seconds;
  }

  const int steps = stage_steps(stage, cfg);
  const backbone::ForwardFlags flags = stage_flags(stage);
  const auto allowed = [stage](nn::Branch b) { return stage_updates(stage, b); };
  const auto& shape = src.codec().latent_shape();
  std::uniform_int_distribution<std::size_t> pick(0, src.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto inv_b = static_cast<float>(1.0 / cfg.batch_size);

  auto persist = [&]() {
    if (opts.out_dir.empty()) return;
    std::filesystem::create_directories(opts.out_dir);
    ck.params = snapshot(model.params());
    ck.adam = opt.state();
    ck.adam_steps = opt.steps();
    std::ostringstream rs;
    rs << rng;
    ck.rng_state = rs.str();
    save_checkpoint(opts.out_dir / (std::string(stage_name(stage)) + ".ckpt"), ck);
    write_trace_csv(opts.out_dir / (std::string(stage_name(stage)) + "_trace.csv"), ck.trace);
  };

  int done_this_run = 0;
  while (ck.step < steps) {
    const auto t0 = std::chrono::steady_clock::now();
    model.params().zero_grad();
    TraceRow row;
    row.step = ck.step + 1;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Example ex = src.load(pick(rng));
      const double t = unit(rng);
      const MatF eps_v = randn<float>(shape.video_tokens(), shape.video_channels, rng);
      const MatF eps_a = randn<float>(shape.audio_tokens, shape.audio_channels, rng);
      const bool drop = cfg.condition_dropout > 0.0 && unit(rng) < cfg.condition_dropout;
      const std::vector<int> tokens = drop ? std::vector<int>{} : ex.tokens;
      const MatF zv = interpolate<float>(eps_v, ex.target.video, t);
      const MatF za = interpolate<float>(eps_a, ex.target.audio, t);
      const MatF uv = velocity_target<float>(eps_v, ex.target.video);
      const MatF ua = velocity_target<float>(eps_a, ex.target.audio);
      backbone::ForwardCache<float> cache;
      const auto pred = model.forward(t, zv, za, ex.source.video, ex.source.audio, tokens, flags, &cache);
      auto parts = fm_loss<float>(flags.run_video ? &pred.video : nullptr, flags.run_audio ? &pred.audio : nullptr,
                                  flags.run_video ? &uv : nullptr, flags.run_audio ? &ua : nullptr, cfg.lambda_v,
                                  cfg.lambda_a, true);
      if (!std::isfinite(parts.total))
        throw NumericError(std::string(stage_name(stage)) + ": non-finite loss at step " + std::to_string(row.step));
      if (flags.run_video) parts.d_video *= inv_b;
      if (flags.run_audio) parts.d_audio *= inv_b;
      model.backward(cache, flags.run_video ? &parts.d_video : nullptr, flags.run_audio ? &parts.d_audio : nullptr);
      row.loss_v += parts.loss_v / cfg.batch_size;
      row.loss_a += parts.loss_a / cfg.batch_size;
      row.loss_total += parts.total / cfg.batch_size;
    }
    opt.step(model.params(), allowed);
    ck.train_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ck.trace.push_back(row);
    ++ck.step;
    ++done_this_run;
    if (opts.on_step) opts.on_step(stage, row);
    const bool last = ck.step == steps || (opts.stop_after >= 0 && done_this_run >= opts.stop_after);
    if (last || (cfg.checkpoint_every > 0 && ck.step % cfg.checkpoint_every == 0)) persist();
    if (opts.stop_after >= 0 && done_this_run >= opts.stop_after) break;
  }
  if (steps == 0) persist();
  ck.params = snapshot(model.params());
  ck.adam = opt.state();
  ck.adam_steps = opt.steps();
  std::ostringstream rs;
  rs << rng;
  ck.rng_state = rs.str();
  return ck;
}

Checkpoint train_stage1(nn::Branch branch, const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const synthworld::DatasetManifest& data, const codecs::CodecSpec& codec,
                        const RunOptions& opts) {
  if (branch != nn::Branch::video && branch != nn::Branch::audio)
    throw ConfigError("stage 1 trains the video or the audio branch");
  return train_stage(branch == nn::Branch::video ? Stage::stage1_video : Stage::stage1_audio, model_cfg, cfg, data,
                     codec, nullptr, opts);
}

std::map<std::string, MatF> merge_stage1(const Checkpoint& video, const Checkpoint& audio) {
  if (video.stage != Stage::stage1_video || audio.stage != Stage::stage1_audio)
    throw ConfigError("stage 2 needs a stage1_video and a stage1_audio checkpoint");
  if (!(video.model == audio.model) || !(video.codec == audio.codec) || !(video.clip == audio.clip))
    throw ConfigError("stage-1 checkpoints disagree on architecture");
  const codecs::Codec codec(video.codec, video.clip);
  const EditorModel<float> probe(video.model, video.codec, codec.latent_shape());
  std::map<std::string, MatF> merged;
  for (const auto& p : probe.params()) {
    const auto v = video.params.find(p.name);
    const auto a = audio.params.find(p.name);
    if (v == video.params.end() || a == audio.params.end())
      throw ConfigError("stage-1 checkpoint lacks parameter " + p.name);
    switch (p.branch) {
      case nn::Branch::video: merged[p.name] = v->second; break;
      case nn::Branch::audio: merged[p.name] = a->second; break;
      default: merged[p.name] = 0.5F * (v->second + a->second); break;
    }
  }
  return merged;
}

Checkpoint train_stage2(const TrainConfig& cfg, const Checkpoint& video, const Checkpoint& audio,
                        const synthworld::DatasetManifest& data, const RunOptions& opts) {
  const auto merged = merge_stage1(video, audio);
  return train_stage(Stage::stage2, video.model, cfg, data, video.codec, &merged, opts);
}

Checkpoint train_direct(const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const synthworld::DatasetManifest& data, const codecs::CodecSpec& codec,
                        const RunOptions& opts) {
  return train_stage(Stage::direct, model_cfg, cfg, data, codec, nullptr, opts);
}

double evaluate_loss(const EditorModel<float>& model, const TrainConfig& cfg, const PairSource& data,
                     std::uint64_t seed, int repeats) {
  if (data.size() == 0) throw ConfigError("evaluate_loss: empty split");
  const auto& a = data.model();
  const auto& b = model.config();
  if (a.video_center != b.video_center || a.video_gain != b.video_gain || a.audio_gain != b.audio_gain)
    throw ConfigError("evaluate_loss: data normalization differs from the model's");
  const auto& shape = data.codec().latent_shape();
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Example ex = data.load(i);
    for (int r = 0; r < repeats; ++r) {
      Rng rng(derive_seed(seed, i, static_cast<std::uint64_t>(r)));
      const double t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      const MatF eps_v = randn<float>(shape.video_tokens(), shape.video_channels, rng);
      const MatF eps_a = randn<float>(shape.audio_tokens, shape.audio_channels, rng);
      const auto pred = model.forward(t, interpolate<float>(eps_v, ex.target.video, t),
                                      interpolate<float>(eps_a, ex.target.audio, t), ex.source.video,
                                      ex.source.audio, ex.tokens, {});
      sum += fm_loss_value(pred.video, pred.audio, velocity_target<float>(eps_v, ex.target.video),
                           velocity_target<float>(eps_a, ex.target.audio), cfg);
      ++n;
    }
  }
  return sum / n;
}

// ---- gradient check ---------------------------------------------------------

double sample_loss(EditorModel<double>& model, const GradSample& s, double lambda_v, double lambda_a) {
  const MatD zv = interpolate<double>(s.noise_v, s.target_v, s.t);
  const MatD za = interpolate<double>(s.noise_a, s.target_a, s.t);
  const MatD uv = velocity_target<double>(s.noise_v, s.target_v);
  const MatD ua = velocity_target<double>(s.noise_a, s.target_a);
  const auto pred = model.forward(s.t, zv, za, s.source_v, s.source_a, s.tokens, s.flags);
  return fm_loss<double>(s.flags.run_video ? &pred.video : nullptr, s.flags.run_audio ? &pred.audio : nullptr,
                         s.flags.run_video ? &uv : nullptr, s.flags.run_audio ? &ua : nullptr, lambda_v, lambda_a)
      .total;
}

GradCheckReport grad_check(EditorModel<double>& model, const GradSample& s, double lambda_v, double lambda_a,
                           int n_params, double h, std::uint64_t seed) {
  model.params().zero_grad();
  const MatD zv = interpolate<double>(s.noise_v, s.target_v, s.t);
  const MatD za = interpolate<double>(s.noise_a, s.target_a, s.t);
  const MatD uv = velocity_target<double>(s.noise_v, s.target_v);
  const MatD ua = velocity_target<double>(s.noise_a, s.target_a);
  backbone::ForwardCache<double> cache;
  const auto pred = model.forward(s.t, zv, za, s.source_v, s.source_a, s.tokens, s.flags, &cache);
  const auto parts = fm_loss<double>(s.flags.run_video ? &pred.video : nullptr,
                                     s.flags.run_audio ? &pred.audio : nullptr, s.flags.run_video ? &uv : nullptr,
                                     s.flags.run_audio ? &ua : nullptr, lambda_v, lambda_a, true);
  model.backward(cache, s.flags.run_video ? &parts.d_video : nullptr, s.flags.run_audio ? &parts.d_audio : nullptr);

  std::vector<nn::Param<double>*> params;
  for (auto& p : model.params()) params.push_back(&p);
  Rng rng(seed);
  GradCheckReport rep;
  for (int k = 0; k < n_params; ++k) {
    nn::Param<double>& p = *params[std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng)];
    const auto idx = std::uniform_int_distribution<Eigen::Index>(0, p.value.size() - 1)(rng);
    double& w = p.value.data()[idx];
    const double w0 = w;
    w = w0 + h;
    const double lp = sample_loss(model, s, lambda_v, lambda_a);
    w = w0 - h;
    const double lm = sample_loss(model, s, lambda_v, lambda_a);
    w = w0;
    const double numeric = (lp - lm) / (2.0 * h);
    const double analytic = p.grad.data()[idx];
    const double abs_err = std::abs(numeric - analytic);
    // Relative to the larger magnitude; below 1e-6 the error counts as absolute.
    const double rel = abs_err / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_param = p.name;
    }
    ++rep.checked;
  }
  return rep;
}

template MatF interpolate<float>(const MatF&, const MatF&, double);
template MatD interpolate<double>(const MatD&, const MatD&, double);
template MatF velocity_target<float>(const MatF&, const MatF&);
template MatD velocity_target<double>(const MatD&, const MatD&);
template double mse<float>(const MatF&, const MatF&);
template double mse<double>(const MatD&, const MatD&);
template LossParts<float> fm_loss<float>(const MatF*, const MatF*, const MatF*, const MatF*, double, double, bool);
template LossParts<double> fm_loss<double>(const MatD*, const MatD*, const MatD*, const MatD*, double, double,
                                           bool);

}  // namespace av2av::flowtrain
