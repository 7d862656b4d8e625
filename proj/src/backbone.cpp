#include "av2av/backbone.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace av2av::backbone {

namespace {

std::string stream_prefix(Stream s) { return s == Stream::video ? "video" : "audio"; }
nn::Branch stream_branch(Stream s) { return s == Stream::video ? nn::Branch::video : nn::Branch::audio; }

template <typename S>
Modulation<S> mod_chunk(const RowVec<S>& mod, int index, int d) {
  return {mod.segment(static_cast<Eigen::Index>(3 * index) * d, d),
          mod.segment(static_cast<Eigen::Index>(3 * index + 1) * d, d),
          mod.segment(static_cast<Eigen::Index>(3 * index + 2) * d, d)};
}

// Backward of y = LN(x) * (1 + scale) + shift. Writes d(shift), d(scale) into
// dmod at the chunk's slots and returns dx.
template <typename S>
Mat<S> modulated_norm_backward(const Mat<S>& dy, const nn::NormCache<S>& norm, const RowVec<S>& scale,
                               RowVec<S>& dmod, Eigen::Index shift_at, Eigen::Index scale_at) {
  const Eigen::Index d = dy.cols();
  dmod.segment(shift_at, d) += dy.colwise().sum();
  dmod.segment(scale_at, d) += (dy.array() * norm.y.array()).colwise().sum().matrix();
  Mat<S> dnorm = dy;
  dnorm.array().rowwise() *= (scale.array() + S(1));
  return nn::layer_norm_backward<S>(dnorm, norm);
}

template <typename S>
Mat<S> gated_residual(const Mat<S>& h, const RowVec<S>& gate, const Mat<S>& f) {
  Mat<S> out = f;
  out.array().rowwise() *= gate.array();
  out += h;
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"depth", c.depth},
                     {"width", c.width},
                     {"heads", c.heads},
                     {"mlp_ratio", c.mlp_ratio},
                     {"vocab_size", c.vocab_size},
                     {"max_instruction_len", c.max_instruction_len},
                     {"time_dim", c.time_dim},
                     {"injection", c.injection == InstructionInjection::siga ? "siga" : "cross_attention"},
                     {"source_concat", c.source_concat},
                     {"init_seed", c.init_seed},
                     {"video_center", c.video_center},
                     {"video_gain", c.video_gain},
                     {"audio_gain", c.audio_gain}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.depth = j.at("depth").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_instruction_len = j.at("max_instruction_len").get<int>();
  c.time_dim = j.at("time_dim").get<int>();
  const auto inj = j.at("injection").get<std::string>();
  if (inj == "siga") c.injection = InstructionInjection::siga;
  else if (inj == "cross_attention") c.injection = InstructionInjection::cross_attention;
  else throw ConfigError("model.injection must be 'siga' or 'cross_attention'");
  c.source_concat = j.at("source_concat").get<bool>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  c.video_center = j.at("video_center").get<double>();
  c.video_gain = j.at("video_gain").get<double>();
  c.audio_gain = j.at("audio_gain").get<double>();
  if (!(c.video_gain > 0.0) || !(c.audio_gain > 0.0)) throw ConfigError("model gains must be positive");
}

codecs::LatentBundle encode_for_model(const codecs::Codec& codec, const MediaClip& clip, const ModelConfig& cfg,
                                      codecs::Role role) {
  MediaClip n = clip;
  for (auto& v : n.video) v = static_cast<float>((v - cfg.video_center) * cfg.video_gain);
  for (auto& v : n.audio) v = static_cast<float>(v * cfg.audio_gain);
  return codec.encode(n, role);
}

MediaClip decode_from_model(const codecs::Codec& codec, const codecs::LatentBundle& latents,
                            const ModelConfig& cfg) {
  MediaClip clip = codec.decode(latents);
  for (auto& v : clip.video) v = static_cast<float>(v / cfg.video_gain + cfg.video_center);
  for (auto& v : clip.audio) v = static_cast<float>(v / cfg.audio_gain);
  return clip;
}

template <typename S>
Mat<S> concat_source(const Mat<S>& noisy, const Mat<S>& source) {
  if (noisy.rows() != source.rows() || noisy.cols() != source.cols())
    throw ShapeError("concat_source: noisy and source latents differ in shape");
  Mat<S> x(noisy.rows(), noisy.cols() + source.cols());
  x << noisy, source;
  return x;
}

template <typename S>
std::pair<Mat<S>, Mat<S>> split_channels(const Mat<S>& x, Eigen::Index first) {
  if (first < 0 || first > x.cols()) throw ShapeError("split_channels: split point out of range");
  return {x.leftCols(first), x.rightCols(x.cols() - first)};
}

template <typename S>
EditorModel<S>::EditorModel(const ModelConfig& cfg, const codecs::CodecSpec& codec,
                            const codecs::LatentShape& shape)
    : cfg_(cfg), codec_(codec), shape_(shape) {
  if (cfg.width % cfg.heads != 0) throw ConfigError("model width must be divisible by heads");
  if (cfg.depth < 0 || cfg.width <= 0) throw ConfigError("model depth/width must be positive");
  Rng rng(cfg.init_seed);
  instr_table_ = &store_.add("instr.table", nn::Branch::shared, cfg.vocab_size, cfg.width);
  instr_table_->value = randn<S>(cfg.vocab_size, cfg.width, rng, 0.5);
  instr_pos_ = &store_.add("instr.pos", nn::Branch::shared, cfg.max_instruction_len, cfg.width);
  instr_pos_->value = randn<S>(cfg.max_instruction_len, cfg.width, rng, 0.02);
  build_stream(Stream::video, shape.video_tokens(), shape.video_channels, rng);
  build_stream(Stream::audio, shape.audio_tokens, shape.audio_channels, rng);
}

template <typename S>
void EditorModel<S>::build_stream(Stream s, int tokens, int channels, Rng& rng) {
  const int d = cfg_.width;
  const std::string p = stream_prefix(s);
  const nn::Branch br = stream_branch(s);
  StreamParams<S>& sp = streams_[static_cast<int>(s)];
  sp.tokens = tokens;
  sp.channels = channels;
  sp.in_proj = nn::Linear<S>::make(store_, p + ".in_proj", br, 2 * channels, d, true, rng);
  sp.pos = &store_.add(p + ".pos", br, tokens, d);
  sp.pos->value = randn<S>(tokens, d, rng, 0.02);
  sp.t_fc1 = nn::Linear<S>::make(store_, p + ".t_fc1", br, cfg_.time_dim, d, true, rng,
                                 nn::Init::normal, 0.02);
  sp.t_fc2 = nn::Linear<S>::make(store_, p + ".t_fc2", br, d, d, true, rng, nn::Init::normal, 0.02);
  for (int b = 0; b < cfg_.depth; ++b) {
    const std::string bp = p + ".block" + std::to_string(b);
    BlockParams<S> blk;
    blk.mod = nn::Linear<S>::make(store_, bp + ".mod", br, d, 9 * d, true, rng, nn::Init::normal, 0.02);
    blk.self_attn = nn::AttentionSite<S>::make(store_, bp + ".self", br, d, d, d, cfg_.heads, true, rng);
    if (cfg_.injection == InstructionInjection::siga)
      blk.siga = siga::SigaSite<S>::make(store_, bp + ".siga", br, d, cfg_.heads, rng);
    else
      blk.instr_xattn =
          nn::AttentionSite<S>::make(store_, bp + ".instr_xattn", br, d, d, d, cfg_.heads, true, rng);
    blk.cross = nn::AttentionSite<S>::make(store_, bp + ".cross", br, d, d, d, cfg_.heads, true, rng);
    // Zero output projection: enabling cross-modal attention starts as the identity.
    blk.cross.wo.weight->value.setZero();
    blk.ff1 = nn::Linear<S>::make(store_, bp + ".ff1", br, d, cfg_.mlp_ratio * d, true, rng);
    blk.ff2 = nn::Linear<S>::make(store_, bp + ".ff2", br, cfg_.mlp_ratio * d, d, true, rng);
    sp.blocks.push_back(blk);
  }
  sp.final_mod = nn::Linear<S>::make(store_, p + ".final_mod", br, d, 2 * d, true, rng,
                                     nn::Init::normal, 0.02);
  sp.head = nn::Linear<S>::make(store_, p + ".head", br, d, channels, true, rng, nn::Init::normal, 0.02);
}

template <typename S>
Mat<S> EditorModel<S>::embed_instruction(const std::vector<int>& tokens) const {
  if (static_cast<int>(tokens.size()) > cfg_.max_instruction_len)
    throw ShapeError("instruction longer than max_instruction_len");
  Mat<S> f(static_cast<Eigen::Index>(tokens.size()), cfg_.width);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= cfg_.vocab_size)
      throw ShapeError("instruction token " + std::to_string(tokens[i]) + " outside vocabulary");
    f.row(static_cast<Eigen::Index>(i)) =
        instr_table_->value.row(tokens[i]) + instr_pos_->value.row(static_cast<Eigen::Index>(i));
  }
  return f;
}

template <typename S>
void EditorModel<S>::stream_prologue(Stream s, double t, const Mat<S>& noisy, const Mat<S>& source,
                                     StreamCache<S>& c) const {
  const StreamParams<S>& sp = streams_[static_cast<int>(s)];
  if (noisy.rows() != sp.tokens || noisy.cols() != sp.channels)
    throw ShapeError(stream_prefix(s) + " latent shape does not match the codec");
  c.active = true;
  c.noisy = noisy;
  c.source = cfg_.source_concat ? source : Mat<S>::Zero(source.rows(), source.cols());
  c.x_in = concat_source<S>(c.noisy, c.source);
  // Source features for SIGA: the source half of the input projection.
  c.f_x.noalias() = c.source * sp.in_proj.weight->value.bottomRows(sp.channels);
  c.f_x.rowwise() += sp.in_proj.bias->value.row(0);
  c.f_x += sp.pos->value;
  c.t_emb = nn::timestep_embedding<S>(t, cfg_.time_dim);
  c.t1 = sp.t_fc1.forward(c.t_emb);
  c.temb = sp.t_fc2.forward(nn::silu<S>(c.t1));
  c.cond = nn::silu<S>(c.temb);
  c.blocks.assign(sp.blocks.size(), BlockCache<S>{});
}

template <typename S>
void EditorModel<S>::block_pre_cross(Stream s, int b, const Mat<S>& f_x, const Mat<S>& f_c,
                                     StreamCache<S>& sc, Mat<S>& h, double* gate_mean) const {
  const int d = cfg_.width;
  const BlockParams<S>& bp = streams_[static_cast<int>(s)].blocks[static_cast<std::size_t>(b)];
  BlockCache<S>& c = sc.blocks[static_cast<std::size_t>(b)];
  c.mod = bp.mod.forward(sc.cond);
  const auto m1 = mod_chunk<S>(c.mod, 0, d);
  const auto m2 = mod_chunk<S>(c.mod, 1, d);

  c.h0 = h;
  c.a_in = nn::modulate<S>(nn::layer_norm<S>(h, &c.n1), m1.shift, m1.scale);
  c.sa = bp.self_attn.forward(c.a_in, c.a_in, &c.self);
  c.h1 = gated_residual<S>(c.h0, m1.gate, c.sa);

  c.s_in = nn::modulate<S>(nn::layer_norm<S>(c.h1, &c.n2), m2.shift, m2.scale);
  if (cfg_.injection == InstructionInjection::siga) {
    siga::GateMap<S> gm;
    c.inj = bp.siga.forward(c.s_in, f_x, f_c, &c.siga, gate_mean != nullptr ? &gm : nullptr);
    if (gate_mean != nullptr) *gate_mean = static_cast<double>(gm.g.mean());
  } else {
    c.inj = bp.instr_xattn.forward(c.s_in, f_c, &c.ixattn);
  }
  c.h2 = gated_residual<S>(c.h1, m2.gate, c.inj);
  nn::layer_norm<S>(c.h2, &c.n3);
  h = c.h2;
}

template <typename S>
void EditorModel<S>::block_post_cross(Stream s, int b, StreamCache<S>& sc, Mat<S>& h) const {
  const int d = cfg_.width;
  const BlockParams<S>& bp = streams_[static_cast<int>(s)].blocks[static_cast<std::size_t>(b)];
  BlockCache<S>& c = sc.blocks[static_cast<std::size_t>(b)];
  const auto m3 = mod_chunk<S>(c.mod, 2, d);
  c.h3 = h;
  c.f_in = nn::modulate<S>(nn::layer_norm<S>(c.h3, &c.n4), m3.shift, m3.scale);
  c.ff_pre = bp.ff1.forward(c.f_in);
  c.ff_act = nn::gelu<S>(c.ff_pre);
  c.ff = bp.ff2.forward(c.ff_act);
  h = gated_residual<S>(c.h3, m3.gate, c.ff);
  if (!h.allFinite())
    throw NumericError("non-finite activations in " + stream_prefix(s) + " block " + std::to_string(b));
}

template <typename S>
Mat<S> EditorModel<S>::stream_epilogue(Stream s, const Mat<S>& h, StreamCache<S>& c) const {
  const int d = cfg_.width;
  const StreamParams<S>& sp = streams_[static_cast<int>(s)];
  c.h_final = h;
  c.fmod = sp.final_mod.forward(c.cond);
  const RowVec<S> shift = c.fmod.segment(0, d);
  const RowVec<S> scale = c.fmod.segment(d, d);
  c.f_out = nn::modulate<S>(nn::layer_norm<S>(h, &c.nf), shift, scale);
  Mat<S> out = sp.head.forward(c.f_out);
  if (!out.allFinite()) throw NumericError("non-finite " + stream_prefix(s) + " output head");
  return out;
}

template <typename S>
Prediction<S> EditorModel<S>::forward(double t, const Mat<S>& noisy_video, const Mat<S>& noisy_audio,
                                      const Mat<S>& source_video, const Mat<S>& source_audio,
                                      const std::vector<int>& tokens, ForwardFlags flags,
                                      ForwardCache<S>* cache, GateTelemetry* telemetry) const {
  if ((!flags.run_video || !flags.run_audio) && !flags.bypass_cross_modal)
    throw ConfigError("a stream may only be skipped with cross-modal attention bypassed");
  ForwardCache<S> local;
  ForwardCache<S>& fc = cache != nullptr ? *cache : local;
  fc.tokens = tokens;
  fc.flags = flags;
  fc.f_c = embed_instruction(tokens);
  fc.streams = {};
  const bool run[2] = {flags.run_video, flags.run_audio};
  const Mat<S>* noisy[2] = {&noisy_video, &noisy_audio};
  const Mat<S>* source[2] = {&source_video, &source_audio};
  Mat<S> h[2];
  for (int s = 0; s < 2; ++s) {
    if (!run[s]) continue;
    const auto st = static_cast<Stream>(s);
    StreamCache<S>& sc = fc.streams[static_cast<std::size_t>(s)];
    stream_prologue(st, t, *noisy[s], *source[s], sc);
    h[s] = streams_[static_cast<std::size_t>(s)].in_proj.forward(sc.x_in);
    h[s] += streams_[static_cast<std::size_t>(s)].pos->value;
  }
  if (telemetry != nullptr) {
    telemetry->video.assign(static_cast<std::size_t>(cfg_.depth), 0.0);
    telemetry->audio.assign(static_cast<std::size_t>(cfg_.depth), 0.0);
  }
  for (int b = 0; b < cfg_.depth; ++b) {
    for (int s = 0; s < 2; ++s) {
      if (!run[s]) continue;
      double* gm = nullptr;
      if (telemetry != nullptr && cfg_.injection == InstructionInjection::siga)
        gm = s == 0 ? &telemetry->video[static_cast<std::size_t>(b)]
                    : &telemetry->audio[static_cast<std::size_t>(b)];
      auto& sc = fc.streams[static_cast<std::size_t>(s)];
      block_pre_cross(static_cast<Stream>(s), b, sc.f_x, fc.f_c, sc, h[s], gm);
    }
    if (!flags.bypass_cross_modal) {
      auto& cv = fc.streams[0].blocks[static_cast<std::size_t>(b)];
      auto& ca = fc.streams[1].blocks[static_cast<std::size_t>(b)];
      const Mat<S> dv = streams_[0].blocks[static_cast<std::size_t>(b)].cross.forward(cv.n3.y, ca.n3.y, &cv.cross);
      const Mat<S> da = streams_[1].blocks[static_cast<std::size_t>(b)].cross.forward(ca.n3.y, cv.n3.y, &ca.cross);
      cv.crossed = ca.crossed = true;
      h[0] += dv;
      h[1] += da;
    }
    for (int s = 0; s < 2; ++s)
      if (run[s]) block_post_cross(static_cast<Stream>(s), b, fc.streams[static_cast<std::size_t>(s)], h[s]);
  }
  Prediction<S> out;
  if (run[0]) out.video = stream_epilogue(Stream::video, h[0], fc.streams[0]);
  if (run[1]) out.audio = stream_epilogue(Stream::audio, h[1], fc.streams[1]);
  return out;
}

template <typename S>
InputGrads<S> EditorModel<S>::backward(const ForwardCache<S>& fc, const Mat<S>* d_video,
                                       const Mat<S>* d_audio) {
  const int d = cfg_.width;
  const Mat<S>* dpred[2] = {d_video, d_audio};
  bool active[2];
  Mat<S> dh[2];
  Mat<S> dfx[2];
  RowVec<S> dcond[2];
  Mat<S> dfc = Mat<S>::Zero(fc.f_c.rows(), d);
  for (int s = 0; s < 2; ++s) {
    const auto& sc = fc.streams[static_cast<std::size_t>(s)];
    active[s] = dpred[s] != nullptr && sc.active;
    if (dpred[s] != nullptr && !sc.active) throw ConfigError("backward requested for a stream that did not run");
    if (!active[s]) continue;
    StreamParams<S>& sp = streams_[static_cast<std::size_t>(s)];
    dcond[s] = RowVec<S>::Zero(d);
    RowVec<S> dfmod = RowVec<S>::Zero(2 * d);
    const Mat<S> df_out = sp.head.backward(sc.f_out, *dpred[s]);
    const RowVec<S> scale = sc.fmod.segment(d, d);
    dh[s] = modulated_norm_backward<S>(df_out, sc.nf, scale, dfmod, 0, d);
    dcond[s] += sp.final_mod.backward(sc.cond, dfmod);
    dfx[s] = Mat<S>::Zero(sc.f_x.rows(), d);
  }
  // If only one stream's loss is live but cross-modal attention ran, the other
  // stream still receives gradient through the cross sites.
  if (!fc.flags.bypass_cross_modal) {
    for (int s = 0; s < 2; ++s) {
      if (!active[s] && fc.streams[static_cast<std::size_t>(s)].active) {
        active[s] = true;
        const auto& sc = fc.streams[static_cast<std::size_t>(s)];
        dh[s] = Mat<S>::Zero(sc.h_final.rows(), d);
        dcond[s] = RowVec<S>::Zero(d);
        dfx[s] = Mat<S>::Zero(sc.f_x.rows(), d);
      }
    }
  }

  for (int b = cfg_.depth - 1; b >= 0; --b) {
    const auto bi = static_cast<std::size_t>(b);
    RowVec<S> dmod[2];
    Mat<S> dq3[2];
    for (int s = 0; s < 2; ++s) {
      if (!active[s]) continue;
      const BlockParams<S>& bp = streams_[static_cast<std::size_t>(s)].blocks[bi];
      const BlockCache<S>& c = fc.streams[static_cast<std::size_t>(s)].blocks[bi];
      dmod[s] = RowVec<S>::Zero(9 * d);
      const auto m3 = mod_chunk<S>(c.mod, 2, d);
      // feed-forward
      dmod[s].segment(8 * d, d) += (dh[s].array() * c.ff.array()).colwise().sum().matrix();
      Mat<S> dff = dh[s];
      dff.array().rowwise() *= m3.gate.array();
      const Mat<S> dact = bp.ff2.backward(c.ff_act, dff);
      const Mat<S> dpre = nn::gelu_backward<S>(c.ff_pre, dact);
      const Mat<S> dfin = bp.ff1.backward(c.f_in, dpre);
      dh[s] += modulated_norm_backward<S>(dfin, c.n4, m3.scale, dmod[s], 6 * d, 7 * d);
      dq3[s] = Mat<S>::Zero(dh[s].rows(), d);
    }
    // cross-modal
    if (!fc.flags.bypass_cross_modal) {
      for (int s = 0; s < 2; ++s) {
        const int o = 1 - s;
        const BlockParams<S>& bp = streams_[static_cast<std::size_t>(s)].blocks[bi];
        const BlockCache<S>& c = fc.streams[static_cast<std::size_t>(s)].blocks[bi];
        const auto g = bp.cross.backward(dh[s], c.cross);
        dq3[s] += g.dx;
        dq3[o] += g.dy;
      }
      for (int s = 0; s < 2; ++s)
        dh[s] += nn::layer_norm_backward<S>(dq3[s], fc.streams[static_cast<std::size_t>(s)].blocks[bi].n3);
    }
    for (int s = 0; s < 2; ++s) {
      if (!active[s]) continue;
      BlockParams<S>& bp = streams_[static_cast<std::size_t>(s)].blocks[bi];
      const BlockCache<S>& c = fc.streams[static_cast<std::size_t>(s)].blocks[bi];
      const auto m1 = mod_chunk<S>(c.mod, 0, d);
      const auto m2 = mod_chunk<S>(c.mod, 1, d);
      // instruction injection
      dmod[s].segment(5 * d, d) += (dh[s].array() * c.inj.array()).colwise().sum().matrix();
      Mat<S> dinj = dh[s];
      dinj.array().rowwise() *= m2.gate.array();
      Mat<S> ds_in;
      if (cfg_.injection == InstructionInjection::siga) {
        const auto g = bp.siga.backward(dinj, c.siga);
        ds_in = g.df_h;
        dfx[s] += g.df_x;
        if (g.df_c.rows() > 0) dfc += g.df_c;
      } else {
        const auto g = bp.instr_xattn.backward(dinj, c.ixattn);
        ds_in = g.dx;
        if (g.dy.rows() > 0) dfc += g.dy;
      }
      dh[s] += modulated_norm_backward<S>(ds_in, c.n2, m2.scale, dmod[s], 3 * d, 4 * d);
      // self-attention
      dmod[s].segment(2 * d, d) += (dh[s].array() * c.sa.array()).colwise().sum().matrix();
      Mat<S> dsa = dh[s];
      dsa.array().rowwise() *= m1.gate.array();
      const auto g = bp.self_attn.backward(dsa, c.self);
      const Mat<S> da_in = g.dx + g.dy;
      dh[s] += modulated_norm_backward<S>(da_in, c.n1, m1.scale, dmod[s], 0, d);
      dcond[s] += bp.mod.backward(fc.streams[static_cast<std::size_t>(s)].cond, dmod[s]);
    }
  }

  InputGrads<S> in;
  for (int s = 0; s < 2; ++s) {
    if (!active[s]) continue;
    StreamParams<S>& sp = streams_[static_cast<std::size_t>(s)];
    const auto& sc = fc.streams[static_cast<std::size_t>(s)];
    // time embedding MLP
    const Mat<S> dtemb = nn::silu_backward<S>(sc.temb, dcond[s]);
    const Mat<S> dt1 = sp.t_fc2.backward(nn::silu<S>(sc.t1), dtemb);
    sp.t_fc1.backward_params(sc.t_emb, nn::silu_backward<S>(sc.t1, dt1));
    // input projection and positions
    const Mat<S> dx_in = sp.in_proj.backward(sc.x_in, dh[s]);
    sp.pos->grad += dh[s];
    // source-feature path
    sp.in_proj.weight->grad.bottomRows(sp.channels).noalias() += sc.source.transpose() * dfx[s];
    sp.in_proj.bias->grad.row(0) += dfx[s].colwise().sum();
    sp.pos->grad += dfx[s];
    Mat<S> dsrc = dx_in.rightCols(sp.channels);
    dsrc.noalias() += dfx[s] * sp.in_proj.weight->value.bottomRows(sp.channels).transpose();
    if (!cfg_.source_concat) dsrc.setZero();
    if (s == 0) {
      in.noisy_video = dx_in.leftCols(sp.channels);
      in.source_video = std::move(dsrc);
    } else {
      in.noisy_audio = dx_in.leftCols(sp.channels);
      in.source_audio = std::move(dsrc);
    }
  }
  for (std::size_t i = 0; i < fc.tokens.size(); ++i) {
    instr_table_->grad.row(fc.tokens[i]) += dfc.row(static_cast<Eigen::Index>(i));
    instr_pos_->grad.row(static_cast<Eigen::Index>(i)) += dfc.row(static_cast<Eigen::Index>(i));
  }
  return in;
}

template Mat<float> concat_source<float>(const Mat<float>&, const Mat<float>&);
template Mat<double> concat_source<double>(const Mat<double>&, const Mat<double>&);
template std::pair<Mat<float>, Mat<float>> split_channels<float>(const Mat<float>&, Eigen::Index);
template std::pair<Mat<double>, Mat<double>> split_channels<double>(const Mat<double>&, Eigen::Index);
template class EditorModel<float>;
template class EditorModel<double>;

}  // namespace av2av::backbone
