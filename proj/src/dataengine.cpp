#include "av2av/dataengine.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

#include "av2av/error.hpp"
#include "av2av/instruction.hpp"

namespace av2av::dataengine {

namespace {

constexpr int kMods = 4;  // self, instruction, audio, ffn

template <typename S>
struct Chunk {
  RowVec<S> shift, scale, gate;
};

template <typename S>
Chunk<S> chunk(const RowVec<S>& mod, int k, int d) {
  return {mod.segment(static_cast<Eigen::Index>(3 * k) * d, d), mod.segment(static_cast<Eigen::Index>(3 * k + 1) * d, d),
          mod.segment(static_cast<Eigen::Index>(3 * k + 2) * d, d)};
}

template <typename S>
Mat<S> gated(const Mat<S>& h, const RowVec<S>& gate, const Mat<S>& f) {
  Mat<S> out = f;
  out.array().rowwise() *= gate.array();
  return out + h;
}

template <typename S>
Mat<S> mod_norm_backward(const Mat<S>& dy, const nn::NormCache<S>& norm, const RowVec<S>& scale, RowVec<S>& dmod,
                         Eigen::Index shift_at, Eigen::Index scale_at) {
  const Eigen::Index d = dy.cols();
  dmod.segment(shift_at, d) += dy.colwise().sum();
  dmod.segment(scale_at, d) += (dy.array() * norm.y.array()).colwise().sum().matrix();
  Mat<S> dn = dy;
  dn.array().rowwise() *= (scale.array() + S(1));
  return nn::layer_norm_backward<S>(dn, norm);
}

void check_groups(Eigen::Index tokens, Eigen::Index audio, int per_frame, int patch_t) {
  if (per_frame < 1 || patch_t < 1 || tokens % per_frame != 0)
    throw ShapeError("framewise attention: tokens do not split into latent frames");
  if (audio != (tokens / per_frame) * patch_t)
    throw ShapeError("framewise attention: audio frames do not match the latent temporal axis");
}

}  // namespace

// ---- masks ------------------------------------------------------------------

EntityMask EntityMask::zeros(const ClipConfig& clip) {
  EntityMask m;
  m.frames = clip.frames;
  m.height = clip.height;
  m.width = clip.width;
  m.m.assign(static_cast<std::size_t>(clip.frames) * clip.height * clip.width, 0);
  return m;
}

std::size_t EntityMask::count() const { return static_cast<std::size_t>(std::count(m.begin(), m.end(), 1)); }

EntityMask sprite_mask(const synthworld::Sprite& s, const ClipConfig& clip) {
  EntityMask m = EntityMask::zeros(clip);
  for (int t = 0; t < clip.frames; ++t) {
    const auto b = synthworld::sprite_box(s, t, clip);
    for (int y = b.y0; y < b.y1; ++y)
      for (int x = b.x0; x < b.x1; ++x) m.at(t, y, x) = 1;
  }
  return m;
}

template <typename S>
Mat<S> downsample_mask(const EntityMask& mask, const codecs::CodecSpec& spec, const codecs::LatentShape& shape) {
  if (mask.frames != shape.t * spec.patch_t || mask.height != shape.h * spec.patch_h ||
      mask.width != shape.w * spec.patch_w)
    throw ShapeError("downsample_mask: mask dims are not the latent grid times the patch size");
  Mat<S> out = Mat<S>::Zero(shape.video_tokens(), 1);
  for (int t = 0; t < mask.frames; ++t)
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x)
        if (mask.at(t, y, x) != 0)
          out((t / spec.patch_t * shape.h + y / spec.patch_h) * shape.w + x / spec.patch_w, 0) = S(1);
  return out;
}

template <typename S>
Mat<S> concat_mask(const Mat<S>& z, const Mat<S>& mask_latent) {
  if (mask_latent.rows() != z.rows() || mask_latent.cols() != 1)
    throw ShapeError("concat_mask: mask latent must be one channel per latent token");
  Mat<S> out(z.rows(), z.cols() + 1);
  out << z, mask_latent;
  return out;
}

MediaClip mask_out(const MediaClip& clip, const EntityMask& mask) {
  if (mask.frames != clip.config.frames || mask.height != clip.config.height || mask.width != clip.config.width)
    throw ShapeError("mask does not match the clip");
  MediaClip out = clip;
  for (int t = 0; t < mask.frames; ++t)
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x)
        if (mask.at(t, y, x) != 0)
          for (int c = 0; c < 3; ++c) out.pixel(t, y, x, c) = 0.0F;
  return out;
}

// ---- audio conditioning -----------------------------------------------------

template <typename S>
Mat<S> aggregate_audio(const std::vector<Mat<S>>& layers, const RowVec<S>& alpha) {
  if (layers.empty() || static_cast<Eigen::Index>(layers.size()) != alpha.size())
    throw ShapeError("aggregate_audio: one weight per layer required");
  Mat<S> out = alpha(0) * layers[0];
  for (std::size_t l = 1; l < layers.size(); ++l) {
    if (layers[l].rows() != out.rows() || layers[l].cols() != out.cols())
      throw ShapeError("aggregate_audio: layer shapes differ");
    out += alpha(static_cast<Eigen::Index>(l)) * layers[l];
  }
  return out;
}

template <typename S>
Mat<S> framewise_attention(const nn::AttentionSite<S>& site, const Mat<S>& tokens, const Mat<S>& audio,
                           int tokens_per_frame, int patch_t, FramewiseCache<S>* cache) {
  check_groups(tokens.rows(), audio.rows(), tokens_per_frame, patch_t);
  const Eigen::Index groups = tokens.rows() / tokens_per_frame;
  Mat<S> out(tokens.rows(), site.wo.out_features());
  if (cache != nullptr) cache->groups.assign(static_cast<std::size_t>(groups), {});
  for (Eigen::Index g = 0; g < groups; ++g) {
    auto* c = cache != nullptr ? &cache->groups[static_cast<std::size_t>(g)] : nullptr;
    out.middleRows(g * tokens_per_frame, tokens_per_frame) =
        site.forward(tokens.middleRows(g * tokens_per_frame, tokens_per_frame),
                     audio.middleRows(g * patch_t, patch_t), c);
  }
  return out;
}

template <typename S>
FramewiseGrads<S> framewise_attention_backward(const nn::AttentionSite<S>& site, const Mat<S>& dout,
                                               const FramewiseCache<S>& cache, int tokens_per_frame, int patch_t,
                                               Eigen::Index audio_rows) {
  FramewiseGrads<S> g;
  g.dtokens.resize(dout.rows(), site.wq.in_features());
  g.daudio = Mat<S>::Zero(audio_rows, site.wk.in_features());
  for (std::size_t k = 0; k < cache.groups.size(); ++k) {
    const auto gi = static_cast<Eigen::Index>(k);
    const auto r = site.backward(dout.middleRows(gi * tokens_per_frame, tokens_per_frame), cache.groups[k]);
    g.dtokens.middleRows(gi * tokens_per_frame, tokens_per_frame) = r.dx;
    g.daudio.middleRows(gi * patch_t, patch_t) += r.dy;
  }
  return g;
}

template <typename S>
Mat<S> framewise_cross_attention(const nn::AttentionSite<S>& site, const Mat<S>& tokens, const Mat<S>& audio,
                                 int tokens_per_frame, int patch_t) {
  return tokens + framewise_attention<S>(site, tokens, audio, tokens_per_frame, patch_t, nullptr);
}

template <typename S>
Mat<S> prepend_reference(const Mat<S>& ref, const Mat<S>& tokens) {
  if (ref.rows() == 0) return tokens;
  if (ref.cols() != tokens.cols()) throw ShapeError("prepend_reference: width mismatch");
  Mat<S> out(ref.rows() + tokens.rows(), tokens.cols());
  out << ref, tokens;
  return out;
}

template <typename S>
Mat<S> trim_reference(const Mat<S>& seq, Eigen::Index n_ref) {
  if (n_ref < 0 || n_ref > seq.rows()) throw ShapeError("trim_reference: count out of range");
  return seq.bottomRows(seq.rows() - n_ref);
}

// ---- config -----------------------------------------------------------------

void to_json(nlohmann::json& j, const EngineConfig& c) {
  j = nlohmann::json{{"depth", c.depth},
                     {"width", c.width},
                     {"heads", c.heads},
                     {"mlp_ratio", c.mlp_ratio},
                     {"time_dim", c.time_dim},
                     {"vocab_size", c.vocab_size},
                     {"max_instruction_len", c.max_instruction_len},
                     {"audio_dim", c.audio_dim},
                     {"audio_seed", c.audio_seed},
                     {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, EngineConfig& c) {
  c.depth = j.at("depth").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.time_dim = j.at("time_dim").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_instruction_len = j.at("max_instruction_len").get<int>();
  c.audio_dim = j.at("audio_dim").get<int>();
  c.audio_seed = j.at("audio_seed").get<std::uint64_t>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const EngineTrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"grad_clip", c.grad_clip},
                     {"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"reference_dropout", c.reference_dropout},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EngineTrainConfig& c) {
  c.lr = j.at("lr").get<double>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.steps = j.at("steps").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.reference_dropout = j.at("reference_dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  if (c.reference_dropout < 0.0 || c.reference_dropout > 1.0)
    throw ConfigError("engine reference_dropout must lie in [0,1]");
}

// ---- model ------------------------------------------------------------------

template <typename S>
EngineModel<S>::EngineModel(const EngineConfig& cfg, const codecs::CodecSpec& codec, const codecs::LatentShape& shape)
    : cfg_(cfg), codec_(codec), shape_(shape) {
  if (cfg.width % cfg.heads != 0) throw ConfigError("engine width must be divisible by heads");
  const int d = cfg.width;
  const int c = shape.video_channels;
  const auto br = nn::Branch::engine;
  Rng rng(cfg.init_seed);
  instr_table_ = &store_.add("engine.instr.table", br, cfg.vocab_size, d);
  instr_table_->value = randn<S>(cfg.vocab_size, d, rng, 0.5);
  instr_pos_ = &store_.add("engine.instr.pos", br, cfg.max_instruction_len, d);
  instr_pos_->value = randn<S>(cfg.max_instruction_len, d, rng, 0.02);
  in_proj_ = nn::Linear<S>::make(store_, "engine.in_proj", br, 2 * c + 1, d, true, rng);
  pos_ = &store_.add("engine.pos", br, shape.video_tokens(), d);
  pos_->value = randn<S>(shape.video_tokens(), d, rng, 0.02);
  ref_proj_ = nn::Linear<S>::make(store_, "engine.ref_proj", br, c, d, true, rng);
  ref_pos_ = &store_.add("engine.ref_pos", br, shape.h * shape.w, d);
  ref_pos_->value = randn<S>(shape.h * shape.w, d, rng, 0.02);
  alpha_ = &store_.add("engine.alpha", br, 1, AudioEncoder::kLayers);
  alpha_->value.setConstant(S(1) / S(AudioEncoder::kLayers));
  t_fc1_ = nn::Linear<S>::make(store_, "engine.t_fc1", br, cfg.time_dim, d, true, rng, nn::Init::normal, 0.02);
  t_fc2_ = nn::Linear<S>::make(store_, "engine.t_fc2", br, d, d, true, rng, nn::Init::normal, 0.02);
  for (int b = 0; b < cfg.depth; ++b) {
    const std::string p = "engine.block" + std::to_string(b);
    Block blk;
    blk.mod = nn::Linear<S>::make(store_, p + ".mod", br, d, 3 * kMods * d, true, rng, nn::Init::normal, 0.02);
    blk.self = nn::AttentionSite<S>::make(store_, p + ".self", br, d, d, d, cfg.heads, true, rng);
    blk.instr = nn::AttentionSite<S>::make(store_, p + ".instr", br, d, d, d, cfg.heads, true, rng);
    blk.audio = nn::AttentionSite<S>::make(store_, p + ".audio", br, d, cfg.audio_dim, d, cfg.heads, true, rng);
    blk.ff1 = nn::Linear<S>::make(store_, p + ".ff1", br, d, cfg.mlp_ratio * d, true, rng);
    blk.ff2 = nn::Linear<S>::make(store_, p + ".ff2", br, cfg.mlp_ratio * d, d, true, rng);
    blocks_.push_back(blk);
  }
  final_mod_ = nn::Linear<S>::make(store_, "engine.final_mod", br, d, 2 * d, true, rng, nn::Init::normal, 0.02);
  head_ = nn::Linear<S>::make(store_, "engine.head", br, d, c, true, rng, nn::Init::normal, 0.02);
}

template <typename S>
Mat<S> EngineModel<S>::forward(double t, const Mat<S>& noisy, const EngineInputs<S>& in, EngineCache<S>* cache) const {
  const int d = cfg_.width;
  const Eigen::Index n = shape_.video_tokens();
  const int per_frame = shape_.h * shape_.w;
  if (noisy.rows() != n || noisy.cols() != shape_.video_channels || in.background.rows() != n ||
      in.background.cols() != shape_.video_channels)
    throw ShapeError("engine: latent shape does not match the codec");
  if (in.reference.rows() > per_frame || (in.reference.rows() > 0 && in.reference.cols() != shape_.video_channels))
    throw ShapeError("engine: reference tokens exceed one latent frame");
  if (static_cast<int>(in.tokens.size()) > cfg_.max_instruction_len)
    throw ShapeError("engine: instruction longer than max_instruction_len");
  if (static_cast<int>(in.audio.size()) != AudioEncoder::kLayers) throw ShapeError("engine: wrong audio layer count");
  EngineCache<S> local;
  EngineCache<S>& c = cache != nullptr ? *cache : local;
  const Eigen::Index n_ref = in.reference.rows();

  Mat<S> xin(n, 2 * shape_.video_channels);
  xin << noisy, in.background;
  c.x_in = concat_mask<S>(xin, in.mask);
  c.ref = in.reference;
  c.audio = in.audio;
  c.tokens = in.tokens;
  c.e_bar = aggregate_audio<S>(in.audio, alpha());
  c.f_c.resize(static_cast<Eigen::Index>(in.tokens.size()), d);
  for (std::size_t i = 0; i < in.tokens.size(); ++i) {
    if (in.tokens[i] < 0 || in.tokens[i] >= cfg_.vocab_size) throw ShapeError("engine: token outside vocabulary");
    c.f_c.row(static_cast<Eigen::Index>(i)) =
        instr_table_->value.row(in.tokens[i]) + instr_pos_->value.row(static_cast<Eigen::Index>(i));
  }
  Mat<S> hv = in_proj_.forward(c.x_in) + pos_->value;
  Mat<S> h = hv;
  if (n_ref > 0) h = prepend_reference<S>(Mat<S>(ref_proj_.forward(c.ref) + ref_pos_->value.topRows(n_ref)), hv);

  c.t_emb = nn::timestep_embedding<S>(t, cfg_.time_dim);
  c.t1 = t_fc1_.forward(c.t_emb);
  c.temb = t_fc2_.forward(nn::silu<S>(c.t1));
  c.cond = nn::silu<S>(c.temb);
  c.blocks.assign(blocks_.size(), {});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Block& bp = blocks_[b];
    EngineBlockCache<S>& bc = c.blocks[b];
    bc.mod = bp.mod.forward(c.cond);
    const auto m1 = chunk<S>(bc.mod, 0, d), m2 = chunk<S>(bc.mod, 1, d), m3 = chunk<S>(bc.mod, 2, d),
               m4 = chunk<S>(bc.mod, 3, d);
    bc.h0 = h;
    bc.a_in = nn::modulate<S>(nn::layer_norm<S>(h, &bc.n1), m1.shift, m1.scale);
    bc.sa = bp.self.forward(bc.a_in, bc.a_in, &bc.self);
    bc.h1 = gated<S>(bc.h0, m1.gate, bc.sa);
    bc.s_in = nn::modulate<S>(nn::layer_norm<S>(bc.h1, &bc.n2), m2.shift, m2.scale);
    bc.inj = bp.instr.forward(bc.s_in, c.f_c, &bc.ixattn);
    bc.h2 = gated<S>(bc.h1, m2.gate, bc.inj);
    bc.u_in = nn::modulate<S>(nn::layer_norm<S>(bc.h2, &bc.n3), m3.shift, m3.scale);
    bc.au = Mat<S>::Zero(bc.h2.rows(), d);
    bc.au.bottomRows(n) =
        framewise_attention<S>(bp.audio, bc.u_in.bottomRows(n), c.e_bar, per_frame, codec_.patch_t, &bc.audio);
    bc.h3 = gated<S>(bc.h2, m3.gate, bc.au);
    bc.f_in = nn::modulate<S>(nn::layer_norm<S>(bc.h3, &bc.n4), m4.shift, m4.scale);
    bc.ff_pre = bp.ff1.forward(bc.f_in);
    bc.ff_act = nn::gelu<S>(bc.ff_pre);
    bc.ff = bp.ff2.forward(bc.ff_act);
    h = gated<S>(bc.h3, m4.gate, bc.ff);
    if (!h.allFinite()) throw NumericError("engine: non-finite activations in block " + std::to_string(b));
  }
  c.h_trim = trim_reference<S>(h, n_ref);
  c.fmod = final_mod_.forward(c.cond);
  c.f_out = nn::modulate<S>(nn::layer_norm<S>(c.h_trim, &c.nf), c.fmod.segment(0, d), c.fmod.segment(d, d));
  return head_.forward(c.f_out);
}

template <typename S>
Mat<S> EngineModel<S>::backward(const EngineCache<S>& c, const Mat<S>& d_out) {
  const int d = cfg_.width;
  const Eigen::Index n = shape_.video_tokens();
  const Eigen::Index n_ref = c.ref.rows();
  const int per_frame = shape_.h * shape_.w;
  RowVec<S> dcond = RowVec<S>::Zero(d);
  RowVec<S> dfmod = RowVec<S>::Zero(2 * d);
  const Mat<S> df_out = head_.backward(c.f_out, d_out);
  const RowVec<S> fscale = c.fmod.segment(d, d);
  Mat<S> dh = Mat<S>::Zero(n_ref + n, d);
  dh.bottomRows(n) = mod_norm_backward<S>(df_out, c.nf, fscale, dfmod, 0, d);
  dcond += final_mod_.backward(c.cond, dfmod);
  Mat<S> dfc = Mat<S>::Zero(c.f_c.rows(), d);
  Mat<S> de_bar = Mat<S>::Zero(c.e_bar.rows(), c.e_bar.cols());

  for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
    Block& bp = blocks_[static_cast<std::size_t>(b)];
    const EngineBlockCache<S>& bc = c.blocks[static_cast<std::size_t>(b)];
    const auto m1 = chunk<S>(bc.mod, 0, d), m2 = chunk<S>(bc.mod, 1, d), m3 = chunk<S>(bc.mod, 2, d),
               m4 = chunk<S>(bc.mod, 3, d);
    RowVec<S> dmod = RowVec<S>::Zero(3 * kMods * d);
    // feed-forward
    dmod.segment(11 * d, d) += (dh.array() * bc.ff.array()).colwise().sum().matrix();
    Mat<S> dff = dh;
    dff.array().rowwise() *= m4.gate.array();
    const Mat<S> dpre = nn::gelu_backward<S>(bc.ff_pre, bp.ff2.backward(bc.ff_act, dff));
    dh += mod_norm_backward<S>(bp.ff1.backward(bc.f_in, dpre), bc.n4, m4.scale, dmod, 9 * d, 10 * d);
    // frame-wise audio attention
    dmod.segment(8 * d, d) += (dh.array() * bc.au.array()).colwise().sum().matrix();
    Mat<S> dau = dh.bottomRows(n);
    dau.array().rowwise() *= m3.gate.array();
    const auto ag = framewise_attention_backward<S>(bp.audio, dau, bc.audio, per_frame, codec_.patch_t, c.e_bar.rows());
    de_bar += ag.daudio;
    Mat<S> du_in = Mat<S>::Zero(n_ref + n, d);
    du_in.bottomRows(n) = ag.dtokens;
    dh += mod_norm_backward<S>(du_in, bc.n3, m3.scale, dmod, 6 * d, 7 * d);
    // instruction cross-attention
    dmod.segment(5 * d, d) += (dh.array() * bc.inj.array()).colwise().sum().matrix();
    Mat<S> dinj = dh;
    dinj.array().rowwise() *= m2.gate.array();
    const auto ig = bp.instr.backward(dinj, bc.ixattn);
    if (ig.dy.rows() > 0) dfc += ig.dy;
    dh += mod_norm_backward<S>(ig.dx, bc.n2, m2.scale, dmod, 3 * d, 4 * d);
    // self-attention
    dmod.segment(2 * d, d) += (dh.array() * bc.sa.array()).colwise().sum().matrix();
    Mat<S> dsa = dh;
    dsa.array().rowwise() *= m1.gate.array();
    const auto sg = bp.self.backward(dsa, bc.self);
    dh += mod_norm_backward<S>(Mat<S>(sg.dx + sg.dy), bc.n1, m1.scale, dmod, 0, d);
    dcond += bp.mod.backward(c.cond, dmod);
  }

  const Mat<S> dtemb = nn::silu_backward<S>(c.temb, dcond);
  const Mat<S> dt1 = t_fc2_.backward(nn::silu<S>(c.t1), dtemb);
  t_fc1_.backward_params(c.t_emb, nn::silu_backward<S>(c.t1, dt1));
  const Mat<S> dhv = dh.bottomRows(n);
  const Mat<S> dx_in = in_proj_.backward(c.x_in, dhv);
  pos_->grad += dhv;
  if (n_ref > 0) {
    ref_proj_.backward_params(c.ref, dh.topRows(n_ref));
    ref_pos_->grad.topRows(n_ref) += dh.topRows(n_ref);
  }
  for (std::size_t l = 0; l < c.audio.size(); ++l)
    alpha_->grad(0, static_cast<Eigen::Index>(l)) += (de_bar.array() * c.audio[l].array()).sum();
  for (std::size_t i = 0; i < c.tokens.size(); ++i) {
    instr_table_->grad.row(c.tokens[i]) += dfc.row(static_cast<Eigen::Index>(i));
    instr_pos_->grad.row(static_cast<Eigen::Index>(i)) += dfc.row(static_cast<Eigen::Index>(i));
  }
  return dx_in.leftCols(shape_.video_channels);
}

template <typename S>
double engine_reconstruction_loss(const EngineModel<S>& model, const Mat<S>& z1, const EngineInputs<S>& in,
                                  const Mat<S>& eps, double t, EngineCache<S>* cache, Mat<S>* d_out) {
  const Mat<S> zt = flowtrain::interpolate<S>(eps, z1, t);
  const Mat<S> u = flowtrain::velocity_target<S>(eps, z1);
  const Mat<S> pred = model.forward(t, zt, in, cache);
  const auto parts = flowtrain::fm_loss<S>(&pred, nullptr, &u, nullptr, 1.0, 0.0, d_out != nullptr);
  if (d_out != nullptr) *d_out = parts.d_video;
  return parts.total;
}

flowtrain::GradCheckReport engine_grad_check(EngineModel<double>& model, const MatD& z1, const EngineInputs<double>& in,
                                             const MatD& eps, double t, int n_params, double h, std::uint64_t seed) {
  model.params().zero_grad();
  EngineCache<double> cache;
  MatD dout;
  engine_reconstruction_loss<double>(model, z1, in, eps, t, &cache, &dout);
  model.backward(cache, dout);
  std::vector<nn::Param<double>*> params;
  for (auto& p : model.params()) params.push_back(&p);
  Rng rng(seed);
  flowtrain::GradCheckReport rep;
  for (int k = 0; k < n_params; ++k) {
    auto& p = *params[std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng)];
    const auto idx = std::uniform_int_distribution<Eigen::Index>(0, p.value.size() - 1)(rng);
    double& w = p.value.data()[idx];
    const double w0 = w;
    w = w0 + h;
    const double lp = engine_reconstruction_loss<double>(model, z1, in, eps, t);
    w = w0 - h;
    const double lm = engine_reconstruction_loss<double>(model, z1, in, eps, t);
    w = w0;
    const double numeric = (lp - lm) / (2.0 * h);
    const double analytic = p.grad.data()[idx];
    const double err = std::abs(numeric - analytic);
    const double rel = err / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    rep.max_abs_error = std::max(rep.max_abs_error, err);
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_param = p.name;
    }
    ++rep.checked;
  }
  return rep;
}

// ---- data -------------------------------------------------------------------

EngineInputs<float> make_inputs(const codecs::Codec& codec, const AudioEncoder& enc, const MediaClip& clip,
                                const std::vector<float>& audio, const EntityMask& mask,
                                const std::vector<int>& tokens, std::optional<int> reference_frame) {
  EngineInputs<float> in;
  in.background = codec.encode_video(mask_out(clip, mask).video);
  in.mask = downsample_mask<float>(mask, codec.spec(), codec.latent_shape());
  for (const auto& l : enc.encode(audio)) in.audio.push_back(l.cast<float>());
  in.tokens = tokens;
  in.reference = MatF(0, codec.latent_shape().video_channels);
  if (reference_frame) {
    const int r = *reference_frame;
    if (r < 0 || r >= clip.config.frames) throw ShapeError("reference frame out of range");
    ClipConfig still = clip.config;
    still.frames = codec.spec().patch_t;
    const std::size_t frame = static_cast<std::size_t>(clip.config.height) * clip.config.width * 3;
    std::vector<float> video;
    for (int k = 0; k < still.frames; ++k)
      video.insert(video.end(), clip.video.begin() + static_cast<long>(r * frame),
                   clip.video.begin() + static_cast<long>((r + 1) * frame));
    in.reference = codecs::Codec(codec.spec(), still).encode_video(video);
  }
  return in;
}

// ---- checkpoints ------------------------------------------------------------

void save_engine(const std::filesystem::path& path, const EngineCheckpoint& ck) {
  flowtrain::Container c;
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& r : ck.trace) trace.push_back({r.step, r.loss_v, r.loss_a, r.loss_total});
  c.header = {{"format", "av2av-checkpoint/1"}, {"kind", "engine"}, {"model", ck.model},
              {"codec", ck.codec},              {"clip", ck.clip},   {"train", ck.train},
              {"step", ck.step},                {"trace", trace}};
  for (const auto& [name, v] : ck.params) c.blobs.push_back({"param/" + name, v});
  flowtrain::write_container(path, c);
}

EngineCheckpoint load_engine(const std::filesystem::path& path) {
  flowtrain::Container c = flowtrain::read_container(path);
  EngineCheckpoint ck;
  try {
    if (c.header.at("kind").get<std::string>() != "engine")
      throw ConfigError(path.string() + " is not an engine checkpoint");
    ck.model = c.header.at("model").get<EngineConfig>();
    ck.codec = c.header.at("codec").get<codecs::CodecSpec>();
    ck.clip = c.header.at("clip").get<ClipConfig>();
    ck.train = c.header.at("train").get<EngineTrainConfig>();
    ck.step = c.header.at("step").get<int>();
    for (const auto& r : c.header.at("trace"))
      ck.trace.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad engine header: " + e.what());
  }
  for (auto& b : c.blobs)
    if (b.name.rfind("param/", 0) == 0) ck.params[b.name.substr(6)] = std::move(b.value);
  return ck;
}

std::unique_ptr<EngineModel<float>> engine_from_checkpoint(const EngineCheckpoint& c) {
  const codecs::Codec codec(c.codec, c.clip);
  auto model = std::make_unique<EngineModel<float>>(c.model, c.codec, codec.latent_shape());
  for (auto& p : model->params()) {
    const auto it = c.params.find(p.name);
    if (it == c.params.end() || it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw ShapeError("engine checkpoint is missing or mismatches parameter " + p.name);
    p.value = it->second;
  }
  return model;
}

// ---- training & synthesis ---------------------------------------------------

EngineCheckpoint train_engine(const EngineConfig& model_cfg, const EngineTrainConfig& cfg,
                              const synthworld::DatasetManifest& data, const codecs::CodecSpec& codec_spec,
                              const std::filesystem::path& out_dir) {
  const auto entries = data.split(synthworld::Split::train);
  if (entries.empty()) throw ConfigError("dataset has no training pairs");
  if (cfg.batch_size < 1) throw ConfigError("engine batch_size must be positive");
  const codecs::Codec codec(codec_spec, data.clip_config);
  const AudioEncoder enc(data.clip_config.samples_per_frame(), model_cfg.audio_dim, model_cfg.audio_seed);
  EngineModel<float> model(model_cfg, codec_spec, codec.latent_shape());
  flowtrain::TrainConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  opt_cfg.grad_clip = cfg.grad_clip;
  flowtrain::AdamW opt(opt_cfg);
  const auto tokens = instruction::tokenize("reconstruct the video");
  Rng rng(derive_seed(cfg.seed, 200));
  std::uniform_int_distribution<std::size_t> pick(0, entries.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> frame(0, data.clip_config.frames - 1);
  const auto& shape = codec.latent_shape();
  EngineCheckpoint ck;
  ck.model = model_cfg;
  ck.codec = codec_spec;
  ck.clip = data.clip_config;
  ck.train = cfg;
  const auto inv_b = static_cast<float>(1.0 / cfg.batch_size);
  for (int step = 1; step <= cfg.steps; ++step) {
    model.params().zero_grad();
    flowtrain::TraceRow row;
    row.step = step;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& e = *entries[pick(rng)];
      const bool use_target = unit(rng) < 0.5;
      const MediaClip clip = read_clip(use_target ? data.target_file(e) : data.source_file(e));
      const auto& scene = use_target ? e.target_scene : e.source_scene;
      EntityMask mask = EntityMask::zeros(data.clip_config);
      if (!scene.sprites.empty()) {
        const auto k = std::uniform_int_distribution<std::size_t>(0, scene.sprites.size() - 1)(rng);
        mask = sprite_mask(scene.sprites[k], data.clip_config);
      }
      std::optional<int> ref;
      const int rf = frame(rng);
      if (unit(rng) >= cfg.reference_dropout) ref = rf;
      const EngineInputs<float> in = make_inputs(codec, enc, clip, clip.audio, mask, tokens, ref);
      const MatF z1 = codec.encode_video(clip.video);
      const double t = unit(rng);
      const MatF eps = randn<float>(shape.video_tokens(), shape.video_channels, rng);
      EngineCache<float> cache;
      MatF dout;
      const double loss = engine_reconstruction_loss<float>(model, z1, in, eps, t, &cache, &dout);
      if (!std::isfinite(loss)) throw NumericError("engine: non-finite loss at step " + std::to_string(step));
      dout *= inv_b;
      model.backward(cache, dout);
      row.loss_v += loss / cfg.batch_size;
    }
    row.loss_total = row.loss_v;
    opt.step(model.params(), [](nn::Branch) { return true; });
    ck.trace.push_back(row);
    ck.step = step;
  }
  ck.params = flowtrain::snapshot(model.params());
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_engine(out_dir / "engine.ckpt", ck);
    flowtrain::write_trace_csv(out_dir / "engine_trace.csv", ck.trace);
  }
  return ck;
}

MediaClip synthesize_target(const MediaClip& source, const std::vector<float>& edited_audio, const EntityMask& mask,
                            const std::vector<int>& tokens, const EngineCheckpoint& ckpt,
                            const inference::SolveConfig& solve, std::optional<int> reference_frame) {
  if (!(source.config == ckpt.clip)) throw ShapeError("clip config differs from the engine checkpoint's");
  if (edited_audio.size() != source.audio.size()) throw ShapeError("edited audio length differs from the source");
  const auto model = engine_from_checkpoint(ckpt);
  const codecs::Codec codec(ckpt.codec, ckpt.clip);
  const AudioEncoder enc(ckpt.clip.samples_per_frame(), ckpt.model.audio_dim, ckpt.model.audio_seed);
  const EngineInputs<float> in = make_inputs(codec, enc, source, edited_audio, mask, tokens, reference_frame);
  Rng rng(solve.seed);
  const auto& shape = codec.latent_shape();
  const MatF z0 = randn<float>(shape.video_tokens(), shape.video_channels, rng);
  const inference::Field<float> field = [&](double t, const MatF& zv, const MatF&) {
    return std::make_pair(model->forward(t, zv, in), MatF());
  };
  const auto [z1, unused] = inference::solve_ode<float>(field, z0, MatF(), solve);
  MediaClip out = source;
  out.video = codec.decode_video(z1);
  out.audio = edited_audio;
  out.clamp_ranges();
  return out;
}

#define AV2AV_INSTANTIATE_ENGINE(S)                                                                               \
  template Mat<S> downsample_mask<S>(const EntityMask&, const codecs::CodecSpec&, const codecs::LatentShape&);    \
  template Mat<S> concat_mask<S>(const Mat<S>&, const Mat<S>&);                                                  \
  template Mat<S> aggregate_audio<S>(const std::vector<Mat<S>>&, const RowVec<S>&);                             \
  template Mat<S> framewise_attention<S>(const nn::AttentionSite<S>&, const Mat<S>&, const Mat<S>&, int, int,     \
                                         FramewiseCache<S>*);                                                    \
  template FramewiseGrads<S> framewise_attention_backward<S>(const nn::AttentionSite<S>&, const Mat<S>&,          \
                                                             const FramewiseCache<S>&, int, int, Eigen::Index);  \
  template Mat<S> framewise_cross_attention<S>(const nn::AttentionSite<S>&, const Mat<S>&, const Mat<S>&, int,    \
                                               int);                                                             \
  template Mat<S> prepend_reference<S>(const Mat<S>&, const Mat<S>&);                                            \
  template Mat<S> trim_reference<S>(const Mat<S>&, Eigen::Index);                                                \
  template class EngineModel<S>;                                                                                 \
  template double engine_reconstruction_loss<S>(const EngineModel<S>&, const Mat<S>&, const EngineInputs<S>&,     \
                                                const Mat<S>&, double, EngineCache<S>*, Mat<S>*);

AV2AV_INSTANTIATE_ENGINE(float)
AV2AV_INSTANTIATE_ENGINE(double)

}  // namespace av2av::dataengine
