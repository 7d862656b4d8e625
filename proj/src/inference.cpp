#include "av2av/inference.hpp"

#include <nlohmann/json.hpp>

#include "av2av/error.hpp"

namespace av2av::inference {

std::string_view method_name(Method m) { return m == Method::euler ? "euler" : "midpoint"; }

Method parse_method(std::string_view s) {
  if (s == "euler") return Method::euler;
  if (s == "midpoint") return Method::midpoint;
  throw ConfigError("solver method must be 'euler' or 'midpoint'");
}

void to_json(nlohmann::json& j, const SolveConfig& c) {
  j = nlohmann::json{{"method", method_name(c.method)}, {"steps", c.steps}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SolveConfig& c) {
  c.method = parse_method(j.at("method").get<std::string>());
  c.steps = j.at("steps").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  if (c.steps < 1) throw ConfigError("solver steps must be >= 1");
}

template <typename S>
std::pair<Mat<S>, Mat<S>> solve_ode(const Field<S>& field, const Mat<S>& z0_v, const Mat<S>& z0_a,
                                    const SolveConfig& cfg, std::vector<StepStamp>* stamps) {
  if (cfg.steps < 1) throw ConfigError("solver steps must be >= 1");
  const double h = 1.0 / cfg.steps;
  Mat<S> zv = z0_v;
  Mat<S> za = z0_a;
  auto eval = [&](int step, double t, const Mat<S>& v, const Mat<S>& a) {
    if (stamps != nullptr) stamps->push_back({step, t, t});
    return field(t, v, a);
  };
  for (int n = 0; n < cfg.steps; ++n) {
    const double t = n * h;
    if (cfg.method == Method::euler) {
      const auto [kv, ka] = eval(n, t, zv, za);
      zv += static_cast<S>(h) * kv;
      za += static_cast<S>(h) * ka;
    } else {
      const auto [k1v, k1a] = eval(n, t, zv, za);
      const Mat<S> mv = zv + static_cast<S>(h / 2) * k1v;
      const Mat<S> ma = za + static_cast<S>(h / 2) * k1a;
      const auto [k2v, k2a] = eval(n, t + h / 2, mv, ma);
      zv += static_cast<S>(h) * k2v;
      za += static_cast<S>(h) * k2a;
    }
    if (!zv.allFinite() || !za.allFinite())
      throw NumericError("ODE state became non-finite at step " + std::to_string(n + 1));
  }
  return {zv, za};
}

std::pair<MatF, MatF> solve_ode(const backbone::EditorModel<float>& model, const MatF& z0_v, const MatF& z0_a,
                                const codecs::LatentBundle& source, const std::vector<int>& tokens,
                                const SolveConfig& cfg, backbone::ForwardFlags flags,
                                std::vector<backbone::GateTelemetry>* telemetry) {
  const Field<float> field = [&](double t, const MatF& zv, const MatF& za) {
    backbone::GateTelemetry tel;
    auto pred = model.forward(t, zv, za, source.video, source.audio, tokens, flags, nullptr,
                              telemetry != nullptr ? &tel : nullptr);
    if (telemetry != nullptr) telemetry->push_back(std::move(tel));
    return std::make_pair(std::move(pred.video), std::move(pred.audio));
  };
  return solve_ode<float>(field, z0_v, z0_a, cfg);
}

MediaClip edit(const MediaClip& source, const instruction::Instruction& instr,
               const backbone::EditorModel<float>& model, const SolveConfig& cfg,
               std::vector<backbone::GateTelemetry>* telemetry) {
  const codecs::Codec codec(model.codec_spec(), source.config);
  if (!(codec.latent_shape() == model.latent_shape()))
    throw ShapeError("clip dimensions do not match the checkpoint's latent shape");
  const auto src = backbone::encode_for_model(codec, source, model.config(), codecs::Role::source);
  Rng rng(cfg.seed);
  const auto& shape = codec.latent_shape();
  const MatF z0v = randn<float>(shape.video_tokens(), shape.video_channels, rng);
  const MatF z0a = randn<float>(shape.audio_tokens, shape.audio_channels, rng);
  auto [z1v, z1a] = solve_ode(model, z0v, z0a, src, instr.tokens, cfg, {}, telemetry);
  codecs::LatentBundle out{std::move(z1v), std::move(z1a), codecs::Role::target};
  MediaClip clip = backbone::decode_from_model(codec, out, model.config());
  clip.clamp_ranges();
  return clip;
}

MediaClip edit(const MediaClip& source, const instruction::Instruction& instr, const flowtrain::Checkpoint& ckpt,
               const SolveConfig& cfg) {
  if (!(source.config == ckpt.clip)) throw ShapeError("clip config differs from the checkpoint's clip config");
  const auto model = flowtrain::model_from_checkpoint(ckpt);
  return edit(source, instr, *model, cfg);
}

template std::pair<MatF, MatF> solve_ode<float>(const Field<float>&, const MatF&, const MatF&, const SolveConfig&,
                                                std::vector<StepStamp>*);
template std::pair<MatD, MatD> solve_ode<double>(const Field<double>&, const MatD&, const MatD&,
                                                 const SolveConfig&, std::vector<StepStamp>*);

}  // namespace av2av::inference
