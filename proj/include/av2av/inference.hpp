#pragma once

// Fixed-step ODE sampling from noise (t = 0) to edited latents (t = 1).

#include <functional>
#include <vector>

#include "av2av/backbone.hpp"
#include "av2av/flowtrain.hpp"
#include "av2av/instruction.hpp"

namespace av2av::inference {

enum class Method { euler, midpoint };
std::string_view method_name(Method m);
Method parse_method(std::string_view s);

struct SolveConfig {
  Method method = Method::euler;
  int steps = 50;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SolveConfig& c);
void from_json(const nlohmann::json& j, SolveConfig& c);

// Joint velocity field over both modality states.
template <typename S>
using Field = std::function<std::pair<Mat<S>, Mat<S>>(double t, const Mat<S>& zv, const Mat<S>& za)>;

// Times at which the field was evaluated, one pair per evaluation; both
// modalities always share the same time.
struct StepStamp {
  int step;
  double t_video;
  double t_audio;
};

template <typename S>
std::pair<Mat<S>, Mat<S>> solve_ode(const Field<S>& field, const Mat<S>& z0_v, const Mat<S>& z0_a,
                                    const SolveConfig& cfg, std::vector<StepStamp>* stamps = nullptr);

// Model-driven solve with the source latents and instruction held fixed.
std::pair<MatF, MatF> solve_ode(const backbone::EditorModel<float>& model, const MatF& z0_v, const MatF& z0_a,
                                const codecs::LatentBundle& source, const std::vector<int>& tokens,
                                const SolveConfig& cfg, backbone::ForwardFlags flags = {},
                                std::vector<backbone::GateTelemetry>* telemetry = nullptr);

// encode -> seeded noise -> solve -> decode -> clamp.
MediaClip edit(const MediaClip& source, const instruction::Instruction& instr,
               const backbone::EditorModel<float>& model, const SolveConfig& cfg,
               std::vector<backbone::GateTelemetry>* telemetry = nullptr);
MediaClip edit(const MediaClip& source, const instruction::Instruction& instr, const flowtrain::Checkpoint& ckpt,
               const SolveConfig& cfg);

}  // namespace av2av::inference
