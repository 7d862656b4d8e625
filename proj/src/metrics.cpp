#include "av2av/metrics.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "av2av/error.hpp"
#include "av2av/instruction.hpp"

namespace av2av::metrics {

using synthworld::Color;
using synthworld::EditKind;
using synthworld::Identity;
using synthworld::Shape;

// ---- distribution metrics ---------------------------------------------------

MatD sqrt_psd(const MatD& a) {
  if (a.rows() != a.cols()) throw ShapeError("sqrt_psd: matrix is not square");
  const MatD sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<MatD> es(sym);
  if (es.info() != Eigen::Success) throw NumericError("sqrt_psd: eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

MatD covariance(const MatD& x) {
  if (x.rows() < 2) throw ShapeError("covariance needs at least 2 samples");
  const RowVec<double> mu = x.colwise().mean();
  const MatD c = x.rowwise() - mu;
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

double frechet_distance(const MatD& real, const MatD& gen) {
  if (real.cols() != gen.cols()) throw ShapeError("frechet_distance: feature dimensions differ");
  if (real.rows() < 2 || gen.rows() < 2) throw ShapeError("frechet_distance: need at least 2 samples per set");
  const RowVec<double> dmu = real.colwise().mean() - gen.colwise().mean();
  const MatD sr = covariance(real);
  const MatD sg = covariance(gen);
  const MatD rr = sqrt_psd(sr);
  const MatD cross = sqrt_psd(rr * sg * rr);
  const double d = dmu.squaredNorm() + sr.trace() + sg.trace() - 2.0 * cross.trace();
  return std::max(0.0, d);
}

double frechet_distance(const FeatureSet& real, const FeatureSet& gen) {
  if (real.provider_id != gen.provider_id) throw ConfigError("frechet_distance: feature providers differ");
  return frechet_distance(real.vectors, gen.vectors);
}

double cosine_alignment(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_alignment: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_alignment: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double temporal_consistency(const MatD& f) {
  if (f.rows() < 2) throw ShapeError("temporal_consistency needs at least 2 frames");
  double sum = 0.0;
  for (Eigen::Index t = 0; t + 1 < f.rows(); ++t)
    sum += cosine_alignment(f.row(t).transpose(), f.row(t + 1).transpose());
  return sum / static_cast<double>(f.rows() - 1);
}

// ---- SSIM -------------------------------------------------------------------

MatD luminance(const MediaClip& clip, int t) {
  MatD y(clip.config.height, clip.config.width);
  for (int r = 0; r < clip.config.height; ++r)
    for (int c = 0; c < clip.config.width; ++c)
      y(r, c) = (static_cast<double>(clip.pixel(t, r, c, 0)) + clip.pixel(t, r, c, 1) + clip.pixel(t, r, c, 2)) / 3.0;
  return y;
}

double ssim_frame(const MatD& x, const MatD& y, const std::vector<bool>* keep) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw ShapeError("ssim: frame shapes differ");
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double n = 0, sx = 0, sy = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (keep != nullptr && !(*keep)[static_cast<std::size_t>(i)]) continue;
    sx += x.data()[i];
    sy += y.data()[i];
    ++n;
  }
  if (n == 0) throw ShapeError("ssim: no pixels selected");
  const double mx = sx / n;
  const double my = sy / n;
  double vx = 0, vy = 0, cxy = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (keep != nullptr && !(*keep)[static_cast<std::size_t>(i)]) continue;
    const double dx = x.data()[i] - mx;
    const double dy = y.data()[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cxy += dx * dy;
  }
  vx /= n;
  vy /= n;
  cxy /= n;
  return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double ssim_video(const MediaClip& a, const MediaClip& b) {
  if (!(a.config == b.config)) throw ShapeError("ssim_video: clip shapes differ");
  double sum = 0.0;
  for (int t = 0; t < a.config.frames; ++t) sum += ssim_frame(luminance(a, t), luminance(b, t));
  return sum / a.config.frames;
}

double ssim_video_masked(const MediaClip& a, const MediaClip& b, const std::vector<std::vector<bool>>& keep) {
  if (!(a.config == b.config)) throw ShapeError("ssim_video_masked: clip shapes differ");
  if (static_cast<int>(keep.size()) != a.config.frames) throw ShapeError("ssim_video_masked: one mask per frame");
  double sum = 0.0;
  int used = 0;
  for (int t = 0; t < a.config.frames; ++t) {
    const auto& k = keep[static_cast<std::size_t>(t)];
    if (std::find(k.begin(), k.end(), true) == k.end()) continue;
    sum += ssim_frame(luminance(a, t), luminance(b, t), &k);
    ++used;
  }
  if (used == 0) throw ShapeError("ssim_video_masked: every pixel is masked");
  return sum / used;
}

// ---- LPAPS ------------------------------------------------------------------

double lpaps(const std::vector<float>& src, const std::vector<float>& edited, const dataengine::AudioEncoder& enc) {
  if (src.size() != edited.size()) throw ShapeError("lpaps: waveform lengths differ");
  const auto hs = enc.encode(src);
  const auto he = enc.encode(edited);
  auto unit = [](const RowVec<double>& v) -> RowVec<double> {
    const double n = v.norm();
    return n > 1e-12 ? RowVec<double>(v / n) : RowVec<double>(v);
  };
  double total = 0.0;
  for (std::size_t l = 0; l < hs.size(); ++l) {
    double layer = 0.0;
    for (Eigen::Index t = 0; t < hs[l].rows(); ++t) layer += (unit(hs[l].row(t)) - unit(he[l].row(t))).squaredNorm();
    total += layer / static_cast<double>(hs[l].rows());
  }
  return total;
}

// ---- toy providers ----------------------------------------------------------

int color_dim(Color c) { return synthworld::kEditKindCount + static_cast<int>(c); }
int shape_dim(Shape s) { return synthworld::kEditKindCount + synthworld::kColorCount + static_cast<int>(s); }

namespace {

constexpr double kSpriteArea = 64.0;  // nominal sprite pixel count used as feature unit
constexpr float kColorTolerance = 0.25F;

std::optional<Color> pixel_color(const MediaClip& clip, int t, int y, int x) {
  for (int c = 0; c < synthworld::kColorCount; ++c) {
    const auto rgb = synthworld::palette_rgb(static_cast<Color>(c));
    bool near = true;
    for (int k = 0; k < 3 && near; ++k)
      near = std::abs(clip.pixel(t, y, x, k) - rgb[static_cast<std::size_t>(k)]) < kColorTolerance;
    if (near) return static_cast<Color>(c);
  }
  return std::nullopt;
}

// Mean rasterized fill ratio per shape over a few sub-pixel placements.
const std::array<double, synthworld::kShapeCount>& reference_fills() {
  static const auto fills = [] {
    std::array<double, synthworld::kShapeCount> f{};
    ClipConfig cfg;
    cfg.frames = 1;
    for (int s = 0; s < synthworld::kShapeCount; ++s) {
      int n = 0;
      for (double size : {6.0, 8.0, 10.0})
        for (double off : {0.0, 0.25, 0.5, 0.75}) {
          synthworld::SceneGraph scene;
          scene.duration_frames = 1;
          synthworld::Sprite sp;
          sp.shape = static_cast<Shape>(s);
          sp.size = size;
          sp.x0 = 16.0 + off;
          sp.y0 = 16.0 + off / 2;
          sp.tone_hz = synthworld::tone_frequency(sp.id());
          scene.sprites.push_back(sp);
          f[static_cast<std::size_t>(s)] += color_blobs(synthworld::render(scene, cfg), 0)[0].fill;
          ++n;
        }
      f[static_cast<std::size_t>(s)] /= n;
    }
    return f;
  }();
  return fills;
}

}  // namespace

std::array<ColorBlob, synthworld::kColorCount> color_blobs(const MediaClip& clip, int t) {
  std::array<ColorBlob, synthworld::kColorCount> blobs{};
  std::array<std::array<int, 4>, synthworld::kColorCount> box{};
  for (auto& b : box) b = {clip.config.width, clip.config.height, -1, -1};
  for (int y = 0; y < clip.config.height; ++y)
    for (int x = 0; x < clip.config.width; ++x) {
      const auto c = pixel_color(clip, t, y, x);
      if (!c) continue;
      const auto i = static_cast<std::size_t>(*c);
      ++blobs[i].pixels;
      box[i] = {std::min(box[i][0], x), std::min(box[i][1], y), std::max(box[i][2], x), std::max(box[i][3], y)};
    }
  for (std::size_t i = 0; i < blobs.size(); ++i)
    if (blobs[i].pixels > 0)
      blobs[i].fill = blobs[i].pixels /
                      static_cast<double>((box[i][2] - box[i][0] + 1) * (box[i][3] - box[i][1] + 1));
  return blobs;
}

Shape classify_fill(double fill) {
  const auto& ref = reference_fills();
  int best = 0;
  for (int s = 1; s < synthworld::kShapeCount; ++s)
    if (std::abs(fill - ref[static_cast<std::size_t>(s)]) < std::abs(fill - ref[static_cast<std::size_t>(best)]))
      best = s;
  return static_cast<Shape>(best);
}

Eigen::VectorXd toy_video_frame_features(const MediaClip& clip, int t) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kFeatureDim);
  const auto blobs = color_blobs(clip, t);
  int fg = 0;
  for (int c = 0; c < synthworld::kColorCount; ++c) {
    const auto& b = blobs[static_cast<std::size_t>(c)];
    if (b.pixels == 0) continue;
    fg += b.pixels;
    f(color_dim(static_cast<Color>(c))) += b.pixels / kSpriteArea;
    f(shape_dim(classify_fill(b.fill))) += b.pixels / kSpriteArea;
  }
  const double pixels = static_cast<double>(clip.config.height) * clip.config.width;
  f(kAmbientDim) = std::max(1e-3, (pixels - fg) / pixels);
  return f;
}

MatD toy_video_frame_matrix(const MediaClip& clip) {
  MatD m(clip.config.frames, kFeatureDim);
  for (int t = 0; t < clip.config.frames; ++t) m.row(t) = toy_video_frame_features(clip, t).transpose();
  return m;
}

Eigen::VectorXd toy_video_features(const MediaClip& clip) {
  return toy_video_frame_matrix(clip).colwise().mean().transpose();
}

Eigen::VectorXd toy_audio_features(const MediaClip& clip) {
  const RowVec<double> amps = synthworld::clip_tone_amplitudes(clip.audio, clip.config);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kFeatureDim);
  for (int i = 0; i < synthworld::kIdentityCount; ++i) {
    const Identity id = Identity::from_index(i);
    const double a = std::abs(amps(i)) / 0.15;
    f(color_dim(id.color)) += a;
    f(shape_dim(id.shape)) += a;
  }
  f(kAmbientDim) = std::max(1e-3, std::abs(amps(synthworld::kIdentityCount)) / 0.05);
  return f;
}

Eigen::VectorXd toy_text_features(const std::string& text, const synthworld::SceneGraph*) {
  const auto in = instruction::parse_text(text);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kFeatureDim);
  if (in.reconstruct) {
    f(kAmbientDim) = 1.0;
    return f;
  }
  f(static_cast<int>(in.kind)) = 1.0;
  auto add = [&f](Identity id, double sign) {
    f(color_dim(id.color)) += sign;
    f(shape_dim(id.shape)) += sign;
  };
  if (in.kind != EditKind::insert) add(in.target, -1.0);
  if (in.kind == EditKind::insert || in.kind == EditKind::replace) add(in.payload, 1.0);
  return f;
}

// ---- observation ------------------------------------------------------------

Observation observe(const MediaClip& clip) {
  Observation o;
  std::array<std::vector<double>, synthworld::kColorCount> fills;
  for (int t = 0; t < clip.config.frames; ++t) {
    const auto blobs = color_blobs(clip, t);
    for (std::size_t c = 0; c < blobs.size(); ++c) {
      o.color_mass[c] += blobs[c].pixels / static_cast<double>(clip.config.frames);
      if (blobs[c].pixels >= 4) fills[c].push_back(blobs[c].fill);
    }
  }
  for (std::size_t c = 0; c < fills.size(); ++c) {
    if (fills[c].empty()) continue;
    auto mid = fills[c].begin() + static_cast<long>(fills[c].size() / 2);
    std::nth_element(fills[c].begin(), mid, fills[c].end());
    o.color_shape[c] = classify_fill(*mid);
  }
  o.tone_amp = synthworld::clip_tone_amplitudes(clip.audio, clip.config).cwiseAbs();
  o.frame_tone_amp = synthworld::frame_tone_amplitudes(clip.audio, clip.config).cwiseAbs();
  return o;
}

bool instruction_applied(const synthworld::EditOp& edit, const synthworld::SceneGraph& source_scene,
                         const MediaClip& source, const MediaClip& target, const MediaClip& output) {
  const Observation s = observe(source);
  const Observation g = observe(target);
  const Observation o = observe(output);
  auto mass = [](const Observation& ob, Identity id) { return ob.color_mass[static_cast<std::size_t>(id.color)]; };
  auto amp = [](const Observation& ob, Identity id) { return ob.tone_amp(id.index()); };
  auto appears = [&](Identity id) {
    const auto shape = o.color_shape[static_cast<std::size_t>(id.color)];
    return mass(o, id) >= 0.5 * mass(g, id) && shape && *shape == id.shape;
  };
  auto vanished = [&](Identity id) { return mass(o, id) < 0.5 * mass(s, id); };
  auto sounds = [&](Identity id) { return amp(o, id) >= 0.5 * amp(g, id); };
  auto muted = [&](Identity id) { return amp(o, id) < 0.5 * amp(s, id); };
  const Identity x = edit.target;
  const synthworld::Sprite* src_sprite = source_scene.find(x);
  const bool audible = src_sprite != nullptr && src_sprite->tone_amp > 0.0;
  switch (edit.kind) {
    case EditKind::remove: return vanished(x) && (!audible || muted(x));
    case EditKind::insert: {
      const Identity y = edit.payload->id();
      return appears(y) && (edit.payload->tone_amp <= 0.0 || sounds(y));
    }
    case EditKind::replace: {
      const Identity y = edit.payload->id();
      if (!appears(y)) return false;
      if (y.color != x.color && !vanished(x)) return false;
      return !audible || (sounds(y) && muted(x));
    }
    case EditKind::silence: return muted(x) && mass(o, x) >= 0.5 * mass(s, x);
    case EditKind::retime_tone: {
      const int onset = edit.payload->tone_onset;
      const Eigen::Index frames = o.frame_tone_amp.rows();
      const double ref = amp(s, x);
      const double before = onset > 0 ? o.frame_tone_amp.col(x.index()).head(onset).mean() : 0.0;
      const double after = o.frame_tone_amp.col(x.index()).tail(frames - onset).mean();
      return before < 0.5 * ref && after >= 0.5 * ref;
    }
  }
  return false;
}

std::vector<std::vector<bool>> non_target_keep_mask(const synthworld::EditOp& edit,
                                                    const synthworld::SceneGraph& source,
                                                    const synthworld::SceneGraph& target, const ClipConfig& clip) {
  std::vector<const synthworld::Sprite*> sprites;
  if (const auto* s = source.find(edit.target)) sprites.push_back(s);
  if (edit.payload)
    if (const auto* s = target.find(edit.payload->id())) sprites.push_back(s);
  if (const auto* s = target.find(edit.target)) sprites.push_back(s);
  std::vector<std::vector<bool>> keep(static_cast<std::size_t>(clip.frames),
                                      std::vector<bool>(static_cast<std::size_t>(clip.height) * clip.width, true));
  for (int t = 0; t < clip.frames; ++t)
    for (const auto* s : sprites) {
      const auto b = synthworld::sprite_box(*s, t, clip);
      for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x)
          keep[static_cast<std::size_t>(t)][static_cast<std::size_t>(y) * clip.width + x] = false;
    }
  return keep;
}

// ---- evaluation -------------------------------------------------------------

void to_json(nlohmann::json& j, const SampleMetrics& s) {
  j = nlohmann::json{{"index", s.index}, {"edit_kind", s.edit_kind}, {"instruction", s.instruction},
                     {"ssim", s.ssim},   {"ssim_nontarget", s.ssim_nontarget}, {"lpaps", s.lpaps},
                     {"tv_a", s.tv_a},   {"ta_a", s.ta_a},        {"av_a", s.av_a},
                     {"tc", s.tc},       {"applied", s.applied}};
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"dataset", r.dataset},
                     {"provider_id", r.provider_id},
                     {"samples", r.samples},
                     {"fvd", r.fvd},
                     {"fad", r.fad},
                     {"tv_a", r.tv_a},
                     {"ta_a", r.ta_a},
                     {"av_a", r.av_a},
                     {"tc", r.tc},
                     {"ssim", r.ssim},
                     {"lpaps", r.lpaps},
                     {"ssim_nontarget", r.ssim_nontarget},
                     {"applied_rate", r.applied_rate},
                     {"per_sample", r.per_sample}};
}

std::string output_name(const synthworld::ManifestEntry& e) { return "out_" + std::to_string(e.index) + ".clip"; }

std::vector<MediaClip> load_outputs(const synthworld::DatasetManifest& m, const std::filesystem::path& dir,
                                    synthworld::Split split) {
  std::vector<MediaClip> out;
  for (const auto* e : m.split(split)) {
    const auto path = dir / output_name(*e);
    if (!std::filesystem::exists(path))
      throw IoError("missing output " + path.string() + " for manifest entry " + std::to_string(e->index));
    out.push_back(read_clip(path));
  }
  return out;
}

MetricsReport evaluate(const synthworld::DatasetManifest& m, const std::vector<MediaClip>& outputs,
                       synthworld::Split split) {
  const auto entries = m.split(split);
  if (entries.size() != outputs.size())
    throw ShapeError("evaluate: " + std::to_string(outputs.size()) + " outputs for " +
                     std::to_string(entries.size()) + " manifest entries");
  if (entries.size() < 2) throw ShapeError("evaluate: need at least 2 samples");
  const dataengine::AudioEncoder enc(m.clip_config.samples_per_frame());
  MetricsReport r;
  r.dataset = m.root.string();
  r.samples = static_cast<int>(entries.size());
  MatD real_v(r.samples, kFeatureDim), gen_v(r.samples, kFeatureDim);
  MatD real_a(r.samples, kFeatureDim), gen_a(r.samples, kFeatureDim);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = *entries[i];
    const MediaClip& out = outputs[i];
    const MediaClip src = read_clip(m.source_file(e));
    const MediaClip tgt = read_clip(m.target_file(e));
    if (!(out.config == tgt.config)) throw ShapeError("evaluate: output " + std::to_string(e.index) + " has wrong shape");
    SampleMetrics s;
    s.index = e.index;
    s.edit_kind = std::string(synthworld::edit_kind_name(e.edit_kind));
    s.instruction = e.instruction;
    s.ssim = ssim_video(tgt, out);
    s.ssim_nontarget =
        ssim_video_masked(tgt, out, non_target_keep_mask(e.edit, e.source_scene, e.target_scene, m.clip_config));
    s.lpaps = lpaps(tgt.audio, out.audio, enc);
    const Eigen::VectorXd text = toy_text_features(e.instruction);
    const Eigen::VectorXd vf = toy_video_features(out);
    const Eigen::VectorXd af = toy_audio_features(out);
    s.tv_a = cosine_alignment(text, vf);
    s.ta_a = cosine_alignment(text, af);
    s.av_a = cosine_alignment(vf, af);
    s.tc = temporal_consistency(toy_video_frame_matrix(out));
    s.applied = instruction_applied(e.edit, e.source_scene, src, tgt, out);
    real_v.row(static_cast<Eigen::Index>(i)) = toy_video_features(tgt).transpose();
    real_a.row(static_cast<Eigen::Index>(i)) = toy_audio_features(tgt).transpose();
    gen_v.row(static_cast<Eigen::Index>(i)) = vf.transpose();
    gen_a.row(static_cast<Eigen::Index>(i)) = af.transpose();
    r.ssim += s.ssim;
    r.ssim_nontarget += s.ssim_nontarget;
    r.lpaps += s.lpaps;
    r.tv_a += s.tv_a;
    r.ta_a += s.ta_a;
    r.av_a += s.av_a;
    r.tc += s.tc;
    r.applied_rate += s.applied ? 1.0 : 0.0;
    r.per_sample.push_back(s);
  }
  const double n = r.samples;
  r.ssim /= n;
  r.ssim_nontarget /= n;
  r.lpaps /= n;
  r.tv_a /= n;
  r.ta_a /= n;
  r.av_a /= n;
  r.tc /= n;
  r.applied_rate /= n;
  r.fvd = frechet_distance(FeatureSet{real_v, kProviderId}, FeatureSet{gen_v, kProviderId});
  r.fad = frechet_distance(FeatureSet{real_a, kProviderId}, FeatureSet{gen_a, kProviderId});
  return r;
}

std::string svg_line_plot(const std::string& title, const std::vector<double>& ys) {
  constexpr double w = 480, h = 240, pad = 36;
  double lo = 0.0, hi = 1.0;
  if (!ys.empty()) {
    lo = *std::min_element(ys.begin(), ys.end());
    hi = *std::max_element(ys.begin(), ys.end());
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << pad << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n"
    << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad << "\" stroke=\"black\"/>\n"
    << "<text x=\"2\" y=\"" << pad + 4 << "\" font-size=\"10\">" << std::setprecision(3) << hi << "</text>\n"
    << "<text x=\"2\" y=\"" << h - pad << "\" font-size=\"10\">" << lo << "</text>\n"
    << std::setprecision(2) << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
  const double span = std::max<std::size_t>(ys.size(), 2) - 1;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double x = pad + (w - 2 * pad) * static_cast<double>(i) / span;
    const double y = h - pad - (h - 2 * pad) * (ys[i] - lo) / (hi - lo);
    s << x << ',' << y << ' ';
  }
  s << "\"/>\n</svg>\n";
  return s.str();
}

void write_report(const MetricsReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw IoError("cannot write " + (dir / "report.json").string());
    out << nlohmann::json(r).dump(1) << '\n';
  }
  {
    std::ofstream out(dir / "report.csv");
    if (!out) throw IoError("cannot write " + (dir / "report.csv").string());
    out << "index,edit_kind,ssim,ssim_nontarget,lpaps,tv_a,ta_a,av_a,tc,applied,instruction\n" << std::setprecision(9);
    for (const auto& s : r.per_sample)
      out << s.index << ',' << s.edit_kind << ',' << s.ssim << ',' << s.ssim_nontarget << ',' << s.lpaps << ','
          << s.tv_a << ',' << s.ta_a << ',' << s.av_a << ',' << s.tc << ',' << (s.applied ? 1 : 0) << ",\""
          << s.instruction << "\"\n";
  }
  const std::vector<std::pair<std::string, double SampleMetrics::*>> series = {
      {"ssim", &SampleMetrics::ssim}, {"ssim_nontarget", &SampleMetrics::ssim_nontarget},
      {"lpaps", &SampleMetrics::lpaps}, {"tv_a", &SampleMetrics::tv_a},
      {"ta_a", &SampleMetrics::ta_a}, {"av_a", &SampleMetrics::av_a}, {"tc", &SampleMetrics::tc}};
  for (const auto& [name, field] : series) {
    std::vector<double> ys;
    for (const auto& s : r.per_sample) ys.push_back(s.*field);
    std::ofstream out(dir / ("plot_" + name + ".svg"));
    out << svg_line_plot(name + " per sample", ys);
  }
}

}  // namespace av2av::metrics
