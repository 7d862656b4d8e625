#include "av2av/audio_encoder.hpp"

#include <cmath>

#include "av2av/error.hpp"

namespace av2av::dataengine {

AudioEncoder::AudioEncoder(int samples_per_frame, int dim, std::uint64_t seed)
    : spf_(samples_per_frame), dim_(dim) {
  if (spf_ < kernel_ || dim_ < 1) throw ConfigError("audio encoder: frame window shorter than the filter");
  Rng rng(seed);
  embed_ = randn<double>(spf_, dim_, rng, 1.0 / std::sqrt(spf_));
  bank_ = randn<double>(kernel_, dim_, rng, 4.0 / std::sqrt(kernel_));
  conv2_ = randn<double>(3 * dim_, dim_, rng, 2.0 / std::sqrt(3.0 * dim_));
}

std::vector<MatD> AudioEncoder::encode(const std::vector<float>& audio) const {
  if (audio.empty() || audio.size() % static_cast<std::size_t>(spf_) != 0)
    throw ShapeError("audio encoder: waveform is not a whole number of frames");
  const auto frames = static_cast<Eigen::Index>(audio.size() / static_cast<std::size_t>(spf_));
  const int positions = (spf_ - kernel_) / stride_ + 1;
  std::vector<MatD> taps(kLayers, MatD::Zero(frames, dim_));
  for (Eigen::Index t = 0; t < frames; ++t) {
    Eigen::Map<const Eigen::VectorXf> xf(audio.data() + t * spf_, spf_);
    const Eigen::VectorXd x = xf.cast<double>();
    taps[0].row(t) = x.transpose() * embed_;
    MatD patches(positions, kernel_);
    for (int p = 0; p < positions; ++p) patches.row(p) = x.segment(p * stride_, kernel_).transpose();
    const MatD h1 = (patches * bank_).array().tanh().matrix();
    taps[1].row(t) = (h1.array().square().colwise().mean()).sqrt().matrix();
    MatD h1pad = MatD::Zero(positions + 2, dim_);
    h1pad.middleRows(1, positions) = h1;
    MatD windows(positions, 3 * dim_);
    for (int p = 0; p < positions; ++p)
      for (int k = 0; k < 3; ++k) windows.block(p, k * dim_, 1, dim_) = h1pad.row(p + k);
    const MatD h2 = (windows * conv2_).array().tanh().matrix();
    taps[2].row(t) = (h2.array().square().colwise().mean()).sqrt().matrix();
  }
  return taps;
}

}  // namespace av2av::dataengine
