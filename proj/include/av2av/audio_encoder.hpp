#pragma once

// Fixed, seeded toy audio encoder shared by the data engine and LPAPS.
//
// Works on per-frame waveform windows and never mixes frames. Three tap points,
// each (T x dim):
//   0: linear embedding of the raw window
//   1: RMS-pooled tanh of a strided 1-D filter bank over samples
//   2: RMS-pooled tanh of a kernel-3 conv over layer-1 positions

#include <vector>

#include "av2av/media.hpp"
#include "av2av/tensor.hpp"

namespace av2av::dataengine {

class AudioEncoder {
 public:
  static constexpr int kLayers = 3;

  AudioEncoder(int samples_per_frame, int dim = 32, std::uint64_t seed = 99);

  int dim() const { return dim_; }
  int samples_per_frame() const { return spf_; }

  // One (T x dim) matrix per tap point. Throws if the length is not a whole
  // number of frames.
  std::vector<MatD> encode(const std::vector<float>& audio) const;

 private:
  int spf_;
  int dim_;
  int kernel_ = 25;
  int stride_ = 5;
  MatD embed_;  // spf x dim
  MatD bank_;   // kernel x dim
  MatD conv2_;  // (3 * dim) x dim
};

}  // namespace av2av::dataengine
