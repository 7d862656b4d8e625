#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace av2av {

// Token-major matrices: one row per token, one column per channel.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using MatF = Mat<float>;
using MatD = Mat<double>;

using Rng = std::mt19937_64;

// Derives an independent stream seed from a master seed and a list of indices.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

template <typename S>
Mat<S> randn(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

template <typename S>
bool all_finite(const Mat<S>& m) {
  return m.allFinite();
}

}  // namespace av2av
