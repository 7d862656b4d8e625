#pragma once

// Independent reference implementations used by unit and acceptance tests.

#include <cmath>
#include <vector>

#include "av2av/tensor.hpp"

namespace av2av::oracle {

// Double-loop multi-head scaled dot-product attention on projected Q/K/V.
inline MatD naive_attention(const MatD& q, const MatD& k, const MatD& v, int heads) {
  const Eigen::Index dh = q.cols() / heads;
  MatD out = MatD::Zero(q.rows(), v.cols());
  for (int h = 0; h < heads; ++h) {
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      std::vector<double> logits(static_cast<std::size_t>(k.rows()));
      double mx = -1e300;
      for (Eigen::Index j = 0; j < k.rows(); ++j) {
        double s = 0.0;
        for (Eigen::Index c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
        logits[static_cast<std::size_t>(j)] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, logits[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (Eigen::Index j = 0; j < k.rows(); ++j)
        for (Eigen::Index c = 0; c < dh; ++c)
          out(i, h * dh + c) += logits[static_cast<std::size_t>(j)] / z * v(j, h * dh + c);
    }
  }
  return out;
}

inline MatD matmul(const MatD& a, const MatD& b) {
  MatD c = MatD::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double max_abs_diff(const MatD& a, const MatD& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace av2av::oracle
