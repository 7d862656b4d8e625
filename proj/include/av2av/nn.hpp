#pragma once

// Minimal neural-network building blocks with hand-written backward passes.
// Every layer keeps its inputs in a caller-owned cache; backward() accumulates
// parameter gradients into Param::grad and returns input gradients.

#include <deque>
#include <string>
#include <string_view>
#include <vector>

#include "av2av/tensor.hpp"

namespace av2av::nn {

// Which half of the dual-stream model owns a parameter. Stage-1 training masks
// updates by branch.
enum class Branch : std::uint8_t { shared, video, audio, engine };

std::string_view branch_name(Branch b);
Branch parse_branch(std::string_view s);

template <typename S>
struct Param {
  std::string name;
  Branch branch = Branch::shared;
  Mat<S> value;
  Mat<S> grad;
};

// Owns all parameters of a model. Addresses are stable for the store's life.
template <typename S>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Param<S>& add(std::string name, Branch branch, Eigen::Index rows, Eigen::Index cols);

  Param<S>* find(std::string_view name);
  const Param<S>* find(std::string_view name) const;

  void zero_grad();
  std::size_t scalar_count() const;
  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Param<S>> params_;
};

enum class Init { xavier, normal, zeros };

template <typename S>
struct Linear {
  Param<S>* weight = nullptr;  // in x out
  Param<S>* bias = nullptr;    // 1 x out, may be null

  static Linear make(ParamStore<S>& store, const std::string& name, Branch branch, int in, int out,
                     bool with_bias, Rng& rng, Init init = Init::xavier, double stddev = 0.02);

  int in_features() const { return static_cast<int>(weight->value.rows()); }
  int out_features() const { return static_cast<int>(weight->value.cols()); }

  Mat<S> forward(const Mat<S>& x) const;
  // Accumulates dW/db; returns dx.
  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy) const;
  void backward_params(const Mat<S>& x, const Mat<S>& dy) const;
};

// Layer normalization without affine parameters (affine comes from modulation).
template <typename S>
struct NormCache {
  Mat<S> y;
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
};

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, NormCache<S>* cache);
template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const NormCache<S>& cache);

template <typename S>
Mat<S> gelu(const Mat<S>& x);
template <typename S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy);

template <typename S>
Mat<S> silu(const Mat<S>& x);
template <typename S>
Mat<S> silu_backward(const Mat<S>& x, const Mat<S>& dy);

// y = x * (1 + scale) + shift, broadcast over rows.
template <typename S>
Mat<S> modulate(const Mat<S>& x, const RowVec<S>& shift, const RowVec<S>& scale);

// Multi-head scaled dot-product attention on already-projected Q/K/V.
// Heads split the channel axis evenly. With zero keys the output is zero.
template <typename S>
struct AttentionCache {
  Mat<S> q, k, v;
  std::vector<Mat<S>> probs;  // one (nq x nk) matrix per head
};

template <typename S>
Mat<S> attention(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, int heads,
                 AttentionCache<S>* cache);

template <typename S>
struct AttentionGrads {
  Mat<S> dq, dk, dv;
};

template <typename S>
AttentionGrads<S> attention_backward(const Mat<S>& dout, const AttentionCache<S>& cache, int heads);

// Projected attention site: queries from x, keys/values from y, bias-free
// projections, optional output projection.
template <typename S>
struct AttentionSite {
  Linear<S> wq, wk, wv, wo;
  bool has_output = true;
  int heads = 1;

  struct Cache {
    Mat<S> x, y;
    AttentionCache<S> attn;
    Mat<S> ctx;
  };

  static AttentionSite make(ParamStore<S>& store, const std::string& name, Branch branch, int dq,
                            int dkv, int width, int heads, bool with_output, Rng& rng);

  Mat<S> forward(const Mat<S>& x, const Mat<S>& y, Cache* cache) const;

  struct Grads {
    Mat<S> dx, dy;
  };
  Grads backward(const Mat<S>& dout, const Cache& cache) const;
};

// Sinusoidal embedding of a scalar time in [0,1] (scaled by 1000 as in DiT).
template <typename S>
RowVec<S> timestep_embedding(double t, int dim);

}  // namespace av2av::nn
