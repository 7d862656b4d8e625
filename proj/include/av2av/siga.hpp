#pragma once

// Source-Instruction Gated Attention.
//
// A single query projection of the hidden state f_h attends separately to the
// source features f_x and the instruction features f_c. A sigmoid gate computed
// from [attended_source ; attended_instruction ; f_h] blends the two results
// per token and per channel:
//
//   G   = sigmoid([a_x ; a_c ; f_h] W_g + b_g)
//   out = (1 - G) * a_x + G * a_c
//
// G near 0 keeps the source context, G near 1 follows the instruction. The
// residual connection around the block is applied by the caller.

#include <optional>
#include <string>

#include "av2av/nn.hpp"

namespace av2av::siga {

enum class Which { source, instruction };

template <typename S>
struct GateMap {
  Mat<S> g;  // (n, d), strictly inside (0, 1) unless clamped
};

template <typename S>
struct SigaSite {
  nn::Linear<S> wq;
  nn::Linear<S> wk_src, wv_src;
  nn::Linear<S> wk_instr, wv_instr;
  nn::Linear<S> gate;  // 3d -> d with bias, zero-initialized
  int heads = 1;
  // Test hook: when set, G is replaced by this constant and receives no gradient.
  std::optional<S> gate_clamp;

  static SigaSite make(nn::ParamStore<S>& store, const std::string& name, nn::Branch branch,
                       int width, int heads, Rng& rng);

  int width() const { return wq.out_features(); }

  struct BranchCache {
    Mat<S> cond;
    nn::AttentionCache<S> attn;
  };

  struct Cache {
    Mat<S> f_h;
    Mat<S> q;
    BranchCache src, instr;
    Mat<S> a_src, a_instr;
    Mat<S> gate_in;
    Mat<S> g;
  };

  Mat<S> project_query(const Mat<S>& f_h) const { return wq.forward(f_h); }

  // Attends one conditioning stream with an already projected query.
  // An empty instruction stream yields zeros; an empty source stream throws.
  Mat<S> attend_branch(const Mat<S>& q, const Mat<S>& f_cond, Which which, BranchCache* cache) const;

  // Gated fusion of the two attended branches.
  Mat<S> fuse(const Mat<S>& a_src, const Mat<S>& a_instr, const Mat<S>& f_h, GateMap<S>* gate_out,
              Cache* cache) const;

  Mat<S> forward(const Mat<S>& f_h, const Mat<S>& f_x, const Mat<S>& f_c, Cache* cache,
                 GateMap<S>* gate_out = nullptr) const;

  struct Grads {
    Mat<S> df_h, df_x, df_c;
  };
  Grads backward(const Mat<S>& dout, const Cache& cache) const;
};

}  // namespace av2av::siga
