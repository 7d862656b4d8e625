#include "av2av/siga.hpp"

#include "av2av/error.hpp"

namespace av2av::siga {

template <typename S>
SigaSite<S> SigaSite<S>::make(nn::ParamStore<S>& store, const std::string& name, nn::Branch branch,
                              int width, int heads, Rng& rng) {
  SigaSite s;
  s.heads = heads;
  s.wq = nn::Linear<S>::make(store, name + ".wq", branch, width, width, false, rng);
  s.wk_src = nn::Linear<S>::make(store, name + ".wk_src", branch, width, width, false, rng);
  s.wv_src = nn::Linear<S>::make(store, name + ".wv_src", branch, width, width, false, rng);
  s.wk_instr = nn::Linear<S>::make(store, name + ".wk_instr", branch, width, width, false, rng);
  s.wv_instr = nn::Linear<S>::make(store, name + ".wv_instr", branch, width, width, false, rng);
  s.gate = nn::Linear<S>::make(store, name + ".gate", branch, 3 * width, width, true, rng,
                               nn::Init::zeros);
  return s;
}

template <typename S>
Mat<S> SigaSite<S>::attend_branch(const Mat<S>& q, const Mat<S>& f_cond, Which which,
                                  BranchCache* cache) const {
  if (q.rows() == 0) throw ShapeError("siga: empty hidden state");
  if (f_cond.rows() == 0 && which == Which::source)
    throw ShapeError("siga: source branch requires at least one source token");
  const auto& wk = which == Which::source ? wk_src : wk_instr;
  const auto& wv = which == Which::source ? wv_src : wv_instr;
  if (cache != nullptr) cache->cond = f_cond;
  if (f_cond.rows() == 0) {
    if (cache != nullptr) cache->attn = {};
    return Mat<S>::Zero(q.rows(), q.cols());
  }
  return nn::attention<S>(q, wk.forward(f_cond), wv.forward(f_cond), heads,
                          cache != nullptr ? &cache->attn : nullptr);
}

template <typename S>
Mat<S> SigaSite<S>::fuse(const Mat<S>& a_src, const Mat<S>& a_instr, const Mat<S>& f_h,
                         GateMap<S>* gate_out, Cache* cache) const {
  if (a_src.rows() != f_h.rows() || a_instr.rows() != f_h.rows() || a_src.cols() != f_h.cols() ||
      a_instr.cols() != f_h.cols())
    throw ShapeError("siga fuse: inputs must share shape (n, d)");
  const Eigen::Index d = f_h.cols();
  Mat<S> gate_in(f_h.rows(), 3 * d);
  gate_in << a_src, a_instr, f_h;
  Mat<S> g;
  if (gate_clamp) {
    g = Mat<S>::Constant(f_h.rows(), d, *gate_clamp);
  } else {
    g = gate.forward(gate_in);
    g = (S(1) / (S(1) + (-g.array()).exp())).matrix();
  }
  Mat<S> out = a_src;
  if (gate_clamp && *gate_clamp == S(0)) {
    out = a_src;
  } else if (gate_clamp && *gate_clamp == S(1)) {
    out = a_instr;
  } else {
    out = ((S(1) - g.array()) * a_src.array() + g.array() * a_instr.array()).matrix();
  }
  if (gate_out != nullptr) gate_out->g = g;
  if (cache != nullptr) {
    cache->a_src = a_src;
    cache->a_instr = a_instr;
    cache->gate_in = std::move(gate_in);
    cache->g = std::move(g);
  }
  return out;
}

template <typename S>
Mat<S> SigaSite<S>::forward(const Mat<S>& f_h, const Mat<S>& f_x, const Mat<S>& f_c, Cache* cache,
                            GateMap<S>* gate_out) const {
  Mat<S> q = project_query(f_h);
  Mat<S> a_src = attend_branch(q, f_x, Which::source, cache != nullptr ? &cache->src : nullptr);
  Mat<S> a_instr =
      attend_branch(q, f_c, Which::instruction, cache != nullptr ? &cache->instr : nullptr);
  Mat<S> out = fuse(a_src, a_instr, f_h, gate_out, cache);
  if (cache != nullptr) {
    cache->f_h = f_h;
    cache->q = std::move(q);
  }
  return out;
}

template <typename S>
typename SigaSite<S>::Grads SigaSite<S>::backward(const Mat<S>& dout, const Cache& c) const {
  const Eigen::Index d = c.f_h.cols();
  const auto g = c.g.array();
  Mat<S> da_src = (dout.array() * (S(1) - g)).matrix();
  Mat<S> da_instr = (dout.array() * g).matrix();
  Grads out;
  out.df_h = Mat<S>::Zero(c.f_h.rows(), d);
  if (!gate_clamp) {
    const Mat<S> dz =
        (dout.array() * (c.a_instr.array() - c.a_src.array()) * g * (S(1) - g)).matrix();
    const Mat<S> dgate_in = gate.backward(c.gate_in, dz);
    da_src += dgate_in.leftCols(d);
    da_instr += dgate_in.middleCols(d, d);
    out.df_h += dgate_in.rightCols(d);
  }

  Mat<S> dq = Mat<S>::Zero(c.q.rows(), c.q.cols());
  {
    const auto ag = nn::attention_backward<S>(da_src, c.src.attn, heads);
    dq += ag.dq;
    out.df_x = wk_src.backward(c.src.cond, ag.dk);
    out.df_x += wv_src.backward(c.src.cond, ag.dv);
  }
  if (c.instr.cond.rows() > 0) {
    const auto ag = nn::attention_backward<S>(da_instr, c.instr.attn, heads);
    dq += ag.dq;
    out.df_c = wk_instr.backward(c.instr.cond, ag.dk);
    out.df_c += wv_instr.backward(c.instr.cond, ag.dv);
  } else {
    out.df_c = Mat<S>::Zero(0, d);
  }
  out.df_h += wq.backward(c.f_h, dq);
  return out;
}

template struct SigaSite<float>;
template struct SigaSite<double>;

}  // namespace av2av::siga
