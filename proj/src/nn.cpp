#include "av2av/nn.hpp"

#include <cmath>
#include <numbers>

#include "av2av/error.hpp"

namespace av2av::nn {

std::string_view branch_name(Branch b) {
  switch (b) {
    case Branch::shared: return "shared";
    case Branch::video: return "video";
    case Branch::audio: return "audio";
    case Branch::engine: return "engine";
  }
  return "shared";
}

Branch parse_branch(std::string_view s) {
  if (s == "shared") return Branch::shared;
  if (s == "video") return Branch::video;
  if (s == "audio") return Branch::audio;
  if (s == "engine") return Branch::engine;
  throw ConfigError("unknown parameter branch '" + std::string(s) + "'");
}

template <typename S>
Param<S>& ParamStore<S>::add(std::string name, Branch branch, Eigen::Index rows, Eigen::Index cols) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name " + name);
  Param<S>& p = params_.emplace_back();
  p.name = std::move(name);
  p.branch = branch;
  p.value = Mat<S>::Zero(rows, cols);
  p.grad = Mat<S>::Zero(rows, cols);
  return p;
}

template <typename S>
Param<S>* ParamStore<S>::find(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename S>
const Param<S>* ParamStore<S>::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename S>
void ParamStore<S>::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

template <typename S>
std::size_t ParamStore<S>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename S>
Linear<S> Linear<S>::make(ParamStore<S>& store, const std::string& name, Branch branch, int in,
                          int out, bool with_bias, Rng& rng, Init init, double stddev) {
  Linear l;
  l.weight = &store.add(name + ".weight", branch, in, out);
  switch (init) {
    case Init::xavier: {
      const double bound = std::sqrt(6.0 / (in + out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index i = 0; i < l.weight->value.size(); ++i)
        l.weight->value.data()[i] = static_cast<S>(dist(rng));
      break;
    }
    case Init::normal: l.weight->value = randn<S>(in, out, rng, stddev); break;
    case Init::zeros: break;
  }
  if (with_bias) l.bias = &store.add(name + ".bias", branch, 1, out);
  return l;
}

template <typename S>
Mat<S> Linear<S>::forward(const Mat<S>& x) const {
  if (x.cols() != weight->value.rows())
    throw ShapeError(weight->name + ": expected " + std::to_string(weight->value.rows()) +
                     " input features, got " + std::to_string(x.cols()));
  Mat<S> y(x.rows(), weight->value.cols());
  y.noalias() = x * weight->value;
  if (bias != nullptr) y.rowwise() += bias->value.row(0);
  return y;
}

template <typename S>
void Linear<S>::backward_params(const Mat<S>& x, const Mat<S>& dy) const {
  weight->grad.noalias() += x.transpose() * dy;
  if (bias != nullptr) bias->grad.row(0) += dy.colwise().sum();
}

template <typename S>
Mat<S> Linear<S>::backward(const Mat<S>& x, const Mat<S>& dy) const {
  backward_params(x, dy);
  Mat<S> dx(dy.rows(), weight->value.rows());
  dx.noalias() = dy * weight->value.transpose();
  return dx;
}

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, NormCache<S>* cache) {
  constexpr S kEps = static_cast<S>(1e-6);
  const Eigen::Index n = x.rows();
  const S inv_d = S(1) / static_cast<S>(x.cols());
  Mat<S> y(n, x.cols());
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mean = x.row(i).sum() * inv_d;
    const auto centered = (x.row(i).array() - mean).eval();
    const S var = centered.square().sum() * inv_d;
    rstd(i) = S(1) / std::sqrt(var + kEps);
    y.row(i) = centered * rstd(i);
  }
  if (cache != nullptr) {
    cache->y = y;
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const NormCache<S>& cache) {
  const S inv_d = S(1) / static_cast<S>(dy.cols());
  Mat<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const S mean_dy = dy.row(i).sum() * inv_d;
    const S mean_dyy = dy.row(i).dot(cache.y.row(i)) * inv_d;
    dx.row(i) = cache.rstd(i) *
                (dy.row(i).array() - mean_dy - cache.y.row(i).array() * mean_dyy).matrix();
  }
  return dx;
}

namespace {
template <typename S>
constexpr S kGeluC = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
template <typename S>
constexpr S kGeluA = static_cast<S>(0.044715);
}  // namespace

template <typename S>
Mat<S> gelu(const Mat<S>& x) {
  const auto a = x.array();
  return (S(0.5) * a * (S(1) + (kGeluC<S> * (a + kGeluA<S> * a.cube())).tanh())).matrix();
}

template <typename S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy) {
  const auto a = x.array();
  const auto th = (kGeluC<S> * (a + kGeluA<S> * a.cube())).tanh().eval();
  const auto dinner = kGeluC<S> * (S(1) + S(3) * kGeluA<S> * a.square());
  const auto d = S(0.5) * (S(1) + th) + S(0.5) * a * (S(1) - th.square()) * dinner;
  return (dy.array() * d).matrix();
}

template <typename S>
Mat<S> silu(const Mat<S>& x) {
  const auto a = x.array();
  return (a / (S(1) + (-a).exp())).matrix();
}

template <typename S>
Mat<S> silu_backward(const Mat<S>& x, const Mat<S>& dy) {
  const auto a = x.array();
  const auto sig = (S(1) / (S(1) + (-a).exp())).eval();
  return (dy.array() * (sig * (S(1) + a * (S(1) - sig)))).matrix();
}

template <typename S>
Mat<S> modulate(const Mat<S>& x, const RowVec<S>& shift, const RowVec<S>& scale) {
  Mat<S> y = x;
  y.array().rowwise() *= (scale.array() + S(1));
  y.rowwise() += shift;
  return y;
}

namespace {

// Row-wise softmax in place.
template <typename S>
void softmax_rows(Mat<S>& p) {
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mx = p.rowwise().maxCoeff();
  p.colwise() -= mx;
  p = p.array().exp().matrix();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> inv = p.rowwise().sum().cwiseInverse();
  p.array().colwise() *= inv.array();
}

}  // namespace

template <typename S>
Mat<S> attention(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, int heads,
                 AttentionCache<S>* cache) {
  const Eigen::Index d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows())
    throw ShapeError("attention: q/k/v shape mismatch");
  if (heads <= 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Mat<S> out = Mat<S>::Zero(q.rows(), d);
  if (cache != nullptr) {
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->probs.assign(static_cast<std::size_t>(heads), Mat<S>());
  }
  if (k.rows() == 0) return out;
  Mat<S> qh, kh, vh, oh;
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * dh;
    qh = q.middleCols(c0, dh) * scale;
    kh = k.middleCols(c0, dh);
    vh = v.middleCols(c0, dh);
    Mat<S> p(q.rows(), k.rows());
    p.noalias() = qh * kh.transpose();
    softmax_rows<S>(p);
    oh.noalias() = p * vh;
    out.middleCols(c0, dh) = oh;
    if (cache != nullptr) cache->probs[static_cast<std::size_t>(h)] = std::move(p);
  }
  return out;
}

template <typename S>
AttentionGrads<S> attention_backward(const Mat<S>& dout, const AttentionCache<S>& cache, int heads) {
  const Eigen::Index d = cache.q.cols();
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  AttentionGrads<S> g{Mat<S>(cache.q.rows(), d), Mat<S>(cache.k.rows(), d), Mat<S>(cache.v.rows(), d)};
  if (cache.k.rows() == 0) {
    g.dq.setZero();
    return g;
  }
  Mat<S> qh, kh, vh, doh, tmp, dp;
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * dh;
    const Mat<S>& p = cache.probs[static_cast<std::size_t>(h)];
    doh = dout.middleCols(c0, dh);
    vh = cache.v.middleCols(c0, dh);
    tmp.noalias() = p.transpose() * doh;
    g.dv.middleCols(c0, dh) = tmp;
    dp.noalias() = doh * vh.transpose();
    // softmax Jacobian, row-wise: ds = p * (dp - rowsum(dp * p))
    const Eigen::Matrix<S, Eigen::Dynamic, 1> rowdot = (dp.array() * p.array()).rowwise().sum();
    dp.colwise() -= rowdot;
    dp.array() *= p.array() * scale;
    kh = cache.k.middleCols(c0, dh);
    qh = cache.q.middleCols(c0, dh);
    tmp.noalias() = dp * kh;
    g.dq.middleCols(c0, dh) = tmp;
    tmp.noalias() = dp.transpose() * qh;
    g.dk.middleCols(c0, dh) = tmp;
  }
  return g;
}

template <typename S>
AttentionSite<S> AttentionSite<S>::make(ParamStore<S>& store, const std::string& name, Branch branch,
                                        int dq, int dkv, int width, int heads, bool with_output,
                                        Rng& rng) {
  AttentionSite a;
  a.heads = heads;
  a.has_output = with_output;
  a.wq = Linear<S>::make(store, name + ".wq", branch, dq, width, false, rng);
  a.wk = Linear<S>::make(store, name + ".wk", branch, dkv, width, false, rng);
  a.wv = Linear<S>::make(store, name + ".wv", branch, dkv, width, false, rng);
  if (with_output) a.wo = Linear<S>::make(store, name + ".wo", branch, width, width, false, rng);
  return a;
}

template <typename S>
Mat<S> AttentionSite<S>::forward(const Mat<S>& x, const Mat<S>& y, Cache* cache) const {
  Mat<S> ctx = attention<S>(wq.forward(x), wk.forward(y), wv.forward(y), heads,
                            cache != nullptr ? &cache->attn : nullptr);
  Mat<S> out = has_output ? wo.forward(ctx) : ctx;
  if (cache != nullptr) {
    cache->x = x;
    cache->y = y;
    cache->ctx = std::move(ctx);
  }
  return out;
}

template <typename S>
typename AttentionSite<S>::Grads AttentionSite<S>::backward(const Mat<S>& dout, const Cache& cache) const {
  const Mat<S> dctx = has_output ? wo.backward(cache.ctx, dout) : dout;
  const AttentionGrads<S> ag = attention_backward<S>(dctx, cache.attn, heads);
  Grads g;
  g.dx = wq.backward(cache.x, ag.dq);
  g.dy = wk.backward(cache.y, ag.dk);
  g.dy += wv.backward(cache.y, ag.dv);
  return g;
}

template <typename S>
RowVec<S> timestep_embedding(double t, int dim) {
  const int half = dim / 2;
  RowVec<S> e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    const double arg = 1000.0 * t * freq;
    e(i) = static_cast<S>(std::cos(arg));
    e(half + i) = static_cast<S>(std::sin(arg));
  }
  if (dim % 2 == 1) e(dim - 1) = S(0);
  return e;
}

#define AV2AV_INSTANTIATE_NN(S)                                                          \
  template class ParamStore<S>;                                                          \
  template struct Linear<S>;                                                             \
  template struct AttentionSite<S>;                                                      \
  template Mat<S> layer_norm<S>(const Mat<S>&, NormCache<S>*);                           \
  template Mat<S> layer_norm_backward<S>(const Mat<S>&, const NormCache<S>&);            \
  template Mat<S> gelu<S>(const Mat<S>&);                                                \
  template Mat<S> gelu_backward<S>(const Mat<S>&, const Mat<S>&);                        \
  template Mat<S> silu<S>(const Mat<S>&);                                                \
  template Mat<S> silu_backward<S>(const Mat<S>&, const Mat<S>&);                        \
  template Mat<S> modulate<S>(const Mat<S>&, const RowVec<S>&, const RowVec<S>&);        \
  template Mat<S> attention<S>(const Mat<S>&, const Mat<S>&, const Mat<S>&, int,         \
                               AttentionCache<S>*);                                      \
  template AttentionGrads<S> attention_backward<S>(const Mat<S>&, const AttentionCache<S>&, int); \
  template RowVec<S> timestep_embedding<S>(double, int);

AV2AV_INSTANTIATE_NN(float)
AV2AV_INSTANTIATE_NN(double)

}  // namespace av2av::nn
