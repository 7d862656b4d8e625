#include <gtest/gtest.h>

#include <cmath>

#include "av2av/backbone.hpp"
#include "av2av/instruction.hpp"
#include "av2av/nn.hpp"
#include "av2av/siga.hpp"
#include "oracles.hpp"

using namespace av2av;

namespace {

MatD linear_oracle(const nn::Linear<double>& l, const MatD& x) {
  MatD y = oracle::matmul(x, l.weight->value);
  if (l.bias != nullptr)
    for (Eigen::Index i = 0; i < y.rows(); ++i) y.row(i) += l.bias->value;
  return y;
}

codecs::LatentShape small_shape() {
  codecs::LatentShape s;
  s.t = 2;
  s.h = 2;
  s.w = 2;
  s.video_channels = 8;
  s.audio_tokens = 4;
  s.audio_channels = 6;
  return s;
}

backbone::ModelConfig small_config() {
  backbone::ModelConfig c;
  c.depth = 2;
  c.width = 16;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.time_dim = 8;
  return c;
}

struct Inputs {
  MatD nv, na, sv, sa;
  std::vector<int> tokens;
};

Inputs random_inputs(const codecs::LatentShape& s, std::uint64_t seed) {
  Rng rng(seed);
  Inputs in;
  in.nv = randn<double>(s.video_tokens(), s.video_channels, rng);
  in.na = randn<double>(s.audio_tokens, s.audio_channels, rng);
  in.sv = randn<double>(s.video_tokens(), s.video_channels, rng);
  in.sa = randn<double>(s.audio_tokens, s.audio_channels, rng);
  in.tokens = instruction::tokenize("remove the red circle");
  return in;
}

}  // namespace

// ---- attention --------------------------------------------------------------

TEST(Attention, SingleKeyReturnsValue) {
  Rng rng(1);
  const MatD q = randn<double>(3, 8, rng);
  const MatD k = randn<double>(1, 8, rng);
  const MatD v = randn<double>(1, 8, rng);
  const MatD out = nn::attention<double>(q, k, v, 2, nullptr);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_LT((out.row(i) - v.row(0)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Attention, IdenticalTokensIdenticalOutputs) {
  Rng rng(2);
  nn::ParamStore<double> store;
  auto site = nn::AttentionSite<double>::make(store, "a", nn::Branch::shared, 8, 8, 8, 2, true, rng);
  MatD x = randn<double>(4, 8, rng);
  x.row(3) = x.row(1);
  const MatD y = site.forward(x, x, nullptr);
  EXPECT_EQ(y.row(1), y.row(3));
}

TEST(Attention, MatchesNaiveOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    nn::ParamStore<double> store;
    auto site = nn::AttentionSite<double>::make(store, "a", nn::Branch::shared, 12, 10, 16, 4, true, rng);
    const MatD x = randn<double>(8, 12, rng);
    const MatD y = randn<double>(8, 10, rng);
    const MatD ctx = oracle::naive_attention(linear_oracle(site.wq, x), linear_oracle(site.wk, y),
                                             linear_oracle(site.wv, y), 4);
    EXPECT_LT(oracle::max_abs_diff(site.forward(x, y, nullptr), linear_oracle(site.wo, ctx)), 1e-12);
  }
}

TEST(Attention, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  const MatD q = randn<double>(5, 8, rng);
  const MatD k = randn<double>(6, 8, rng);
  const MatD v = randn<double>(6, 8, rng);
  const MatD w = randn<double>(5, 8, rng);
  nn::AttentionCache<double> cache;
  nn::attention<double>(q, k, v, 2, &cache);
  const auto g = nn::attention_backward<double>(w, cache, 2);
  auto loss = [&](const MatD& qq, const MatD& kk, const MatD& vv) {
    return nn::attention<double>(qq, kk, vv, 2, nullptr).cwiseProduct(w).sum();
  };
  const double h = 1e-6;
  for (int i = 0; i < 10; ++i) {
    const Eigen::Index r = i % 5, c = (3 * i) % 8;
    MatD qp = q, qm = q;
    qp(r, c) += h;
    qm(r, c) -= h;
    EXPECT_NEAR((loss(qp, k, v) - loss(qm, k, v)) / (2 * h), g.dq(r, c), 1e-7);
    MatD kp = k, km = k;
    kp(r, c) += h;
    km(r, c) -= h;
    EXPECT_NEAR((loss(q, kp, v) - loss(q, km, v)) / (2 * h), g.dk(r, c), 1e-7);
    MatD vp = v, vm = v;
    vp(r, c) += h;
    vm(r, c) -= h;
    EXPECT_NEAR((loss(q, k, vp) - loss(q, k, vm)) / (2 * h), g.dv(r, c), 1e-7);
  }
}

// ---- SIGA -------------------------------------------------------------------

class SigaTest : public ::testing::Test {
 protected:
  SigaTest() : rng(5), site(siga::SigaSite<double>::make(store, "s", nn::Branch::shared, 16, 4, rng)) {}
  Rng rng;
  nn::ParamStore<double> store;
  siga::SigaSite<double> site;
};

TEST_F(SigaTest, ZeroInitGateIsHalf) {
  const MatD fh = randn<double>(8, 16, rng), fx = randn<double>(8, 16, rng), fc = randn<double>(5, 16, rng);
  siga::GateMap<double> g;
  const MatD out = site.forward(fh, fx, fc, nullptr, &g);
  EXPECT_TRUE((g.g.array() == 0.5).all());
  const MatD q = site.project_query(fh);
  const MatD ax = site.attend_branch(q, fx, siga::Which::source, nullptr);
  const MatD ac = site.attend_branch(q, fc, siga::Which::instruction, nullptr);
  EXPECT_LT(oracle::max_abs_diff(out, 0.5 * (ax + ac)), 1e-14);
}

TEST_F(SigaTest, GateStrictlyInsideUnitInterval) {
  site.gate.weight->value = randn<double>(48, 16, rng, 0.5);
  site.gate.bias->value = randn<double>(1, 16, rng, 0.5);
  for (int i = 0; i < 1000; ++i) {
    const MatD fh = randn<double>(1, 16, rng), fx = randn<double>(3, 16, rng), fc = randn<double>(2, 16, rng);
    siga::GateMap<double> g;
    site.forward(fh, fx, fc, nullptr, &g);
    ASSERT_TRUE((g.g.array() > 0.0).all() && (g.g.array() < 1.0).all());
  }
}

TEST_F(SigaTest, ClampPinsBranchBitExactly) {
  site.gate.weight->value = randn<double>(48, 16, rng);
  const MatD fh = randn<double>(8, 16, rng), fx = randn<double>(8, 16, rng), fc = randn<double>(5, 16, rng);
  const MatD q = site.project_query(fh);
  const MatD ax = site.attend_branch(q, fx, siga::Which::source, nullptr);
  const MatD ac = site.attend_branch(q, fc, siga::Which::instruction, nullptr);
  site.gate_clamp = 0.0;
  EXPECT_EQ(site.forward(fh, fx, fc, nullptr), ax);
  site.gate_clamp = 1.0;
  EXPECT_EQ(site.forward(fh, fx, fc, nullptr), ac);
}

TEST_F(SigaTest, StrongNegativeBiasPrefersSource) {
  site.gate.bias->value.setConstant(-20.0);
  const MatD fh = randn<double>(8, 16, rng), fx = randn<double>(8, 16, rng), fc = randn<double>(5, 16, rng);
  const MatD q = site.project_query(fh);
  const MatD ax = site.attend_branch(q, fx, siga::Which::source, nullptr);
  const MatD ac = site.attend_branch(q, fc, siga::Which::instruction, nullptr);
  const MatD out = site.forward(fh, fx, fc, nullptr);
  EXPECT_LT(oracle::max_abs_diff(out, ax), oracle::sigmoid(-20.0) * (ac - ax).cwiseAbs().maxCoeff() + 1e-15);
  EXPECT_LT(oracle::max_abs_diff(out, ax), 1e-8);
}

TEST_F(SigaTest, EqualBranchesIgnoreGate) {
  site.gate.weight->value = randn<double>(48, 16, rng);
  const MatD fh = randn<double>(4, 16, rng), fx = randn<double>(4, 16, rng);
  const MatD a = randn<double>(4, 16, rng);
  EXPECT_LT(oracle::max_abs_diff(site.fuse(a, a, fh, nullptr, nullptr), a), 1e-14);
}

TEST_F(SigaTest, BranchesMatchOracleAndShareQuery) {
  for (int trial = 0; trial < 20; ++trial) {
    const MatD fh = randn<double>(8, 16, rng), fx = randn<double>(8, 16, rng), fc = randn<double>(8, 16, rng);
    const MatD q = linear_oracle(site.wq, fh);
    EXPECT_LT(oracle::max_abs_diff(site.attend_branch(q, fx, siga::Which::source, nullptr),
                                   oracle::naive_attention(q, linear_oracle(site.wk_src, fx),
                                                           linear_oracle(site.wv_src, fx), 4)),
              1e-12);
    EXPECT_LT(oracle::max_abs_diff(site.attend_branch(q, fc, siga::Which::instruction, nullptr),
                                   oracle::naive_attention(q, linear_oracle(site.wk_instr, fc),
                                                           linear_oracle(site.wv_instr, fc), 4)),
              1e-12);
  }
  // one query map, two key/value pairs and the gate
  int queries = 0;
  for (const auto& p : store) queries += p.name.find(".wq") != std::string::npos;
  EXPECT_EQ(queries, 1);
  EXPECT_EQ(store.scalar_count(), 5U * 16 * 16 + 48U * 16 + 16);
}

TEST_F(SigaTest, EmptyInstructionAndSource) {
  const MatD fh = randn<double>(4, 16, rng);
  const MatD q = site.project_query(fh);
  EXPECT_EQ(site.attend_branch(q, MatD(0, 16), siga::Which::instruction, nullptr), MatD::Zero(4, 16));
  EXPECT_THROW(site.attend_branch(q, MatD(0, 16), siga::Which::source, nullptr), Error);
}

TEST_F(SigaTest, BackwardMatchesFiniteDifferences) {
  site.gate.weight->value = randn<double>(48, 16, rng, 0.3);
  const MatD fh = randn<double>(5, 16, rng), fx = randn<double>(5, 16, rng), fc = randn<double>(3, 16, rng);
  const MatD w = randn<double>(5, 16, rng);
  siga::SigaSite<double>::Cache cache;
  site.forward(fh, fx, fc, &cache);
  store.zero_grad();
  const auto g = site.backward(w, cache);
  auto loss = [&] { return site.forward(fh, fx, fc, nullptr).cwiseProduct(w).sum(); };
  const double h = 1e-6;
  for (auto& p : store) {
    for (int i = 0; i < 4; ++i) {
      const Eigen::Index idx = (i * 37) % p.value.size();
      const double keep = p.value.data()[idx];
      p.value.data()[idx] = keep + h;
      const double up = loss();
      p.value.data()[idx] = keep - h;
      const double dn = loss();
      p.value.data()[idx] = keep;
      EXPECT_NEAR((up - dn) / (2 * h), p.grad.data()[idx], 1e-6) << p.name;
    }
  }
  MatD fhp = fh, fhm = fh;
  fhp(1, 2) += h;
  fhm(1, 2) -= h;
  EXPECT_NEAR((site.forward(fhp, fx, fc, nullptr).cwiseProduct(w).sum() -
               site.forward(fhm, fx, fc, nullptr).cwiseProduct(w).sum()) / (2 * h),
              g.df_h(1, 2), 1e-6);
}

// ---- backbone ---------------------------------------------------------------

TEST(Backbone, ConcatSource) {
  Rng rng(6);
  const MatD a = randn<double>(4, 16, rng);
  const MatD z = MatD::Zero(4, 16);
  const MatD c = backbone::concat_source<double>(a, z);
  EXPECT_EQ(c.cols(), 32);
  EXPECT_TRUE((c.rightCols(16).array() == 0.0).all());
  const auto [l, r] = backbone::split_channels<double>(c, 16);
  EXPECT_EQ(l, a);
  EXPECT_EQ(r, z);
  EXPECT_THROW(backbone::concat_source<double>(a, MatD::Zero(3, 16)), ShapeError);
}

TEST(Backbone, InstructionEmbedding) {
  backbone::EditorModel<double> m(small_config(), codecs::CodecSpec{}, small_shape());
  EXPECT_EQ(m.embed_instruction({}).rows(), 0);
  EXPECT_EQ(m.embed_instruction({3, 5}), m.embed_instruction({3, 5}));
  const MatD a = m.embed_instruction({3});
  const MatD b = m.embed_instruction({4});
  EXPECT_NE(a, b);
  EXPECT_THROW(m.embed_instruction({64}), ShapeError);
}

TEST(Backbone, DeterministicAndFinite) {
  backbone::EditorModel<double> m(small_config(), codecs::CodecSpec{}, small_shape());
  backbone::EditorModel<double> m2(small_config(), codecs::CodecSpec{}, small_shape());
  const Inputs in = random_inputs(small_shape(), 7);
  const auto a = m.forward(0.3, in.nv, in.na, in.sv, in.sa, in.tokens, {});
  const auto b = m2.forward(0.3, in.nv, in.na, in.sv, in.sa, in.tokens, {});
  EXPECT_EQ(a.video, b.video);
  EXPECT_EQ(a.audio, b.audio);
  EXPECT_TRUE(a.video.allFinite() && a.audio.allFinite());
  EXPECT_EQ(a.video.rows(), 8);
  EXPECT_EQ(a.video.cols(), 8);
  EXPECT_EQ(a.audio.rows(), 4);
  EXPECT_EQ(a.audio.cols(), 6);
}

TEST(Backbone, TimestepChangesOutput) {
  backbone::EditorModel<double> m(small_config(), codecs::CodecSpec{}, small_shape());
  const Inputs in = random_inputs(small_shape(), 8);
  const auto a = m.forward(0.1, in.nv, in.na, in.sv, in.sa, in.tokens, {});
  const auto b = m.forward(0.9, in.nv, in.na, in.sv, in.sa, in.tokens, {});
  EXPECT_GT(oracle::max_abs_diff(a.video, b.video), 1e-6);
  EXPECT_GT(oracle::max_abs_diff(a.audio, b.audio), 1e-6);
}

TEST(Backbone, BypassIsolatesStreams) {
  backbone::EditorModel<double> m(small_config(), codecs::CodecSpec{}, small_shape());
  Rng rng(9);
  for (auto& p : m.params())
    if (p.name.find(".cross.wo") != std::string::npos) p.value = randn<double>(p.value.rows(), p.value.cols(), rng, 0.3);
  const Inputs in = random_inputs(small_shape(), 10);
  const MatD na2 = randn<double>(4, 6, rng), sa2 = randn<double>(4, 6, rng);
  const MatD nv2 = randn<double>(8, 8, rng), sv2 = randn<double>(8, 8, rng);
  backbone::ForwardFlags bypass;
  bypass.bypass_cross_modal = true;
  const auto a = m.forward(0.4, in.nv, in.na, in.sv, in.sa, in.tokens, bypass);
  const auto b = m.forward(0.4, in.nv, na2, in.sv, sa2, in.tokens, bypass);
  const auto c = m.forward(0.4, nv2, in.na, sv2, in.sa, in.tokens, bypass);
  EXPECT_EQ(a.video, b.video);
  EXPECT_EQ(a.audio, c.audio);
  // without the bypass the streams interact
  const auto d = m.forward(0.4, in.nv, in.na, in.sv, in.sa, in.tokens, {});
  const auto e = m.forward(0.4, in.nv, na2, in.sv, sa2, in.tokens, {});
  EXPECT_GT(oracle::max_abs_diff(d.video, e.video), 1e-8);
  // skipping a stream requires the bypass
  backbone::ForwardFlags skip;
  skip.run_audio = false;
  EXPECT_THROW(m.forward(0.4, in.nv, in.na, in.sv, in.sa, in.tokens, skip), ConfigError);
  skip.bypass_cross_modal = true;
  EXPECT_EQ(m.forward(0.4, in.nv, in.na, in.sv, in.sa, in.tokens, skip).video, a.video);
}

TEST(Backbone, ZeroCrossValuesActAsIdentity) {
  backbone::EditorModel<double> m(small_config(), codecs::CodecSpec{}, small_shape());
  Rng rng(11);
  for (auto& p : m.params()) {
    if (p.name.find(".cross.wo") != std::string::npos) p.value = randn<double>(p.value.rows(), p.value.cols(), rng, 0.3);
    if (p.name.find(".cross.wv") != std::string::npos) p.value.setZero();
  }
  const Inputs in = random_inputs(small_shape(), 12);
  backbone::ForwardFlags bypass;
  bypass.bypass_cross_modal = true;
  const auto a = m.forward(0.6, in.nv, in.na, in.sv, in.sa, in.tokens, {});
  const auto b = m.forward(0.6, in.nv, in.na, in.sv, in.sa, in.tokens, bypass);
  EXPECT_LT(oracle::max_abs_diff(a.video, b.video), 1e-13);
  EXPECT_LT(oracle::max_abs_diff(a.audio, b.audio), 1e-13);
}

TEST(Backbone, CrossModalSiteMatchesOracle) {
  backbone::EditorModel<double> m(small_config(), codecs::CodecSpec{}, small_shape());
  Rng rng(13);
  const auto& site = m.stream(backbone::Stream::video).blocks[0].cross;
  for (int trial = 0; trial < 20; ++trial) {
    const MatD x = randn<double>(8, 16, rng), y = randn<double>(8, 16, rng);
    const MatD ctx = oracle::naive_attention(linear_oracle(site.wq, x), linear_oracle(site.wk, y),
                                             linear_oracle(site.wv, y), 2);
    EXPECT_LT(oracle::max_abs_diff(site.forward(x, y, nullptr), linear_oracle(site.wo, ctx)), 1e-12);
  }
}

TEST(Backbone, ConfigRejectsBadWidth) {
  auto cfg = small_config();
  cfg.width = 15;
  EXPECT_THROW(backbone::EditorModel<double>(cfg, codecs::CodecSpec{}, small_shape()), ConfigError);
}
