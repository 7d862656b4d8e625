#include <gtest/gtest.h>

#include <fstream>

#include "av2av/error.hpp"
#include "av2av/flowtrain.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace av2av;
using namespace av2av::flowtrain;

namespace {

std::map<std::string, MatF> init_params(const backbone::ModelConfig& cfg, const synthworld::DatasetManifest& data) {
  const codecs::Codec codec(codecs::CodecSpec{}, data.clip_config);
  const EditorModel<float> m(cfg, codecs::CodecSpec{}, codec.latent_shape());
  return snapshot(m.params());
}

nn::Branch branch_of(const backbone::ModelConfig& cfg, const synthworld::DatasetManifest& data,
                     const std::string& name) {
  const codecs::Codec codec(codecs::CodecSpec{}, data.clip_config);
  const EditorModel<float> m(cfg, codecs::CodecSpec{}, codec.latent_shape());
  return m.params().find(name)->branch;
}

GradSample toy_sample(const EditorModel<double>& m, std::uint64_t seed, bool bypass) {
  Rng rng(seed);
  const auto& s = m.latent_shape();
  GradSample g;
  g.t = 0.37;
  g.noise_v = randn<double>(s.video_tokens(), s.video_channels, rng);
  g.target_v = randn<double>(s.video_tokens(), s.video_channels, rng);
  g.source_v = randn<double>(s.video_tokens(), s.video_channels, rng);
  g.noise_a = randn<double>(s.audio_tokens, s.audio_channels, rng);
  g.target_a = randn<double>(s.audio_tokens, s.audio_channels, rng);
  g.source_a = randn<double>(s.audio_tokens, s.audio_channels, rng);
  g.tokens = {1, 2, 3};
  g.flags.bypass_cross_modal = bypass;
  return g;
}

}  // namespace

TEST(FlowMatching, InterpolantEndpoints) {
  Rng rng(1);
  const MatD eps = randn<double>(6, 5, rng), z1 = randn<double>(6, 5, rng);
  EXPECT_EQ(interpolate<double>(eps, z1, 0.0), eps);
  EXPECT_EQ(interpolate<double>(eps, z1, 1.0), z1);
  EXPECT_DOUBLE_EQ(interpolate<double>(MatD::Zero(1, 1), MatD::Constant(1, 1, 2.0), 0.5)(0, 0), 1.0);
  EXPECT_THROW(interpolate<double>(eps, z1, 1.5), Error);
  EXPECT_THROW(interpolate<double>(eps, z1, -0.1), Error);
}

TEST(FlowMatching, VelocityIsTimeDerivative) {
  Rng rng(2);
  const MatD eps = randn<double>(6, 5, rng), z1 = randn<double>(6, 5, rng);
  const MatD u = velocity_target<double>(eps, z1);
  const double h = 1e-5;
  for (double t : {0.1, 0.5, 0.9}) {
    const MatD fd = (interpolate<double>(eps, z1, t + h) - interpolate<double>(eps, z1, t - h)) / (2 * h);
    EXPECT_LT(oracle::max_abs_diff(fd, u), 1e-6);
  }
  EXPECT_TRUE((velocity_target<double>(z1, z1).array() == 0.0).all());
  EXPECT_EQ(velocity_target<double>(MatD::Zero(6, 5), z1), z1);
}

TEST(FlowMatching, LossArithmetic) {
  Rng rng(3);
  const MatD uv = randn<double>(8, 4, rng), ua = randn<double>(5, 3, rng);
  EXPECT_EQ(fm_loss<double>(&uv, &ua, &uv, &ua, 0.85, 0.15).total, 0.0);
  const MatD pv = uv.array() + 1.0, pa = ua.array() + 1.0;
  EXPECT_NEAR(fm_loss<double>(&pv, &pa, &uv, &ua, 0.85, 0.15).total, 1.0, 1e-12);
  const MatD other = randn<double>(5, 3, rng);
  EXPECT_EQ(fm_loss<double>(&pv, &pa, &uv, &ua, 0.85, 0.0).total,
            fm_loss<double>(&pv, &other, &uv, &ua, 0.85, 0.0).total);
  EXPECT_THROW(fm_loss<double>(&pv, nullptr, &uv, &ua, 0.85, 0.15), ShapeError);
}

TEST(FlowMatching, GradCheckToyModel) {
  backbone::ModelConfig cfg = fixture::toy_model(1, 8);
  codecs::LatentShape shape{2, 2, 2, 8, 4, 6};
  for (bool bypass : {false, true}) {
    EditorModel<double> m(cfg, codecs::CodecSpec{}, shape);
    Rng rng(4);
    for (auto& p : m.params())
      if (p.name.find("cross.wo") != std::string::npos || p.name.find("siga.gate") != std::string::npos)
        p.value = randn<double>(p.value.rows(), p.value.cols(), rng, 0.3);
    const auto rep = grad_check(m, toy_sample(m, 5, bypass), 0.85, 0.15, 300, 1e-5, 9);
    EXPECT_GT(rep.checked, 100);
    EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst_param;
  }
}

TEST(FlowMatching, TraceSmoothing) {
  const auto s = smooth({1, 2, 3, 4, 5}, 3);
  ASSERT_EQ(s.size(), 5U);
  EXPECT_DOUBLE_EQ(s[0], 1.0);
  EXPECT_DOUBLE_EQ(s[1], 1.5);
  EXPECT_DOUBLE_EQ(s[2], 2.0);
  EXPECT_DOUBLE_EQ(s[4], 4.0);
}

TEST(Training, StageOneIsolatesBranches) {
  const auto data = fixture::tiny_dataset(8, 2);
  const auto cfg = fixture::toy_model();
  const auto init = init_params(cfg, data);
  const auto ck = train_stage1(nn::Branch::audio, cfg, fixture::toy_train(20), data, codecs::CodecSpec{});
  int changed_audio = 0;
  for (const auto& [name, value] : ck.params) {
    const nn::Branch b = branch_of(cfg, data, name);
    if (b == nn::Branch::video) {
      EXPECT_TRUE(value == init.at(name)) << name;
    } else if (b == nn::Branch::audio) {
      changed_audio += !(value == init.at(name));
    }
  }
  EXPECT_GT(changed_audio, 0);
}

TEST(Training, StageTwoMergeAveragesShared) {
  const auto data = fixture::tiny_dataset(8, 2);
  const auto cfg = fixture::toy_model();
  const auto tc = fixture::toy_train(5);
  const auto v = train_stage1(nn::Branch::video, cfg, tc, data, codecs::CodecSpec{});
  const auto a = train_stage1(nn::Branch::audio, cfg, tc, data, codecs::CodecSpec{});
  const auto merged = merge_stage1(v, a);
  EXPECT_TRUE(merged.at("video.head.weight") == v.params.at("video.head.weight"));
  EXPECT_TRUE(merged.at("audio.head.weight") == a.params.at("audio.head.weight"));
  const MatF avg = 0.5F * (v.params.at("instr.table") + a.params.at("instr.table"));
  EXPECT_TRUE(merged.at("instr.table") == avg);
  EXPECT_THROW(merge_stage1(a, v), ConfigError);
}

TEST(Training, DeterministicTrace) {
  const auto data = fixture::tiny_dataset(8, 2);
  const auto cfg = fixture::toy_model();
  const auto a = train_stage1(nn::Branch::video, cfg, fixture::toy_train(6), data, codecs::CodecSpec{});
  const auto b = train_stage1(nn::Branch::video, cfg, fixture::toy_train(6), data, codecs::CodecSpec{});
  ASSERT_EQ(a.trace.size(), 6U);
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].loss_total, b.trace[i].loss_total);
}

TEST(Training, ResumeMatchesUninterrupted) {
  const auto data = fixture::tiny_dataset(8, 2);
  const auto cfg = fixture::toy_model();
  auto tc = fixture::toy_train(10);
  tc.checkpoint_every = 5;
  const auto full = train_stage1(nn::Branch::video, cfg, tc, data, codecs::CodecSpec{});

  const auto dir = fixture::scratch("resume");
  RunOptions first;
  first.out_dir = dir;
  first.stop_after = 4;
  const auto partial = train_stage1(nn::Branch::video, cfg, tc, data, codecs::CodecSpec{}, first);
  EXPECT_EQ(partial.step, 4);
  RunOptions second;
  second.out_dir = dir;
  second.resume = dir / "stage1_video.ckpt";
  const auto resumed = train_stage1(nn::Branch::video, cfg, tc, data, codecs::CodecSpec{}, second);
  ASSERT_EQ(resumed.trace.size(), full.trace.size());
  for (std::size_t i = 0; i < full.trace.size(); ++i) EXPECT_EQ(resumed.trace[i].loss_total, full.trace[i].loss_total);
  for (const auto& [name, value] : full.params) EXPECT_TRUE(resumed.params.at(name) == value) << name;
  EXPECT_EQ(read_trace_csv(dir / "stage1_video_trace.csv").size(), full.trace.size());
  std::filesystem::remove_all(dir);
}

TEST(Training, CheckpointRoundTrip) {
  const auto data = fixture::tiny_dataset(8, 2);
  const auto cfg = fixture::toy_model();
  const auto ck = train_stage1(nn::Branch::video, cfg, fixture::toy_train(3), data, codecs::CodecSpec{});
  const auto path = fixture::scratch("ckpt") ;
  std::filesystem::create_directories(path);
  save_checkpoint(path / "a.ckpt", ck);
  const auto back = load_checkpoint(path / "a.ckpt");
  EXPECT_EQ(back.model, ck.model);
  EXPECT_EQ(back.train, ck.train);
  EXPECT_EQ(back.step, ck.step);
  EXPECT_EQ(back.adam_steps, ck.adam_steps);
  for (const auto& [name, value] : ck.params) EXPECT_TRUE(back.params.at(name) == value) << name;
  for (const auto& [name, st] : ck.adam) {
    EXPECT_TRUE(back.adam.at(name).m == st.m);
    EXPECT_TRUE(back.adam.at(name).v == st.v);
  }
  const auto model = model_from_checkpoint(back);
  EXPECT_TRUE(model->params().find("video.head.weight")->value == ck.params.at("video.head.weight"));
  std::ofstream(path / "bad.ckpt") << "garbage";
  EXPECT_THROW(load_checkpoint(path / "bad.ckpt"), IoError);
  std::filesystem::remove_all(path);
}

TEST(Training, ArchitectureMismatchRejected) {
  const auto data = fixture::tiny_dataset(8, 2);
  auto ck = train_stage1(nn::Branch::video, fixture::toy_model(), fixture::toy_train(1), data, codecs::CodecSpec{});
  ck.model.width = 32;
  EXPECT_THROW(model_from_checkpoint(ck), Error);
}

TEST(Training, AdamRespectsMask) {
  nn::ParamStore<float> store;
  auto& a = store.add("a", nn::Branch::video, 2, 2);
  auto& b = store.add("b", nn::Branch::audio, 2, 2);
  a.grad.setConstant(1.0F);
  b.grad.setConstant(1.0F);
  TrainConfig cfg;
  AdamW opt(cfg);
  opt.step(store, [](nn::Branch br) { return br == nn::Branch::video; });
  EXPECT_TRUE((a.value.array() != 0.0F).all());
  EXPECT_TRUE((b.value.array() == 0.0F).all());
  // first Adam step moves each weight by lr after bias correction
  EXPECT_NEAR(a.value(0, 0), -cfg.lr, 1e-6);
}
