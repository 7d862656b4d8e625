#include <gtest/gtest.h>

#include <cmath>

#include "av2av/inference.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace av2av;
using namespace av2av::inference;

namespace {

Field<double> exponential_field() {
  return [](double, const MatD& zv, const MatD& za) { return std::make_pair(zv, za); };
}

double final_error(Method m, int n) {
  SolveConfig cfg;
  cfg.method = m;
  cfg.steps = n;
  const MatD one = MatD::Ones(1, 1);
  const auto [zv, za] = solve_ode<double>(exponential_field(), one, one, cfg);
  return std::abs(zv(0, 0) - std::exp(1.0));
}

double log_slope(Method m) {
  const std::vector<int> ns{25, 50, 100, 200};
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int n : ns) {
    const double x = std::log(n), y = std::log(final_error(m, n));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double k = static_cast<double>(ns.size());
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

}  // namespace

TEST(Solver, ConvergenceOrders) {
  EXPECT_NEAR(log_slope(Method::euler), -1.0, 0.2);
  EXPECT_NEAR(log_slope(Method::midpoint), -2.0, 0.2);
  EXPECT_LT(final_error(Method::euler, 200) / std::exp(1.0), 0.01);
  EXPECT_NEAR(final_error(Method::euler, 200) / final_error(Method::euler, 100), 0.5, 0.05);
}

TEST(Solver, ConstantFieldExact) {
  Rng rng(1);
  const MatD z0v = randn<double>(4, 3, rng), z1v = randn<double>(4, 3, rng);
  const MatD z0a = randn<double>(2, 5, rng), z1a = randn<double>(2, 5, rng);
  const Field<double> f = [&](double, const MatD&, const MatD&) { return std::make_pair(MatD(z1v - z0v), MatD(z1a - z0a)); };
  for (Method m : {Method::euler, Method::midpoint})
    for (int n : {1, 7, 50}) {
      SolveConfig cfg;
      cfg.method = m;
      cfg.steps = n;
      const auto [v, a] = solve_ode<double>(f, z0v, z0a, cfg);
      EXPECT_LT(oracle::max_abs_diff(v, z1v), 1e-12);
      EXPECT_LT(oracle::max_abs_diff(a, z1a), 1e-12);
    }
}

TEST(Solver, SingleEulerStep) {
  Rng rng(2);
  const MatD z0 = randn<double>(3, 3, rng);
  const Field<double> f = [](double t, const MatD& zv, const MatD& za) {
    return std::make_pair(MatD(zv.array().sin() + t), MatD(za * 2.0));
  };
  SolveConfig cfg;
  cfg.steps = 1;
  const auto [v, a] = solve_ode<double>(f, z0, z0, cfg);
  EXPECT_LT(oracle::max_abs_diff(v, z0 + MatD(z0.array().sin())), 1e-15);
  EXPECT_LT(oracle::max_abs_diff(a, 3.0 * z0), 1e-15);
}

TEST(Solver, JointTimeStamps) {
  std::vector<StepStamp> stamps;
  SolveConfig cfg;
  cfg.steps = 10;
  cfg.method = Method::midpoint;
  const MatD one = MatD::Ones(1, 1);
  solve_ode<double>(exponential_field(), one, one, cfg, &stamps);
  ASSERT_FALSE(stamps.empty());
  for (const auto& s : stamps) EXPECT_EQ(s.t_video, s.t_audio);
  EXPECT_DOUBLE_EQ(stamps.front().t_video, 0.0);
}

TEST(Solver, RejectsBadInputs) {
  SolveConfig cfg;
  cfg.steps = 0;
  const MatD one = MatD::Ones(1, 1);
  EXPECT_THROW(solve_ode<double>(exponential_field(), one, one, cfg), ConfigError);
  cfg.steps = 5;
  const Field<double> nan_field = [](double, const MatD& zv, const MatD& za) {
    return std::make_pair(MatD(zv * std::nan("")), za);
  };
  EXPECT_THROW(solve_ode<double>(nan_field, one, one, cfg), NumericError);
  EXPECT_THROW(parse_method("rk4"), ConfigError);
}

TEST(Edit, DeterministicUnderSeed) {
  const auto data = fixture::tiny_dataset(8, 2);
  const auto ck = flowtrain::train_stage1(nn::Branch::video, fixture::toy_model(), fixture::toy_train(2), data,
                                          codecs::CodecSpec{});
  const auto& e = *data.split(synthworld::Split::eval)[0];
  const MediaClip src = read_clip(data.source_file(e));
  SolveConfig cfg;
  cfg.steps = 4;
  cfg.seed = 3;
  const MediaClip a = edit(src, instruction::make_instruction(e.instruction), ck, cfg);
  const MediaClip b = edit(src, instruction::make_instruction(e.instruction), ck, cfg);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.values_legal());
  cfg.seed = 4;
  EXPECT_NE(edit(src, instruction::make_instruction(e.instruction), ck, cfg).video, a.video);
  ClipConfig other = src.config;
  other.frames = 8;
  EXPECT_THROW(edit(MediaClip::blank(other), instruction::make_instruction(e.instruction), ck, cfg), ShapeError);
}
