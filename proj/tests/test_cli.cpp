#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "av2av/cli.hpp"
#include "fixtures.hpp"

using namespace av2av;
using namespace av2av::cli;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_error(const std::string& text) {
  try {
    parse_run_config(text, "run.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

RunConfig toy_run(const std::filesystem::path& root) {
  RunConfig c;
  c.paths.data_dir = root / "data";
  c.paths.run_dir = root / "run";
  c.paths.outputs_dir = root / "run/outputs";
  c.paths.report_dir = root / "run/report";
  c.train_pairs = 6;
  c.eval_pairs = 2;
  c.model = fixture::toy_model();
  c.train = fixture::toy_train(2);
  c.solve.steps = 2;
  return c;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const std::string text = to_json(RunConfig{}).dump(2);
  const RunConfig c = parse_run_config(text);
  EXPECT_EQ(to_json(c).dump(2), text);
  EXPECT_EQ(parse_run_config("{\"version\": 1}").model, backbone::ModelConfig{});
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_NE(config_error("{\n  \"version\": 1,\n  \"model\": {\n    \"depth\": \"four\"\n  }\n}").find("run.json:4"),
            std::string::npos);
  const std::string unknown = config_error("{\n  \"version\": 1,\n  \"trian\": {}\n}");
  EXPECT_NE(unknown.find("run.json:3"), std::string::npos) << unknown;
  EXPECT_NE(unknown.find("trian"), std::string::npos) << unknown;
  EXPECT_NE(config_error("{\n  \"version\": 1,\n  \"model\": {\n    \"depth\": 4,,\n  }\n}").find("run.json:4"),
            std::string::npos);
  EXPECT_NE(config_error("{\"model\": {}}").find("version"), std::string::npos);
  EXPECT_NE(config_error("{\n\"version\": 2\n}").find("run.json:2"), std::string::npos);
}

TEST(Config, EnvOverrides) {
  RunConfig c;
  ::setenv("AV2AV_DATA_DIR", "/tmp/elsewhere", 1);
  apply_env_overrides(c);
  ::unsetenv("AV2AV_DATA_DIR");
  EXPECT_EQ(c.paths.data_dir, "/tmp/elsewhere");
}

TEST(Commands, StageTwoNeedsStageOne) {
  const auto root = fixture::scratch("cli_stage2");
  const RunConfig c = toy_run(root);
  std::ostringstream out;
  ASSERT_EQ(cmd_synth(c, out), 0);
  try {
    cmd_train(c, "2", false, out);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("stage1_video"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("stage1_audio"), std::string::npos) << e.what();
  }
  EXPECT_THROW(cmd_train(c, "3", false, out), ConfigError);
  std::filesystem::remove_all(root);
}

TEST(Commands, EndToEndToyPipeline) {
  const auto root = fixture::scratch("cli_e2e");
  const RunConfig c = toy_run(root);
  std::ostringstream out;
  ASSERT_EQ(cmd_synth(c, out), 0);
  const std::string manifest = slurp(c.paths.data_dir / "manifest.json");
  ASSERT_EQ(cmd_synth(c, out), 0);
  EXPECT_EQ(slurp(c.paths.data_dir / "manifest.json"), manifest);

  ASSERT_EQ(cmd_train(c, "all", false, out), 0);
  for (const char* f : {"stage1_video.ckpt", "stage1_audio.ckpt", "stage2.ckpt"})
    EXPECT_TRUE(std::filesystem::exists(c.paths.run_dir / f)) << f;

  const auto data = synthworld::load_manifest(c.paths.data_dir);
  const auto& e = *data.split(synthworld::Split::eval)[0];
  EditFlags flags;
  flags.steps = 2;
  flags.export_png = root / "png";
  flags.export_wav = root / "out.wav";
  const auto ckpt = c.paths.run_dir / "stage2.ckpt";
  ASSERT_EQ(cmd_edit(ckpt, data.source_file(e), e.instruction, root / "a.clip", flags, out), 0);
  ASSERT_EQ(cmd_edit(ckpt, data.source_file(e), e.instruction, root / "b.clip", flags, out), 0);
  EXPECT_EQ(slurp(root / "a.clip"), slurp(root / "b.clip"));
  EXPECT_TRUE(std::filesystem::exists(root / "out.wav"));
  EXPECT_FALSE(std::filesystem::is_empty(root / "png"));
  EXPECT_THROW(cmd_edit(ckpt, data.source_file(e), "paint the red circle", root / "c.clip", flags, out),
               GrammarError);

  // eval with ground-truth outputs
  const auto gt = root / "gt";
  std::filesystem::create_directories(gt);
  for (const auto* x : data.split(synthworld::Split::eval))
    std::filesystem::copy_file(data.target_file(*x), gt / metrics::output_name(*x));
  ASSERT_EQ(cmd_eval(c.paths.data_dir, gt, root / "r1", out), 0);
  ASSERT_EQ(cmd_eval(c.paths.data_dir, gt, root / "r2", out), 0);
  EXPECT_EQ(slurp(root / "r1/report.json"), slurp(root / "r2/report.json"));
  const auto report = nlohmann::json::parse(slurp(root / "r1/report.json"));
  for (const auto& s : report.at("per_sample")) EXPECT_DOUBLE_EQ(s.at("ssim").get<double>(), 1.0);

  std::filesystem::remove(gt / metrics::output_name(e));
  try {
    cmd_eval(c.paths.data_dir, gt, root / "r3", out);
    FAIL();
  } catch (const IoError& err) {
    EXPECT_NE(std::string(err.what()).find(metrics::output_name(e)), std::string::npos) << err.what();
  }
  std::filesystem::remove_all(root);
}

TEST(Commands, AblationTableListsVariants) {
  std::vector<VariantResult> rs(2);
  rs[0].variant = Variant::full;
  rs[1].variant = Variant::no_source_concat;
  const std::string t = ablation_table(rs);
  EXPECT_NE(t.find(std::string(variant_name(Variant::full))), std::string::npos);
  EXPECT_NE(t.find(std::string(variant_name(Variant::no_source_concat))), std::string::npos);
}
