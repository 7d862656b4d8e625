#pragma once

// Small on-disk datasets and model configs shared by the test binaries.

#include <filesystem>
#include <string>

#include "av2av/dataset.hpp"
#include "av2av/flowtrain.hpp"

namespace av2av::fixture {

inline std::filesystem::path scratch(const std::string& name, bool clean = true) {
  auto p = std::filesystem::temp_directory_path() / ("av2av_test_" + name);
  if (clean) std::filesystem::remove_all(p);
  return p;
}

// Builds (or reuses) a verified dataset under the temp directory.
inline synthworld::DatasetManifest tiny_dataset(int n_train, int n_eval, std::uint64_t seed = 2024) {
  synthworld::DatasetConfig cfg;
  cfg.seed = seed;
  const auto dir = scratch("data_" + std::to_string(n_train) + "_" + std::to_string(n_eval) + "_" +
                               std::to_string(seed),
                           false);
  if (std::filesystem::exists(dir / "manifest.json")) {
    auto m = synthworld::load_manifest(dir);
    if (m.entries.size() == static_cast<std::size_t>(n_train + n_eval)) return m;
  }
  std::filesystem::remove_all(dir);
  return synthworld::build_dataset(cfg, n_train, n_eval, dir);
}

inline backbone::ModelConfig toy_model(int depth = 1, int width = 16) {
  backbone::ModelConfig c;
  c.depth = depth;
  c.width = width;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.time_dim = 8;
  return c;
}

inline flowtrain::TrainConfig toy_train(int steps) {
  flowtrain::TrainConfig t;
  t.steps_stage1_video = steps;
  t.steps_stage1_audio = steps;
  t.steps_stage2 = steps;
  t.batch_size = 2;
  t.checkpoint_every = 0;
  return t;
}

}  // namespace av2av::fixture
