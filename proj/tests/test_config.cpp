#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "spyro/config.hpp"

using namespace spyro;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_string(text, "run.yaml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("spyro_config_" + name)).string();
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
  EXPECT_EQ(parse_config_string(""), RunConfig{});
  EXPECT_EQ(parse_config_string("{}"), RunConfig{});
}

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c;
  EXPECT_EQ(parse_config_string(to_yaml(c)), c);
}

TEST(Config, RandomConfigsRoundTrip) {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    RunConfig c;
    c.seed = rng();
    c.training.seed = c.seed;
    c.grid.space = uniform01(rng) < 0.5 ? "so3" : "se3";
    c.grid.bounds = uniform01(rng) < 0.5 ? "detection" : "cubic";
    c.grid.t_hat = {standard_normal(rng), standard_normal(rng), 0.1 + uniform01(rng)};
    c.grid.diameter = 0.01 + uniform01(rng);
    c.model.type = std::vector<std::string>{"analytic", "uniform", "keypoint"}[uniform_index(rng, 3)];
    c.model.modes.clear();
    for (std::size_t m = 0; m < 1 + uniform_index(rng, 3); ++m) {
      const UnitQuaternion q = UnitQuaternion::random(rng);
      c.model.modes.push_back({{q.w(), q.x(), q.y(), q.z()}, 1e4 * uniform01(rng), {uniform01(rng), 0.0, 0.5},
                               uniform01(rng) / 10, 0.1 + uniform01(rng)});
    }
    if (uniform01(rng) < 0.5) c.model.symmetry.push_back({0.0, 0.0, 0.0, 1.0});
    c.model.camera.fx = 100 + 500 * uniform01(rng);
    c.model.features.heat_sigmas = {uniform01(rng) * 5 + 0.5, 7.25};
    c.model.features.seed = rng();
    c.model.weights = uniform01(rng) < 0.5 ? "" : "w.yaml";
    c.inference.k = 1 + static_cast<int>(uniform_index(rng, 1000));
    c.inference.depth = static_cast<int>(uniform_index(rng, 5));
    c.inference.has_true_pose = uniform01(rng) < 0.5;
    c.training.learning_rate = uniform01(rng) + 1e-3;
    c.training.importance_sampling = uniform01(rng) < 0.5;
    c.training.depth = static_cast<int>(uniform_index(rng, 5));
    c.plot.grayscale = uniform01(rng) < 0.5;
    c.plot.axis = {standard_normal(rng), standard_normal(rng), 1.0};
    const std::string text = to_yaml(c);
    EXPECT_EQ(parse_config_string(text), c) << text;
  }
}

TEST(Config, SampleConfigsParseAndRoundTrip) {
  int n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(SPYRO_CONFIG_DIR)) {
    if (entry.path().extension() != ".yaml") continue;
    ++n;
    const RunConfig c = load_config(entry.path().string());
    EXPECT_EQ(parse_config_string(to_yaml(c)), c) << entry.path();
  }
  EXPECT_GE(n, 3);
}

TEST(Config, UnknownKeysReportTheirLine) {
  const std::string e = error_of("seed: 1\ngrid:\n  space: so3\n  spcae: se3\n");
  EXPECT_NE(e.find("run.yaml:4:"), std::string::npos) << e;
  EXPECT_NE(e.find("spcae"), std::string::npos) << e;
  EXPECT_NE(error_of("seed: 1\nmodel:\n  modes:\n    - {kappa: 3, colour: red}\n").find("run.yaml:4:"), std::string::npos);
  EXPECT_NE(error_of("bogus: 1\n").find("run.yaml:1:"), std::string::npos);
}

TEST(Config, MalformedValuesReportTheirLine) {
  EXPECT_NE(error_of("inference:\n  k: many\n").find("run.yaml:2:"), std::string::npos);
  EXPECT_NE(error_of("grid:\n  t_hat: [0, 1]\n").find("run.yaml:2:"), std::string::npos);
  EXPECT_NE(error_of("model:\n  symmetry:\n    - [1, 0, 0]\n").find("run.yaml:3:"), std::string::npos);
  EXPECT_NE(error_of("grid:\n  space: se4\n").find("run.yaml:2:"), std::string::npos);
  EXPECT_NE(error_of("grid: [1, 2]\n").find("must be a mapping"), std::string::npos);
  EXPECT_NE(error_of("seed: 1\n  bad indent: [\n").find("run.yaml:"), std::string::npos);
}

TEST(Config, SemanticValidation) {
  EXPECT_FALSE(error_of("inference: {k: 0}\n").empty());
  EXPECT_FALSE(error_of("inference: {depth: 16}\n").empty());
  EXPECT_FALSE(error_of("grid: {space: se3}\ninference: {depth: 9}\n").empty());
  EXPECT_FALSE(error_of("training: {batch_size: 0}\n").empty());
  EXPECT_FALSE(error_of("model: {type: analytic, modes: []}\n").empty());
  EXPECT_FALSE(error_of("model: {keypoints: {source: fps}}\n").empty());
  EXPECT_FALSE(error_of("plot: {axis: [0, 0, 0]}\n").empty());
  EXPECT_TRUE(error_of("model: {type: uniform, modes: []}\n").empty());
}

TEST(Config, SeedDrivesTraining) {
  const RunConfig c = parse_config_string("seed: 42\ntraining: {iterations: 3}\n");
  EXPECT_EQ(c.training.seed, 42u);
  EXPECT_EQ(c.training.iterations, 3);
  EXPECT_FALSE(error_of("training: {seed: 1}\n").empty());
}

TEST(ConfigObjects, TargetFromModesAndSymmetry) {
  const RunConfig c = parse_config_string(
      "model:\n  modes:\n    - {rotation: [1, 0, 0, 0], kappa: 10, weight: 3}\n    - {rotation: [0, 1, 0, 0], kappa: 20}\n"
      "  symmetry:\n    - [0.7071067811865476, 0, 0, 0.7071067811865476]\n");
  const AnalyticPoseTarget t = make_target(c);
  ASSERT_EQ(t.modes().size(), 2u);
  EXPECT_NEAR(t.modes()[0].weight, 0.75, 1e-12);
  EXPECT_EQ(t.modes()[1].kappa, 20.0);
  EXPECT_EQ(t.symmetry_group().size(), 4u);
}

TEST(ConfigObjects, Se3Bounds) {
  const RunConfig det = parse_config_string("grid: {space: se3, t_hat: [0, 0, 2], diameter: 0.5}\n");
  EXPECT_NEAR(make_se3_space(det).position_grid().bounds().determinant(), 0.5 * 0.5 * 2.0, 1e-15);
  const RunConfig cube = parse_config_string("grid: {space: se3, bounds: cubic, side: 0.3}\n");
  EXPECT_NEAR(make_se3_space(cube).total_volume(), 0.027 * kPiSquared, 1e-15);
}

TEST(ConfigObjects, KeypointsAndWeights) {
  const std::string cloud = temp_path("cloud.xyz");
  {
    std::ofstream out(cloud);
    Rng rng = make_rng(8);
    for (int i = 0; i < 200; ++i) out << uniform01(rng) << ' ' << uniform01(rng) << ' ' << uniform01(rng) << '\n';
  }
  RunConfig c = parse_config_string("model:\n  type: keypoint\n  keypoints: {source: fps, path: " + cloud + ", count: 5}\n");
  EXPECT_EQ(make_keypoints(c).size(), 5u);
  c.model.keypoints.source = "file";
  EXPECT_EQ(make_keypoints(c).size(), 200u);
  c.model.keypoints.source = "cube";
  EXPECT_EQ(make_keypoints(c).size(), 16u);

  const AnalyticPoseTarget target = make_target(c);
  KeypointHead head = make_head(c, target, 3);
  head.weights(2).b = 1.5;
  head.weights(1).w[3] = -2.0;
  const std::string weights = temp_path("weights.yaml");
  save_weights(weights, head.all_weights());
  c.model.weights = weights;
  const KeypointHead loaded = make_head(c, target, 3);
  EXPECT_EQ(loaded.all_weights(), head.all_weights());
  EXPECT_THROW(make_head(c, target, 4), ConfigError);
  std::filesystem::remove(cloud);
  std::filesystem::remove(weights);
}
