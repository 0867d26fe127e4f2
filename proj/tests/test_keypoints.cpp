#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "spyro/keypoints.hpp"

namespace spyro {
namespace {

double min_pairwise(const std::vector<Eigen::Vector3d>& pts) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) m = std::min(m, (pts[i] - pts[j]).norm());
  return m;
}

TEST(Keypoints, FpsSinglePointIsFarthestFromCentroid) {
  const std::vector<Eigen::Vector3d> pts{{0, 0, 0}, {1, 0, 0}, {0, 3, 0}, {-1, -1, 0}};
  const auto out = fps_keypoints(pts, 1);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], Eigen::Vector3d(0, 3, 0));
}

TEST(Keypoints, FpsOnCubeCornersReturnsAllCorners) {
  auto corners = cube_keypoints(2.0);
  corners.resize(8);
  auto out = fps_keypoints(corners, 8);
  auto key = [](const Eigen::Vector3d& v) { return std::tuple(v.x(), v.y(), v.z()); };
  std::sort(out.begin(), out.end(), [&](auto& a, auto& b) { return key(a) < key(b); });
  std::sort(corners.begin(), corners.end(), [&](auto& a, auto& b) { return key(a) < key(b); });
  EXPECT_EQ(out, corners);
  // ties resolve to the lowest index: all corners are equidistant from the centroid
  EXPECT_EQ(fps_keypoints(cube_keypoints(2.0), 1)[0], cube_keypoints(2.0)[0]);
}

TEST(Keypoints, FpsSpreadBeatsRandomSubsets) {
  Rng rng = make_rng(51);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<Eigen::Vector3d> cloud;
    for (int i = 0; i < 1000; ++i) cloud.emplace_back(uniform01(rng), uniform01(rng), 0.3 * uniform01(rng));
    const double fps = min_pairwise(fps_keypoints(cloud, 16));
    for (int s = 0; s < 10; ++s) {
      std::vector<Eigen::Vector3d> subset;
      std::vector<CellIndex> idx;
      while (subset.size() < 16) {
        const CellIndex i = uniform_index(rng, cloud.size());
        if (std::find(idx.begin(), idx.end(), i) != idx.end()) continue;
        idx.push_back(i);
        subset.push_back(cloud[i]);
      }
      EXPECT_GE(fps, min_pairwise(subset));
    }
  }
}

TEST(Keypoints, FpsRejectsBadCounts) {
  const std::vector<Eigen::Vector3d> pts{{0, 0, 0}};
  EXPECT_THROW(fps_keypoints(pts, 2), ConfigError);
  EXPECT_THROW(fps_keypoints(pts, 0), ConfigError);
}

TEST(Keypoints, CubeKeypoints) {
  const auto kp = cube_keypoints(0.2);
  ASSERT_EQ(kp.size(), 16u);
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  double max_coord = 0.0;
  for (const auto& p : kp) {
    sum += p;
    max_coord = std::max(max_coord, p.cwiseAbs().maxCoeff());
  }
  EXPECT_LT(sum.norm(), 1e-15);
  EXPECT_DOUBLE_EQ(max_coord, 0.1);
  EXPECT_THROW(cube_keypoints(0.0), ConfigError);
}

TEST(Keypoints, LoadXyz) {
  const std::string path = ::testing::TempDir() + "/cloud.xyz";
  {
    std::ofstream out(path);
    out << "# header\n0 0 1\n\n1.5 -2 3  # trailing\n";
  }
  const auto pts = load_xyz(path);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[1], Eigen::Vector3d(1.5, -2, 3));
  {
    std::ofstream out(path);
    out << "1 2\n";
  }
  EXPECT_THROW(load_xyz(path), ConfigError);
  std::remove(path.c_str());
}

TEST(Projection, PinholeGeometry) {
  const CameraIntrinsics k{600.0, 550.0, 320.0, 240.0, 640, 480};
  const Projection c = project_point({0, 0, 2.0}, k);
  EXPECT_TRUE(c.in_image);
  EXPECT_EQ(c.uv, Eigen::Vector2d(320.0, 240.0));
  const Projection near = project_point({0.1, 0.05, 1.0}, k), far = project_point({0.1, 0.05, 2.0}, k);
  EXPECT_NEAR((far.uv - Eigen::Vector2d(320, 240)).norm() * 2.0, (near.uv - Eigen::Vector2d(320, 240)).norm(), 1e-9);
  // identity rotation, translation (0.1, 0, 1): point (0.05, -0.02, 0.25) → X=0.15, Y=−0.02, Z=1.25
  const Pose pose{UnitQuaternion::identity(), {0.1, 0.0, 1.0}};
  const std::vector<Eigen::Vector3d> pts{{0.05, -0.02, 0.25}};
  const auto p = project(pose, k, pts);
  EXPECT_NEAR(p[0].uv.x(), 600.0 * 0.15 / 1.25 + 320.0, 1e-12);
  EXPECT_NEAR(p[0].uv.y(), 550.0 * -0.02 / 1.25 + 240.0, 1e-12);
  EXPECT_FALSE(project_point({0, 0, -1}, k).in_image);
  EXPECT_FALSE(project_point({0, 0, 0}, k).in_image);
  EXPECT_FALSE(project_point({2.0, 0, 1}, k).in_image);
  const CameraIntrinsics edge{1.0, 1.0, 0.0, 0.0, 10, 10};
  EXPECT_TRUE(project_point({0, 0, 1}, edge).in_image);
  EXPECT_FALSE(project_point({10, 0, 1}, edge).in_image);
}

FeatureMap random_map(int h, int w, int c, Rng& rng) {
  FeatureMap m(h, w, c);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u)
      for (int ch = 0; ch < c; ++ch) m.at(v, u, ch) = standard_normal(rng);
  return m;
}

TEST(FeatureMap, BilinearSampling) {
  Rng rng = make_rng(52);
  const FeatureMap m = random_map(6, 7, 3, rng);
  std::vector<double> out(3);
  m.sample({4.0, 2.0}, out);
  for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(out[ch], m.at(2, 4, ch));
  m.sample({4.5, 2.0}, out);
  for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(out[ch], 0.5 * (m.at(2, 4, ch) + m.at(2, 5, ch)), 1e-15);
  m.sample({4.0, 2.5}, out);
  for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(out[ch], 0.5 * (m.at(2, 4, ch) + m.at(3, 4, ch)), 1e-15);
  m.sample({6.7, 5.9}, out);  // past the last pixel center: clamps to the corner
  for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(out[ch], m.at(5, 6, ch));

  FeatureMap constant(5, 5, 2);
  for (int v = 0; v < 5; ++v)
    for (int u = 0; u < 5; ++u) constant.at(v, u, 0) = constant.at(v, u, 1) = 0.7;
  for (int i = 0; i < 100; ++i) {
    constant.sample({5 * uniform01(rng), 5 * uniform01(rng)}, out);
    EXPECT_NEAR(out[0], 0.7, 1e-15);
    EXPECT_NEAR(out[1], 0.7, 1e-15);
  }
}

KeypointHead random_head(Rng& rng, int levels = 3) {
  const CameraIntrinsics k{120.0, 120.0, 32.0, 32.0, 64, 64};
  KeypointHead head(cube_keypoints(0.1), k, random_map(64, 64, 3, rng), levels);
  for (int l = 0; l < levels; ++l) {
    auto& w = head.weights(l);
    for (int i = 0; i < w.w.size(); ++i) w.w[i] = standard_normal(rng);
    w.b = standard_normal(rng);
  }
  return head;
}

Pose random_pose(Rng& rng) {
  return Pose{UnitQuaternion::random(rng), Eigen::Vector3d(0.05 * (uniform01(rng) - 0.5), 0.05 * (uniform01(rng) - 0.5), 0.35)};
}

TEST(KeypointHead, ZeroWeightsGiveEqualScores) {
  Rng rng = make_rng(53);
  const CameraIntrinsics k{120.0, 120.0, 32.0, 32.0, 64, 64};
  const KeypointHead head(cube_keypoints(0.1), k, random_map(64, 64, 3, rng), 2);
  const double s0 = head.score(1, random_pose(rng));
  for (int i = 0; i < 20; ++i) EXPECT_EQ(head.score(1, random_pose(rng)), s0);
  EXPECT_EQ(head.feature_dim(), 48);
  EXPECT_THROW(head.score(2, Pose{}), std::domain_error);
}

TEST(KeypointHead, GradientMatchesFiniteDifferences) {
  Rng rng = make_rng(54);
  for (int trial = 0; trial < 100; ++trial) {
    KeypointHead head = random_head(rng);
    const Pose x = random_pose(rng);
    const int level = static_cast<int>(uniform_index(rng, 3));
    std::vector<double> phi(head.feature_dim());
    head.features(x, phi);
    const int i = static_cast<int>(uniform_index(rng, head.feature_dim()));
    const double h = 1e-4;
    double& w = head.weights(level).w[i];
    const double w0 = w;
    w = w0 + h;
    const double up = head.score(level, x);
    w = w0 - h;
    const double down = head.score(level, x);
    w = w0;
    const double fd = (up - down) / (2 * h);
    EXPECT_NEAR(fd, phi[i], 1e-6 * std::max(1.0, std::abs(phi[i])));
    head.weights(level).b += h;
    const double ub = head.score(level, x);
    head.weights(level).b -= 2 * h;
    EXPECT_NEAR((ub - head.score(level, x)) / (2 * h), 1.0, 1e-6);
  }
}

TEST(KeypointHead, SentinelIffOutOfImage) {
  Rng rng = make_rng(55);
  const KeypointHead head = random_head(rng);
  std::vector<double> phi(head.feature_dim());
  for (int t = 0; t < 200; ++t) {
    Pose x = random_pose(rng);
    x.translation.x() += 0.4 * (uniform01(rng) - 0.5);  // pushes some keypoints off the image
    head.features(x, phi);
    const auto proj = project(x, head.intrinsics(), head.keypoints());
    for (int i = 0; i < head.n_keypoints(); ++i) {
      bool is_sentinel = true;
      for (int c = 0; c < head.channels(); ++c) is_sentinel = is_sentinel && phi[i * head.channels() + c] == head.sentinel()[c];
      EXPECT_EQ(is_sentinel, !proj[i].in_image);
    }
  }
}

TEST(KeypointHead, TranslationEquivariantAtPixelGranularity) {
  // Shifting the principal point and the feature map content by the same whole
  // number of pixels moves every projection with the image.
  Rng rng = make_rng(56);
  const CameraIntrinsics k{120.0, 120.0, 28.0, 30.0, 64, 64};
  const FeatureMap base = random_map(64, 64, 2, rng);
  const int du = 3, dv = -2;
  FeatureMap shifted(64, 64, 2);
  for (int v = 0; v < 64; ++v)
    for (int u = 0; u < 64; ++u)
      for (int c = 0; c < 2; ++c) {
        const int su = std::clamp(u - du, 0, 63), sv = std::clamp(v - dv, 0, 63);
        shifted.at(v, u, c) = base.at(sv, su, c);
      }
  CameraIntrinsics k2 = k;
  k2.cx += du;
  k2.cy += dv;
  KeypointHead a(cube_keypoints(0.08), k, base, 1), b(cube_keypoints(0.08), k2, shifted, 1);
  for (int i = 0; i < a.feature_dim(); ++i) a.weights(0).w[i] = b.weights(0).w[i] = standard_normal(rng);
  for (int t = 0; t < 200; ++t) {
    const Pose x{UnitQuaternion::random(rng), Eigen::Vector3d(0.01 * (uniform01(rng) - 0.5), 0.01 * (uniform01(rng) - 0.5), 0.4)};
    EXPECT_NEAR(a.score(0, x), b.score(0, x), 1e-12);
  }
}

TEST(KeypointHead, ScorerAdaptersAndFusion) {
  Rng rng = make_rng(57);
  const KeypointHead head = random_head(rng);
  const Eigen::Vector3d t(0.0, 0.0, 0.35);
  const KeypointScorer<UnitQuaternion> rot(head, t);
  const KeypointScorer<Pose> full(head);
  EXPECT_EQ(rot.max_recursion(), 2);
  const UnitQuaternion q = UnitQuaternion::random(rng);
  std::vector<double> a(1), b(1);
  rot.score(1, std::span<const UnitQuaternion>(&q, 1), a);
  const Pose x{q, t};
  full.score(1, std::span<const Pose>(&x, 1), b);
  EXPECT_EQ(a[0], b[0]);

  const Pose extr{UnitQuaternion::random(rng), {0.0, 0.1, 0.0}};
  const FusedScorer one({{&full, extr}});
  const FusedScorer twice({{&full, extr}, {&full, extr}});
  std::vector<Pose> poses;
  for (int i = 0; i < 50; ++i) poses.push_back(random_pose(rng));
  std::vector<double> s1(poses.size()), s2(poses.size());
  one.score(1, poses, s1);
  twice.score(1, poses, s2);
  EXPECT_EQ(s1, s2);
}

TEST(SyntheticFeatureMap, DescriptorPeaksAtModeProjections) {
  const UnitQuaternion r = UnitQuaternion::from_axis_angle({0.3, 1, 0}, 0.7);
  const Eigen::Vector3d t(0.0, 0.0, 0.4);
  const AnalyticPoseTarget target({TargetMode{r, 100.0, t, 0.0, 1.0}});
  const CameraIntrinsics k{150.0, 150.0, 48.0, 48.0, 96, 96};
  const auto kp = cube_keypoints(0.1);
  SyntheticMapOptions opt;
  opt.seed = 9;
  const FeatureMap map = synthetic_feature_map(target, kp, k, opt, t);
  EXPECT_EQ(map.channels(), opt.descriptor_dim * 2 + opt.noise_channels);
  const auto desc = keypoint_descriptors(16, opt.descriptor_dim, opt.seed);
  const auto proj = project(Pose{r, t}, k, kp);
  std::vector<double> f(map.channels());
  // corners of the outer cube are well separated; the fine-scale block is dominated by the own descriptor
  for (int i = 0; i < 8; ++i) {
    ASSERT_TRUE(proj[i].in_image);
    map.sample(proj[i].uv, f);
    const Eigen::Map<const Eigen::VectorXd> fine(f.data(), opt.descriptor_dim);
    EXPECT_GT(fine.dot(desc[i]) / fine.norm(), 0.8) << i;
  }
}

}  // namespace
}  // namespace spyro
